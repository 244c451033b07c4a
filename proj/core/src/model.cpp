#include "cdt/model.hpp"

#include <cmath>

#include "cdt/rng.hpp"

namespace cdt {

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.latent_dim = 16;
  c.base_channels = 16;
  c.channel_multipliers = {1, 2, 4, 4};
  c.encoder_base_channels = 16;
  c.encoder_channel_multipliers = {1, 2, 4, 4};
  c.timesteps = 1024;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.latent_dim = 4;
  c.base_channels = 4;
  c.channel_multipliers = {1, 2, 2, 2};
  c.encoder_base_channels = 4;
  c.encoder_channel_multipliers = {1, 1, 2, 2};
  c.norm_groups = 2;
  c.timesteps = 1024;
  return c;
}

void ModelConfig::validate() const {
  if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (injection_count < 1 || injection_count > 4) throw ConfigError("injection_count must be in [1, 4]");
  if (timesteps < 1) throw ConfigError("timesteps must be >= 1");
  if (base_channels < 1 || encoder_base_channels < 1) throw ConfigError("channel widths must be positive");
  if (channel_multipliers.size() != 4 || encoder_channel_multipliers.size() != 4) {
    throw ConfigError("channel multiplier lists must have 4 entries");
  }
  for (int m : channel_multipliers)
    if (m < 1) throw ConfigError("channel multipliers must be positive");
  for (int m : encoder_channel_multipliers)
    if (m < 1) throw ConfigError("channel multipliers must be positive");
  if (norm_groups < 1) throw ConfigError("norm_groups must be >= 1");
  if (!(kl_weight >= 0.0) || !(lpips_weight >= 0.0)) throw ConfigError("loss weights must be non-negative");
}

std::vector<int> ModelConfig::decoder_widths() const {
  std::vector<int> w;
  for (int m : channel_multipliers) w.push_back(base_channels * m);
  return w;
}

std::vector<int> ModelConfig::encoder_widths() const {
  std::vector<int> w;
  for (int m : encoder_channel_multipliers) w.push_back(encoder_base_channels * m);
  return w;
}

namespace {
const ModelConfig& validated(const ModelConfig& c) {
  c.validate();
  return c;
}
}  // namespace

template <typename T>
Encoder<T>::Encoder(const ModelConfig& cfg, const ModuleBuilder<T>& b) : latent_dim_(cfg.latent_dim) {
  const std::vector<int> e = cfg.encoder_widths();
  const int g = cfg.norm_groups;
  conv_in_ = Conv3d<T>(b.sub("conv_in"), 3, e[0], {});
  res0_ = ResBlock<T>(b.sub("res0"), e[0], e[0], 0, g);
  down_spatial_ = Downsample<T>(b.sub("down0"), e[0], e[1], false);
  res1_ = ResBlock<T>(b.sub("res1"), e[1], e[1], 0, g);
  down1_ = Downsample<T>(b.sub("down1"), e[1], e[2], true);
  res2_ = ResBlock<T>(b.sub("res2"), e[2], e[2], 0, g);
  down2_ = Downsample<T>(b.sub("down2"), e[2], e[3], true);
  res3_ = ResBlock<T>(b.sub("res3"), e[3], e[3], 0, g);
  norm_out_ = GroupNorm<T>(b.sub("norm_out"), e[3], g);
  conv_out_ = Conv3d<T>(b.sub("conv_out"), e[3], 2 * cfg.latent_dim, {});
}

template <typename T>
std::pair<Var<T>, Var<T>> Encoder<T>::forward(const Var<T>& video, CacheState<T>* cache) const {
  if (video.value().rank() != 4 || video.dim(0) != 3) {
    throw ShapeError("encoder expects (3, T, H, W), got " + shape_str(video.shape()));
  }
  const Var<T> none;
  Var<T> h = conv_in_.forward(video, cache);
  h = res0_.forward(h, none, cache);
  h = down_spatial_.forward(h, cache);
  h = res1_.forward(h, none, cache);
  h = down1_.forward(h, cache);
  h = res2_.forward(h, none, cache);
  h = down2_.forward(h, cache);
  h = res3_.forward(h, none, cache);
  h = conv_out_.forward(ops::silu(norm_out_.forward(h)), cache);
  Var<T> mean = ops::slice(h, 0, 0, latent_dim_);
  Var<T> logvar = ops::clamp(ops::slice(h, 0, latent_dim_, 2 * latent_dim_), static_cast<T>(kLogvarMin),
                             static_cast<T>(kLogvarMax));
  return {mean, logvar};
}

template <typename T>
Denoiser<T>::Denoiser(const ModelConfig& cfg, const ModuleBuilder<T>& b)
    : widths_(cfg.decoder_widths()), injection_count_(cfg.injection_count), schedule_(cfg.timesteps) {
  const std::vector<int>& d = widths_;
  const int g = cfg.norm_groups;
  const int sin_dim = std::max(4, d[0] + d[0] % 2);
  const int temb_dim = 4 * d[0];
  temb_ = TimestepEmbedding<T>(b.sub("temb"), sin_dim, temb_dim, cfg.timesteps);
  conv_in_ = Conv3d<T>(b.sub("conv_in"), 3, d[0], {});

  // Stage i maps d[i-1] -> d[i] and downsamples: spatial, spatio-temporal, spatio-temporal, none.
  int in = d[0];
  for (int i = 0; i < kStages; ++i) {
    const std::string s = "down" + std::to_string(i);
    down_res_.emplace_back(b.sub(s + ".res"), in, d[i], temb_dim, g);
    if (i < kStages - 1) down_.emplace_back(b.sub(s + ".down"), d[i], d[i], i > 0);
    in = d[i];
  }
  mid_res1_ = ResBlock<T>(b.sub("mid.res1"), d[3], d[3], temb_dim, g);
  mid_attn_ = SpatialAttention<T>(b.sub("mid.attn"), d[3], g);
  mid_res2_ = ResBlock<T>(b.sub("mid.res2"), d[3], d[3], temb_dim, g);

  // Level i takes (h, skip_i) and returns d[i-1] channels, then upsamples to level i-1.
  in = d[3];
  for (int i = kStages - 1; i >= 0; --i) {
    const std::string s = "up" + std::to_string(i);
    const int out = i > 0 ? d[i - 1] : d[0];
    up_res_.emplace_back(b.sub(s + ".res"), in + d[i], out, temb_dim, g);
    if (i > 0) up_.emplace_back(b.sub(s + ".up"), out, out, i > 1, true);
    in = out;
  }
  norm_out_ = GroupNorm<T>(b.sub("norm_out"), d[0], g);
  conv_out_ = Conv3d<T>(b.sub("conv_out"), d[0], 3, {.zero_output = true});

  // Adapter: latent grid -> stage 3, then upsample through stages 2, 1, 0.
  adapter_in_ = Conv3d<T>(b.sub("adapter.a3"), cfg.latent_dim, d[2], {});
  adapter_up_.emplace_back(b.sub("adapter.a2"), d[2], d[1], true, true);
  adapter_up_.emplace_back(b.sub("adapter.a1"), d[1], d[0], true, true);
  adapter_up_.emplace_back(b.sub("adapter.a0"), d[0], d[0], false, true);
}

template <typename T>
std::vector<Var<T>> Denoiser<T>::condition_maps(const Var<T>& z, CacheState<T>* cache) const {
  if (z.value().rank() != 4) throw ShapeError("latent must be (c, t, h, w), got " + shape_str(z.shape()));
  std::vector<Var<T>> maps(kStages);
  maps[3] = adapter_in_.forward(z, cache);
  for (int i = 2; i >= 0; --i) maps[i] = adapter_up_[2 - i].forward(ops::silu(maps[i + 1]), cache);
  maps.resize(injection_count_);
  return maps;
}

template <typename T>
std::vector<Shape> Denoiser<T>::stage_input_shapes(int64_t frames, int64_t height, int64_t width) const {
  const LatentGrid g = latent_grid(frames, height, width);
  const int64_t f = frames - 1;
  const std::vector<int>& d = widths_;
  return {{d[0], frames, height, width},
          {d[0], frames, height / 2, width / 2},
          {d[1], 1 + f / 2, height / 4, width / 4},
          {d[2], g.frames, g.height, g.width}};
}

template <typename T>
Var<T> Denoiser<T>::predict(const Var<T>& v_t, const Var<T>& z, Timestep t, CacheState<T>* cache) const {
  schedule_.check_timestep(t);
  if (v_t.value().rank() != 4 || v_t.dim(0) != 3) {
    throw ShapeError("denoiser expects (3, T, H, W), got " + shape_str(v_t.shape()));
  }
  std::vector<Var<T>> cond = condition_maps(z, cache);
  const Var<T> temb = temb_.forward(t);

  Var<T> h = conv_in_.forward(v_t, cache);
  std::vector<Var<T>> skips;
  for (int i = 0; i < kStages; ++i) {
    if (i < injection_count_) {
      if (cond[i].shape() != h.shape()) {
        throw ShapeError("condition map " + std::to_string(i) + " is " + shape_str(cond[i].shape()) +
                         " but stage input is " + shape_str(h.shape()));
      }
      h = ops::add(h, cond[i]);
    }
    h = down_res_[i].forward(h, temb, cache);
    skips.push_back(h);
    if (i < kStages - 1) h = down_[i].forward(h, cache);
  }
  h = mid_res1_.forward(h, temb, cache);
  h = mid_attn_.forward(h);
  h = mid_res2_.forward(h, temb, cache);
  for (int k = 0; k < kStages; ++k) {
    const int i = kStages - 1 - k;
    h = up_res_[k].forward(ops::concat(h, skips[i], 0), temb, cache);
    if (i > 0) h = up_[k].forward(h, cache);
  }
  const Var<T> out = conv_out_.forward(ops::silu(norm_out_.forward(h)), cache);

  // The network output is read in velocity space; the clean clip follows in closed form.
  const double ab = schedule_.alpha_bar(t);
  return ops::axpby(static_cast<T>(std::sqrt(ab)), v_t, static_cast<T>(-std::sqrt(1.0 - ab)), out);
}

template <typename T>
Var<T> Denoiser<T>::forward(const Var<T>& v_t, const Var<T>& z, Timestep t, CacheState<T>* cache) const {
  if (cache == nullptr) {
    const LatentGrid g = latent_grid(v_t.dim(1), v_t.dim(2), v_t.dim(3));
    if (z.value().rank() != 4 || z.dim(1) != g.frames || z.dim(2) != g.height || z.dim(3) != g.width) {
      throw ShapeError("latent " + shape_str(z.shape()) + " does not match clip " + shape_str(v_t.shape()));
    }
    note_call();
  }
  return predict(v_t, z, t, cache);
}

template <typename T>
Tokenizer<T>::Tokenizer(const ModelConfig& cfg)
    : config_(validated(cfg)),
      encoder_(config_, ModuleBuilder<T>{&params_, &encoder_layout_, "encoder."}),
      denoiser_(config_, ModuleBuilder<T>{&params_, &decoder_layout_, "decoder."}) {
  params_.initialize(0, InitMode::kTraining);
}

template class Encoder<float>;
template class Encoder<double>;
template class Denoiser<float>;
template class Denoiser<double>;
template class Tokenizer<float>;
template class Tokenizer<double>;

namespace {

Tensor<float> check_video(const VideoTensor& v) {
  v.validate();
  return to_channels_first(v.data);
}

Tensor<float> check_latent(const Latent& z, const ModelConfig& cfg) {
  if (z.z.rank() != 4 || z.z.dim(3) != cfg.latent_dim) {
    throw ShapeError("latent must be (t, h, w, " + std::to_string(cfg.latent_dim) + "), got " + shape_str(z.z.shape()));
  }
  if (!all_finite(z.z)) throw NumericError("latent holds non-finite values");
  return to_channels_first(z.z);
}

}  // namespace

LatentPosterior encode(const VideoTensor& v0, const Tokenizer<float>& model) {
  NoGradGuard ng;
  const Var<float> x(check_video(v0));
  auto [mean, logvar] = model.encoder().forward(x);
  return {to_channels_last(mean.value()), to_channels_last(logvar.value())};
}

Latent sample_latent(const LatentPosterior& post, std::optional<uint64_t> seed) {
  require_same_shape(post.mean, post.logvar, "sample_latent");
  if (!seed) return {post.mean};
  const Tensor<float> eps = standard_normal<float>(post.mean.shape(), *seed);
  Tensor<float> z(post.mean.shape());
  for (int64_t i = 0; i < z.numel(); ++i) {
    z[i] = post.mean[i] + std::exp(0.5f * post.logvar[i]) * eps[i];
  }
  return {std::move(z)};
}

double kl_loss(const LatentPosterior& post) {
  require_same_shape(post.mean, post.logvar, "kl_loss");
  if (post.mean.numel() == 0) return 0.0;
  double acc = 0.0;
  for (int64_t i = 0; i < post.mean.numel(); ++i) {
    const double m = post.mean[i];
    const double lv = post.logvar[i];
    acc += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
  }
  return acc / static_cast<double>(post.mean.numel());
}

std::vector<Tensor<float>> condition_adapter(const Latent& z, const Tokenizer<float>& model) {
  NoGradGuard ng;
  const Var<float> zc(check_latent(z, model.config()));
  std::vector<Tensor<float>> out;
  for (const auto& m : model.denoiser().condition_maps(zc)) out.push_back(m.value());
  return out;
}

VideoTensor denoise(const VideoTensor& v_t, const Latent& z, Timestep t, const Tokenizer<float>& model) {
  NoGradGuard ng;
  const Var<float> x(check_video(v_t));
  const Var<float> zc(check_latent(z, model.config()));
  const Var<float> y = model.denoiser().forward(x, zc, t);
  return VideoTensor(to_channels_last(y.value()), v_t.fps);
}

}  // namespace cdt
