#include "cdt/training.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include "cdt/rng.hpp"

namespace cdt {

namespace {
constexpr uint64_t kEpochStream = 0x45504fULL;
}

double diffusion_loss(const VideoTensor& v0, Timestep t, const Tensor<float>& eps, const DenoiseFn& predictor,
                      const NoiseSchedule& sched) {
  require_same_shape(v0.data, eps, "diffusion_loss");
  sched.check_timestep(t);
  const VideoTensor vt(q_sample(v0.data, t, eps, sched), v0.fps);
  const VideoTensor x0 = predictor(vt, t);
  require_same_shape(x0.data, v0.data, "diffusion_loss");
  double acc = 0.0;
  for (int64_t i = 0; i < v0.data.numel(); ++i) {
    const double d = static_cast<double>(v0.data[i]) - static_cast<double>(x0.data[i]);
    acc += d * d;
  }
  const double loss = snr_weight(t, sched) * acc / static_cast<double>(v0.data.numel());
  if (!std::isfinite(loss)) throw NumericError("non-finite diffusion loss at t=" + std::to_string(t));
  return loss;
}

double diffusion_loss(const VideoTensor& v0, const Latent& z, Timestep t, const Tensor<float>& eps,
                      const Tokenizer<float>& model) {
  const DenoiseFn f = [&](const VideoTensor& v, Timestep tt) { return denoise(v, z, tt, model); };
  return diffusion_loss(v0, t, eps, f, model.denoiser().schedule());
}

template <typename T>
LossTerms<T> total_loss(const Tokenizer<T>& model, const Tensor<T>& v0, Timestep t, const Tensor<T>& eps,
                        const Tensor<T>& latent_eps, const LossWeights& w, const PerceptualNet* net) {
  const NoiseSchedule& sched = model.denoiser().schedule();
  sched.check_timestep(t);
  require_same_shape(v0, eps, "total_loss");
  if (w.lpips > 0.0 && net == nullptr) throw ConfigError("perceptual weight > 0 but no perceptual weights loaded");

  const Var<T> x(v0);
  auto [mean, logvar] = model.encoder().forward(x);
  const Var<T> z = latent_eps.empty() ? mean : ops::reparameterize(mean, logvar, latent_eps);
  const Var<T> vt(q_sample(v0, t, eps, sched));

  LossTerms<T> terms;
  terms.x0_hat = model.denoiser().forward(vt, z, t);
  terms.diffusion = ops::scale(ops::mse(terms.x0_hat, x), static_cast<T>(snr_weight(t, sched)));
  terms.kl = ops::kl_standard_normal(mean, logvar);
  terms.total = ops::axpby(T(1), terms.diffusion, static_cast<T>(w.kl), terms.kl);
  if (w.lpips > 0.0) {
    terms.lpips = perceptual_distance(*net, x, terms.x0_hat);
    terms.total = ops::axpby(T(1), terms.total, static_cast<T>(w.lpips), terms.lpips);
  }
  return terms;
}

template LossTerms<float> total_loss(const Tokenizer<float>&, const Tensor<float>&, Timestep, const Tensor<float>&,
                                     const Tensor<float>&, const LossWeights&, const PerceptualNet*);
template LossTerms<double> total_loss(const Tokenizer<double>&, const Tensor<double>&, Timestep,
                                      const Tensor<double>&, const Tensor<double>&, const LossWeights&,
                                      const PerceptualNet*);

namespace {

Shape latent_shape_cf(const Tensor<float>& v0_cf, int latent_dim) {
  const LatentGrid g = latent_grid(v0_cf.dim(1), v0_cf.dim(2), v0_cf.dim(3));
  return {latent_dim, g.frames, g.height, g.width};
}

}  // namespace

LossBreakdown total_loss(const VideoTensor& v0, const Tokenizer<float>& model, Timestep t, const Tensor<float>& eps,
                         std::optional<uint64_t> latent_seed, const LossWeights& w, const PerceptualNet* net) {
  v0.validate();
  require_same_shape(v0.data, eps, "total_loss");
  NoGradGuard ng;
  const Tensor<float> x = to_channels_first(v0.data);
  Tensor<float> latent_eps;
  if (latent_seed) latent_eps = standard_normal<float>(latent_shape_cf(x, model.config().latent_dim), *latent_seed);
  const LossTerms<float> terms = total_loss(model, x, t, to_channels_first(eps), latent_eps, w, net);
  LossBreakdown b;
  b.diffusion = terms.diffusion.item();
  b.kl = terms.kl.item();
  b.lpips = terms.lpips.defined() ? terms.lpips.item() : 0.0;
  b.total = terms.total.item();
  return b;
}

void TrainConfig::validate() const {
  if (total_steps < 0) throw ConfigError("train.total_steps must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (min_lr_ratio < 0.0 || min_lr_ratio > 1.0) throw ConfigError("train.min_lr_ratio must be in [0, 1]");
  if (warmup_steps < 0 || stage2_step < 0) throw ConfigError("train step counts must be >= 0");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
  if (image_probability < 0.0 || image_probability > 1.0) throw ConfigError("train.image_probability must be in [0, 1]");
  for (const StageSpec* s : {&stage1, &stage2}) {
    if (s->frames < 0 || (s->frames > 0 && (s->frames - 1) % kTemporalCompression != 0)) {
      throw ConfigError("stage frame counts must be 1 + 4k");
    }
    if (s->downscale < 1) throw ConfigError("stage downscale must be >= 1");
  }
  if (log_every < 1) throw ConfigError("train.log_every must be >= 1");
  if (checkpoint_every < 0 || eval_every < 0 || eval_steps < 1) throw ConfigError("invalid train cadence settings");
}

void adam_update(ParameterSet<float>& params, AdamState& state, double lr, const AdamOptions& opt) {
  auto& entries = params.entries();
  if (state.m.empty()) {
    for (const auto& e : entries) {
      state.m.emplace_back(e.var.shape());
      state.v.emplace_back(e.var.shape());
    }
  }
  if (state.m.size() != entries.size()) throw ConfigError("optimizer state does not match the parameter set");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Var<float>& p = entries[i].var;
    const Tensor<float>& g = p.grad();
    if (g.numel() != p.numel()) continue;
    Tensor<float>& w = p.mutable_value();
    Tensor<float>& m = state.m[i];
    Tensor<float>& v = state.v[i];
    for (int64_t k = 0; k < w.numel(); ++k) {
      const double gk = g[k];
      const double mk = opt.beta1 * m[k] + (1.0 - opt.beta1) * gk;
      const double vk = opt.beta2 * v[k] + (1.0 - opt.beta2) * gk * gk;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      w[k] = static_cast<float>(w[k] - lr * (mk / bc1) / (std::sqrt(vk / bc2) + opt.eps));
    }
  }
}

double learning_rate_at(const TrainConfig& cfg, int step) {
  if (cfg.warmup_steps > 0 && step <= cfg.warmup_steps) {
    return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const int span = std::max(1, cfg.total_steps - cfg.warmup_steps);
  const double p = std::clamp(static_cast<double>(step - cfg.warmup_steps) / span, 0.0, 1.0);
  const double c = 0.5 * (1.0 + std::cos(std::numbers::pi * p));
  return cfg.learning_rate * (cfg.min_lr_ratio + (1.0 - cfg.min_lr_ratio) * c);
}

int stage_at(const TrainConfig& cfg, int step) { return step >= cfg.stage2_step ? 2 : 1; }

double eta_at(const TrainConfig& cfg, const ModelConfig& model, int step) {
  return cfg.lpips_enabled && stage_at(cfg, step) == 2 ? model.lpips_weight : 0.0;
}

VideoTensor shape_for_stage(const VideoTensor& clip, const StageSpec& spec) {
  Tensor<float> x = clip.data;
  if (spec.frames > 0 && spec.frames < clip.frames()) {
    Shape s = x.shape();
    s[0] = spec.frames;
    x = Tensor<float>(s, std::span<const float>(x.data(), static_cast<std::size_t>(shape_numel(s))));
  }
  if (spec.downscale > 1) {
    const int d = spec.downscale;
    const int64_t nt = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (h % d != 0 || w % d != 0) throw ShapeError("stage downscale does not divide the clip size");
    const int64_t oh = h / d, ow = w / d;
    Tensor<float> y({nt, oh, ow, 3});
    const double inv = 1.0 / (d * d);
    for (int64_t t = 0; t < nt; ++t)
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j)
          for (int c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (int a = 0; a < d; ++a)
              for (int b = 0; b < d; ++b) acc += x[((t * h + i * d + a) * w + j * d + b) * 3 + c];
            y[((t * oh + i) * ow + j) * 3 + c] = static_cast<float>(acc * inv);
          }
    x = std::move(y);
  }
  VideoTensor out(std::move(x), clip.fps);
  out.validate();
  return out;
}

std::vector<std::size_t> batch_indices(const TrainConfig& cfg, int step, std::size_t dataset_size) {
  if (dataset_size == 0) throw DataError("training dataset is empty");
  std::vector<std::size_t> out;
  std::vector<std::size_t> perm(dataset_size);
  int64_t cached_epoch = -1;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const auto s = static_cast<uint64_t>(step - 1) * static_cast<uint64_t>(cfg.batch_size) + static_cast<uint64_t>(b);
    const auto epoch = static_cast<int64_t>(s / dataset_size);
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng rng(derive_seed(cfg.seed, {kEpochStream, static_cast<uint64_t>(epoch)}));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[s % dataset_size]);
  }
  return out;
}

namespace {

void check_term(const Var<float>& v, const char* name, int step, Timestep t) {
  if (v.defined() && !std::isfinite(v.item())) {
    throw NumericError(std::string("non-finite ") + name + " loss at step " + std::to_string(step) + " (t=" +
                       std::to_string(t) + ")");
  }
}

}  // namespace

StepRecord train_step(Tokenizer<float>& model, TrainState& state, const std::vector<VideoTensor>& batch,
                      const TrainConfig& cfg, const PerceptualNet* net) {
  if (batch.empty()) throw DataError("empty training batch");
  StepRecord rec;
  rec.step = state.step + 1;
  rec.stage = stage_at(cfg, rec.step);
  rec.eta = eta_at(cfg, model.config(), rec.step);
  rec.lr = learning_rate_at(cfg, rec.step);
  const LossWeights w{model.config().kl_weight, rec.eta};
  const StageSpec& spec = rec.stage == 1 ? cfg.stage1 : cfg.stage2;
  const int T = model.config().timesteps;
  const float inv_b = 1.0f / static_cast<float>(batch.size());

  auto& params = model.params();
  params.zero_grad();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const uint64_t base = derive_seed(cfg.seed, {static_cast<uint64_t>(rec.step), static_cast<uint64_t>(b)});
    Rng rng(base);
    VideoTensor clip = shape_for_stage(batch[b], spec);
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.image_probability) {
      clip = shape_for_stage(clip, {1, 1});
    }
    const Timestep t = std::uniform_int_distribution<int>(1, T)(rng);
    const Tensor<float> v0 = to_channels_first(clip.data);
    const Tensor<float> eps = standard_normal<float>(v0.shape(), derive_seed(base, {1}));
    const Tensor<float> zeps = standard_normal<float>(latent_shape_cf(v0, model.config().latent_dim), derive_seed(base, {2}));
    const LossTerms<float> terms = total_loss(model, v0, t, eps, zeps, w, net);
    check_term(terms.diffusion, "diffusion", rec.step, t);
    check_term(terms.kl, "kl", rec.step, t);
    check_term(terms.lpips, "lpips", rec.step, t);
    rec.loss.diffusion += terms.diffusion.item() * inv_b;
    rec.loss.kl += terms.kl.item() * inv_b;
    rec.loss.lpips += (terms.lpips.defined() ? terms.lpips.item() : 0.0) * inv_b;
    rec.loss.total += terms.total.item() * inv_b;
    backward(ops::scale(terms.total, inv_b));
  }

  double sq = 0.0;
  for (const auto& e : params.entries()) {
    const Tensor<float>& g = e.var.grad();
    double s = 0.0;
    for (int64_t k = 0; k < g.numel(); ++k) s += static_cast<double>(g[k]) * g[k];
    if (!std::isfinite(s)) throw NumericError("non-finite gradient in " + e.name + " at step " + std::to_string(rec.step));
    sq += s;
  }
  rec.grad_norm = std::sqrt(sq);
  if (cfg.grad_clip > 0.0 && rec.grad_norm > cfg.grad_clip) {
    const auto f = static_cast<float>(cfg.grad_clip / rec.grad_norm);
    for (auto& e : params.entries()) {
      Tensor<float>& g = e.var.node()->grad;
      for (int64_t k = 0; k < g.numel(); ++k) g[k] *= f;
    }
  }
  adam_update(params, state.adam, rec.lr);
  state.step = rec.step;
  state.loss_ema = state.step == 1 ? rec.loss.diffusion : 0.98 * state.loss_ema + 0.02 * rec.loss.diffusion;
  return rec;
}

void write_step_record(std::ostream& out, const StepRecord& r) {
  const auto old = out.precision(8);
  out << "record=train step=" << r.step << " stage=" << r.stage << " lr=" << r.lr << " eta=" << r.eta
      << " diffusion=" << r.loss.diffusion << " kl=" << r.loss.kl << " lpips=" << r.loss.lpips
      << " total=" << r.loss.total << " grad_norm=" << r.grad_norm << '\n';
  out.precision(old);
}

void train_loop(Tokenizer<float>& model, TrainState& state, const std::vector<VideoTensor>& dataset,
                const TrainConfig& cfg, const PerceptualNet* net, std::ostream& log, const TrainHooks& hooks) {
  cfg.validate();
  if (dataset.empty()) throw DataError("training dataset is empty");
  if (cfg.lpips_enabled && model.config().lpips_weight > 0.0 && net == nullptr) {
    throw ConfigError("perceptual weight > 0 but no perceptual weights loaded");
  }
  while (state.step < cfg.total_steps) {
    const int step = state.step + 1;
    if (step > 1 && step == cfg.stage2_step) {
      log << "record=stage step=" << step << " stage=2 eta=" << eta_at(cfg, model.config(), step) << '\n';
    }
    std::vector<VideoTensor> batch;
    for (std::size_t i : batch_indices(cfg, step, dataset.size())) batch.push_back(dataset[i]);
    const StepRecord rec = train_step(model, state, batch, cfg, net);
    if (step == 1 || step % cfg.log_every == 0 || step == cfg.total_steps) {
      write_step_record(log, rec);
      log.flush();
    }
    if (hooks.on_step) hooks.on_step(rec);
    if (hooks.on_eval && cfg.eval_every > 0 && step % cfg.eval_every == 0) hooks.on_eval(step);
    if (hooks.on_checkpoint && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      hooks.on_checkpoint(step, state);
    }
  }
}

}  // namespace cdt
