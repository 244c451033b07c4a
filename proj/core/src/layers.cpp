#include "cdt/layers.hpp"

#include <algorithm>
#include <cmath>

#include "cdt/rng.hpp"

namespace cdt {

template <typename T>
Var<T> ParameterSet<T>::create(std::string name, Shape shape, InitKind init, int64_t fan_in) {
  for (const auto& e : entries_)
    if (e.name == name) throw ConfigError("duplicate parameter name " + name);
  Var<T> v(Tensor<T>(std::move(shape)), true);
  entries_.push_back({std::move(name), v, init, std::max<int64_t>(fan_in, 1)});
  return v;
}

template <typename T>
int64_t ParameterSet<T>::count(std::string_view prefix) const {
  int64_t n = 0;
  for (const auto& e : entries_)
    if (std::string_view(e.name).substr(0, prefix.size()) == prefix) n += e.var.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

template <typename T>
void ParameterSet<T>::initialize(uint64_t seed, InitMode mode) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& e = entries_[i];
    Rng rng(derive_seed(seed, {static_cast<uint64_t>(i)}));
    Tensor<T>& w = e.var.mutable_value();
    const T bound = static_cast<T>(std::sqrt(3.0 / static_cast<double>(e.fan_in)));
    const bool randomized = mode == InitMode::kRandomized;
    switch (e.init) {
      case InitKind::kFanIn:
        w = uniform<T>(w.shape(), -bound, bound, rng);
        break;
      case InitKind::kZeroOutput:
        if (randomized) w = uniform<T>(w.shape(), -bound, bound, rng);
        else w.fill(T(0));
        break;
      case InitKind::kZero:
        if (randomized) w = uniform<T>(w.shape(), T(-0.1), T(0.1), rng);
        else w.fill(T(0));
        break;
      case InitKind::kOne:
        if (randomized) w = uniform<T>(w.shape(), T(0.9), T(1.1), rng);
        else w.fill(T(1));
        break;
    }
    e.var.zero_grad();
  }
}

template <typename T>
Conv3d<T>::Conv3d(const ModuleBuilder<T>& b, int in_channels, int out_channels, Options opt)
    : opt_(opt), out_channels_(out_channels) {
  if (opt.kernel != 1 && opt.kernel != 3) throw ConfigError("Conv3d supports kernel 1 or 3");
  const int k = opt.kernel;
  const int64_t fan_in = static_cast<int64_t>(in_channels) * k * k * k;
  weight_ = b.param("weight", {out_channels, in_channels, k, k, k},
                    opt.zero_output ? InitKind::kZeroOutput : InitKind::kFanIn, fan_in);
  bias_ = b.param("bias", {out_channels}, InitKind::kZero);
  if (k == 3) slot_ = b.slot("conv", opt.temporal_stride == 2 ? CacheKind::kTemporalDown : CacheKind::kCausalConv);
}

template <typename T>
Var<T> Conv3d<T>::forward(const Var<T>& x, CacheState<T>* cache) const {
  if (opt_.kernel == 1) return ops::conv3d(x, weight_, bias_, ops::ConvGeometry{});
  const int ss = opt_.spatial_stride;
  if (cache != nullptr) {
    if (opt_.temporal_stride == 2) return temporal_down_step(x, *cache, slot_, weight_, bias_, {ss, ss}, 1);
    return causal_conv_step(x, *cache, slot_, weight_, bias_, {ss, ss}, 1);
  }
  if (opt_.temporal_stride == 2 && x.dim(1) % 2 != 1) {
    throw ShapeError("temporal downsample needs 1 + 2k frames, got " + std::to_string(x.dim(1)));
  }
  ops::ConvGeometry g;
  g.stride = {opt_.temporal_stride, ss, ss};
  g.pad_front = {2, 1, 1};
  g.pad_back = {0, 1, 1};
  return ops::conv3d(x, weight_, bias_, g);
}

template <typename T>
GroupNorm<T>::GroupNorm(const ModuleBuilder<T>& b, int channels, int max_groups) {
  groups_ = std::min(max_groups, channels);
  while (channels % groups_ != 0) --groups_;
  gamma_ = b.param("gamma", {channels}, InitKind::kOne);
  beta_ = b.param("beta", {channels}, InitKind::kZero);
}

template <typename T>
Var<T> GroupNorm<T>::forward(const Var<T>& x) const {
  return ops::group_norm_frames(x, gamma_, beta_, groups_, static_cast<T>(1e-6));
}

template <typename T>
Linear<T>::Linear(const ModuleBuilder<T>& b, int in_features, int out_features) {
  weight_ = b.param("weight", {out_features, in_features}, InitKind::kFanIn, in_features);
  bias_ = b.param("bias", {out_features}, InitKind::kZero);
}

template <typename T>
Var<T> Linear<T>::forward(const Var<T>& x) const {
  return ops::linear(x, weight_, bias_);
}

template <typename T>
ResBlock<T>::ResBlock(const ModuleBuilder<T>& b, int in_channels, int out_channels, int temb_dim, int groups)
    : norm1_(b.sub("norm1"), in_channels, groups),
      norm2_(b.sub("norm2"), out_channels, groups),
      conv1_(b.sub("conv1"), in_channels, out_channels, {}),
      conv2_(b.sub("conv2"), out_channels, out_channels, {}) {
  if (temb_dim > 0) {
    temb_proj_ = Linear<T>(b.sub("temb_proj"), temb_dim, out_channels);
    has_temb_ = true;
  }
  if (in_channels != out_channels) {
    skip_ = Conv3d<T>(b.sub("skip"), in_channels, out_channels, {.kernel = 1});
    has_skip_ = true;
  }
}

template <typename T>
Var<T> ResBlock<T>::forward(const Var<T>& x, const Var<T>& temb, CacheState<T>* cache) const {
  Var<T> h = conv1_.forward(ops::silu(norm1_.forward(x)), cache);
  if (has_temb_) h = ops::add_channel_bias(h, temb_proj_.forward(ops::silu(temb)));
  h = conv2_.forward(ops::silu(norm2_.forward(h)), cache);
  const Var<T> residual = has_skip_ ? skip_.forward(x, cache) : x;
  return ops::add(residual, h);
}

template <typename T>
Downsample<T>::Downsample(const ModuleBuilder<T>& b, int in_channels, int out_channels, bool temporal)
    : conv_(b, in_channels, out_channels, {.kernel = 3, .temporal_stride = temporal ? 2 : 1, .spatial_stride = 2}) {}

template <typename T>
Upsample<T>::Upsample(const ModuleBuilder<T>& b, int in_channels, int out_channels, bool temporal, bool spatial)
    : temporal_(temporal), spatial_(spatial) {
  if (temporal) slot_ = b.slot("repeat", CacheKind::kTemporalUp);
  conv_ = Conv3d<T>(b, in_channels, out_channels, {});
}

template <typename T>
Var<T> Upsample<T>::forward(const Var<T>& x, CacheState<T>* cache) const {
  bool keep_first = true;
  if (temporal_ && cache != nullptr) keep_first = temporal_up_step(*cache, slot_);
  const Var<T> up = ops::upsample_nearest(x, temporal_ ? 2 : 1, spatial_ ? 2 : 1, keep_first);
  return conv_.forward(up, cache);
}

template <typename T>
SpatialAttention<T>::SpatialAttention(const ModuleBuilder<T>& b, int channels, int groups)
    : norm_(b.sub("norm"), channels, groups),
      q_(b.sub("q"), channels, channels, {.kernel = 1}),
      k_(b.sub("k"), channels, channels, {.kernel = 1}),
      v_(b.sub("v"), channels, channels, {.kernel = 1}),
      proj_(b.sub("proj"), channels, channels, {.kernel = 1, .zero_output = true}) {}

template <typename T>
Var<T> SpatialAttention<T>::forward(const Var<T>& x) const {
  const Var<T> h = norm_.forward(x);
  const Var<T> a = ops::spatial_attention(q_.forward(h, nullptr), k_.forward(h, nullptr), v_.forward(h, nullptr));
  return ops::add(x, proj_.forward(a, nullptr));
}

template <typename T>
Tensor<T> sinusoidal_embedding(int t, int total_steps, int dim) {
  if (dim % 2 != 0) throw ConfigError("sinusoidal embedding dimension must be even");
  const int half = dim / 2;
  const double s = 1000.0 * static_cast<double>(t) / static_cast<double>(total_steps);
  Tensor<T> out({dim});
  for (int i = 0; i < half; ++i) {
    const double w = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    out[i] = static_cast<T>(std::sin(s * w));
    out[half + i] = static_cast<T>(std::cos(s * w));
  }
  return out;
}

template <typename T>
TimestepEmbedding<T>::TimestepEmbedding(const ModuleBuilder<T>& b, int sinusoid_dim, int embed_dim, int total_steps)
    : fc1_(b.sub("fc1"), sinusoid_dim, embed_dim),
      fc2_(b.sub("fc2"), embed_dim, embed_dim),
      sinusoid_dim_(sinusoid_dim),
      total_steps_(total_steps) {}

template <typename T>
Var<T> TimestepEmbedding<T>::forward(int t) const {
  const Var<T> s(sinusoidal_embedding<T>(t, total_steps_, sinusoid_dim_));
  return fc2_.forward(ops::silu(fc1_.forward(s)));
}

#define CDT_INSTANTIATE(T)                 \
  template class ParameterSet<T>;          \
  template class Conv3d<T>;                \
  template class GroupNorm<T>;             \
  template class Linear<T>;                \
  template class ResBlock<T>;              \
  template class Downsample<T>;            \
  template class Upsample<T>;              \
  template class SpatialAttention<T>;      \
  template class TimestepEmbedding<T>;     \
  template Tensor<T> sinusoidal_embedding(int, int, int);
CDT_INSTANTIATE(float)
CDT_INSTANTIATE(double)
#undef CDT_INSTANTIATE

}  // namespace cdt
