#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cdt/cache.hpp"

namespace cdt {

enum class InitKind {
  kFanIn,       ///< uniform with variance 1 / fan_in
  kZero,        ///< biases and norm shifts
  kOne,         ///< norm scales
  kZeroOutput,  ///< output projections that start at zero during training
};

enum class InitMode {
  kTraining,    ///< fan-in weights, zero biases, zero output projections
  kRandomized,  ///< every tensor random; used to probe structural properties
};

template <typename T>
struct NamedParameter {
  std::string name;
  Var<T> var;
  InitKind init;
  int64_t fan_in;
};

/// Ordered, named collection of trainable tensors.
template <typename T>
class ParameterSet {
 public:
  Var<T> create(std::string name, Shape shape, InitKind init, int64_t fan_in = 1);

  const std::vector<NamedParameter<T>>& entries() const { return entries_; }
  std::vector<NamedParameter<T>>& entries() { return entries_; }
  /// Total element count of parameters whose name starts with prefix.
  int64_t count(std::string_view prefix = "") const;
  void zero_grad();
  void initialize(uint64_t seed, InitMode mode);

 private:
  std::vector<NamedParameter<T>> entries_;
};

/// Construction context: names parameters and allocates cache slots.
template <typename T>
struct ModuleBuilder {
  ParameterSet<T>* params;
  CacheLayout* cache;
  std::string prefix;

  ModuleBuilder sub(const std::string& name) const { return {params, cache, prefix + name + "."}; }
  Var<T> param(const std::string& name, Shape shape, InitKind init, int64_t fan_in = 1) const {
    return params->create(prefix + name, std::move(shape), init, fan_in);
  }
  int slot(const std::string& name, CacheKind kind) const {
    cache->push_back({prefix + name, kind});
    return static_cast<int>(cache->size()) - 1;
  }
};

/// 3D convolution with kernel 3 (causal in time) or kernel 1 in every axis.
/// Temporal padding is past-only; spatial padding is symmetric.
template <typename T>
class Conv3d {
 public:
  struct Options {
    int kernel = 3;
    int temporal_stride = 1;
    int spatial_stride = 1;
    bool zero_output = false;
  };

  Conv3d() = default;
  Conv3d(const ModuleBuilder<T>& b, int in_channels, int out_channels, Options opt);

  Var<T> forward(const Var<T>& x, CacheState<T>* cache) const;
  int out_channels() const { return out_channels_; }

 private:
  Var<T> weight_;
  Var<T> bias_;
  Options opt_{};
  int out_channels_ = 0;
  int slot_ = -1;
};

template <typename T>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(const ModuleBuilder<T>& b, int channels, int max_groups);
  Var<T> forward(const Var<T>& x) const;

 private:
  Var<T> gamma_;
  Var<T> beta_;
  int groups_ = 1;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const ModuleBuilder<T>& b, int in_features, int out_features);
  Var<T> forward(const Var<T>& x) const;

 private:
  Var<T> weight_;
  Var<T> bias_;
};

/// GroupNorm -> SiLU -> conv -> (+ timestep projection) -> GroupNorm -> SiLU -> conv, plus a residual path.
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(const ModuleBuilder<T>& b, int in_channels, int out_channels, int temb_dim, int groups);
  Var<T> forward(const Var<T>& x, const Var<T>& temb, CacheState<T>* cache) const;

 private:
  GroupNorm<T> norm1_, norm2_;
  Conv3d<T> conv1_, conv2_;
  Linear<T> temb_proj_;
  Conv3d<T> skip_;
  bool has_temb_ = false;
  bool has_skip_ = false;
};

/// Strided kernel-3 convolution halving H and W, and T when temporal.
template <typename T>
class Downsample {
 public:
  Downsample() = default;
  Downsample(const ModuleBuilder<T>& b, int in_channels, int out_channels, bool temporal);
  Var<T> forward(const Var<T>& x, CacheState<T>* cache) const { return conv_.forward(x, cache); }

 private:
  Conv3d<T> conv_;
};

/// Nearest-neighbour upsampling (1 + F -> 1 + 2F frames when temporal)
/// followed by a causal convolution.
template <typename T>
class Upsample {
 public:
  Upsample() = default;
  Upsample(const ModuleBuilder<T>& b, int in_channels, int out_channels, bool temporal, bool spatial = true);
  Var<T> forward(const Var<T>& x, CacheState<T>* cache) const;

 private:
  Conv3d<T> conv_;
  bool temporal_ = false;
  bool spatial_ = true;
  int slot_ = -1;
};

/// Residual single-head attention among the positions of each frame.
template <typename T>
class SpatialAttention {
 public:
  SpatialAttention() = default;
  SpatialAttention(const ModuleBuilder<T>& b, int channels, int groups);
  Var<T> forward(const Var<T>& x) const;

 private:
  GroupNorm<T> norm_;
  Conv3d<T> q_, k_, v_, proj_;
};

/// Sinusoidal features of a scaled timestep followed by a two-layer MLP.
template <typename T>
class TimestepEmbedding {
 public:
  TimestepEmbedding() = default;
  TimestepEmbedding(const ModuleBuilder<T>& b, int sinusoid_dim, int embed_dim, int total_steps);
  Var<T> forward(int t) const;

 private:
  Linear<T> fc1_, fc2_;
  int sinusoid_dim_ = 0;
  int total_steps_ = 1;
};

/// [sin(s w_i), cos(s w_i)] with s = 1000 t / T and w_i = 10000^(-i / (dim/2)).
template <typename T>
Tensor<T> sinusoidal_embedding(int t, int total_steps, int dim);

}  // namespace cdt
