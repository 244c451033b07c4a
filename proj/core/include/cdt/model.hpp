#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cdt/layers.hpp"
#include "cdt/schedule.hpp"
#include "cdt/video.hpp"

namespace cdt {

/// Architecture and objective hyper-parameters. Kernel size (3) and the
/// 4x8x8 compression are fixed by construction.
struct ModelConfig {
  int latent_dim = 16;
  /// Denoiser width at full resolution and per-stage multipliers (4 stages).
  int base_channels = 16;
  std::vector<int> channel_multipliers{1, 2, 4, 4};
  /// Encoder width and multipliers for its 4 resolution levels.
  int encoder_base_channels = 16;
  std::vector<int> encoder_channel_multipliers{1, 2, 4, 4};
  /// Number of denoiser stages (from the first) that receive the latent.
  int injection_count = 4;
  int timesteps = 8192;
  double kl_weight = 1e-6;
  double lpips_weight = 0.01;
  int norm_groups = 8;

  /// Desk-scale preset used for training runs.
  static ModelConfig toy();
  /// Minimal preset for structural and gradient tests.
  static ModelConfig tiny();

  void validate() const;
  std::vector<int> decoder_widths() const;
  std::vector<int> encoder_widths() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Gaussian posterior over the latent grid, channels-last (1+f, h, w, c).
struct LatentPosterior {
  Tensor<float> mean;
  Tensor<float> logvar;
};

/// Latent sample z, channels-last (1+f, h, w, c).
struct Latent {
  Tensor<float> z;
};

inline constexpr double kLogvarMin = -30.0;
inline constexpr double kLogvarMax = 20.0;

/// Causal 3D-convolutional encoder: conv block, 2x spatial downsample, then
/// two 2x temporal+spatial downsamples, ending in (mean, logvar).
template <typename T>
class Encoder {
 public:
  Encoder(const ModelConfig& cfg, const ModuleBuilder<T>& b);

  /// video (3, 1+F, H, W) -> (mean, clamped logvar), each (c, 1+F/4, H/8, W/8).
  std::pair<Var<T>, Var<T>> forward(const Var<T>& video, CacheState<T>* cache = nullptr) const;

 private:
  Conv3d<T> conv_in_;
  ResBlock<T> res0_, res1_, res2_, res3_;
  Downsample<T> down_spatial_, down1_, down2_;
  GroupNorm<T> norm_out_;
  Conv3d<T> conv_out_;
  int latent_dim_;
};

/// 3D U-Net predicting the clean clip from (V_t, z, t). The latent enters
/// through a chain of adapter convolutions whose outputs are added to the
/// inputs of the first injection_count downsampling stages.
template <typename T>
class Denoiser {
 public:
  static constexpr int kStages = 4;

  Denoiser(const ModelConfig& cfg, const ModuleBuilder<T>& b);

  /// v_t (3, 1+F, H, W), z (c, 1+F/4, H/8, W/8) -> clean-clip prediction.
  Var<T> forward(const Var<T>& v_t, const Var<T>& z, Timestep t, CacheState<T>* cache = nullptr) const;

  /// Adapter maps for stages 0 .. injection_count-1.
  std::vector<Var<T>> condition_maps(const Var<T>& z, CacheState<T>* cache = nullptr) const;

  /// Channels-first shape of the input of every downsampling stage.
  std::vector<Shape> stage_input_shapes(int64_t frames, int64_t height, int64_t width) const;

  const NoiseSchedule& schedule() const { return schedule_; }
  int injection_count() const { return injection_count_; }

  /// Number of whole-clip predictions made so far (streamed clips count once).
  int64_t calls() const { return calls_.load(); }
  void reset_calls() const { calls_.store(0); }
  void note_call() const { calls_.fetch_add(1); }

 private:
  Var<T> predict(const Var<T>& v_t, const Var<T>& z, Timestep t, CacheState<T>* cache) const;

  std::vector<int> widths_;
  int injection_count_;
  NoiseSchedule schedule_;
  TimestepEmbedding<T> temb_;
  Conv3d<T> conv_in_;
  std::vector<ResBlock<T>> down_res_;
  std::vector<Downsample<T>> down_;
  ResBlock<T> mid_res1_, mid_res2_;
  SpatialAttention<T> mid_attn_;
  std::vector<ResBlock<T>> up_res_;
  std::vector<Upsample<T>> up_;
  GroupNorm<T> norm_out_;
  Conv3d<T> conv_out_;
  Conv3d<T> adapter_in_;
  std::vector<Upsample<T>> adapter_up_;
  mutable std::atomic<int64_t> calls_{0};
};

/// Encoder and denoiser with their shared parameter set. Parameter names are
/// prefixed "encoder." and "decoder.".
template <typename T>
class Tokenizer {
 public:
  explicit Tokenizer(const ModelConfig& cfg);
  Tokenizer(const Tokenizer&) = delete;
  Tokenizer& operator=(const Tokenizer&) = delete;

  const ModelConfig& config() const { return config_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }
  const Encoder<T>& encoder() const { return encoder_; }
  const Denoiser<T>& denoiser() const { return denoiser_; }
  const CacheLayout& encoder_cache_layout() const { return encoder_layout_; }
  const CacheLayout& decoder_cache_layout() const { return decoder_layout_; }

  void initialize(uint64_t seed, InitMode mode = InitMode::kTraining) { params_.initialize(seed, mode); }
  int64_t encoder_parameter_count() const { return params_.count("encoder."); }
  int64_t decoder_parameter_count() const { return params_.count("decoder."); }

 private:
  ModelConfig config_;
  ParameterSet<T> params_;
  CacheLayout encoder_layout_;
  CacheLayout decoder_layout_;
  Encoder<T> encoder_;
  Denoiser<T> denoiser_;
};

// Inference entry points on channels-last float tensors.

LatentPosterior encode(const VideoTensor& v0, const Tokenizer<float>& model);

/// Reparameterised sample; without a seed returns the posterior mean.
Latent sample_latent(const LatentPosterior& post, std::optional<uint64_t> seed);

/// Mean over elements of 0.5 (mu^2 + exp(logvar) - 1 - logvar).
double kl_loss(const LatentPosterior& post);

/// Adapter outputs, channels-first, one per injected stage.
std::vector<Tensor<float>> condition_adapter(const Latent& z, const Tokenizer<float>& model);

VideoTensor denoise(const VideoTensor& v_t, const Latent& z, Timestep t, const Tokenizer<float>& model);

}  // namespace cdt
