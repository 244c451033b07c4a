#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cdt/model.hpp"
#include "cdt/perceptual.hpp"
#include "cdt/sampler.hpp"

namespace cdt {

/// weight(t) * MSE(v0, V_theta(q_sample(v0, t, eps), z, t)).
double diffusion_loss(const VideoTensor& v0, const Latent& z, Timestep t, const Tensor<float>& eps,
                      const Tokenizer<float>& model);
double diffusion_loss(const VideoTensor& v0, Timestep t, const Tensor<float>& eps, const DenoiseFn& predictor,
                      const NoiseSchedule& sched);

struct LossWeights {
  double kl = 0.0;
  double lpips = 0.0;
};

template <typename T>
struct LossTerms {
  Var<T> diffusion;
  Var<T> kl;
  Var<T> lpips;  ///< undefined when the perceptual weight is 0
  Var<T> total;
  Var<T> x0_hat;
};

/// Differentiable objective on one clip (channels-first). The latent is
/// mean + exp(logvar / 2) * latent_eps, or the mean when latent_eps is empty.
/// The perceptual term compares v0 with the single-step clean prediction.
template <typename T>
LossTerms<T> total_loss(const Tokenizer<T>& model, const Tensor<T>& v0, Timestep t, const Tensor<T>& eps,
                        const Tensor<T>& latent_eps, const LossWeights& w, const PerceptualNet* net);

struct LossBreakdown {
  double diffusion = 0.0;
  double kl = 0.0;
  double lpips = 0.0;
  double total = 0.0;
};

LossBreakdown total_loss(const VideoTensor& v0, const Tokenizer<float>& model, Timestep t, const Tensor<float>& eps,
                         std::optional<uint64_t> latent_seed, const LossWeights& w, const PerceptualNet* net);

struct StageSpec {
  int64_t frames = 0;  ///< clip length used in the stage; 0 keeps the loaded length
  int downscale = 1;   ///< spatial average-pooling factor
  bool operator==(const StageSpec&) const = default;
};

struct TrainConfig {
  uint64_t seed = 0;
  int total_steps = 5000;
  int batch_size = 1;
  double learning_rate = 1e-4;
  double min_lr_ratio = 0.1;
  int warmup_steps = 100;
  double grad_clip = 1.0;
  /// First step of stage 2; 0 starts there. The perceptual weight is 0 before it.
  int stage2_step = 0;
  StageSpec stage1{5, 2};
  StageSpec stage2{};
  /// Global perceptual toggle; false keeps the weight at 0 in both stages.
  bool lpips_enabled = true;
  /// Chance that a training sample is reduced to its first frame.
  double image_probability = 0.1;
  int log_every = 50;
  int checkpoint_every = 0;
  int eval_every = 0;
  int eval_steps = 1;

  bool operator==(const TrainConfig&) const = default;
  void validate() const;
};

struct AdamState {
  std::vector<Tensor<float>> m;
  std::vector<Tensor<float>> v;
  int64_t step = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void adam_update(ParameterSet<float>& params, AdamState& state, double lr, const AdamOptions& opt = {});

/// Linear warmup, then cosine decay to min_lr_ratio * learning_rate.
double learning_rate_at(const TrainConfig& cfg, int step);

struct StepRecord {
  int step = 0;
  int stage = 1;
  double lr = 0.0;
  double eta = 0.0;
  double grad_norm = 0.0;
  LossBreakdown loss;
};

struct TrainState {
  int step = 0;  ///< completed optimizer steps
  AdamState adam;
  double loss_ema = 0.0;
};

/// Stage, perceptual weight and clip shaping in effect at a (1-based) step.
int stage_at(const TrainConfig& cfg, int step);
double eta_at(const TrainConfig& cfg, const ModelConfig& model, int step);
VideoTensor shape_for_stage(const VideoTensor& clip, const StageSpec& spec);

/// One optimizer step (state.step + 1) on a batch. Every random draw is
/// derived from (seed, step, batch slot). Throws NumericError naming the
/// offending term on a non-finite loss.
StepRecord train_step(Tokenizer<float>& model, TrainState& state, const std::vector<VideoTensor>& batch,
                      const TrainConfig& cfg, const PerceptualNet* net);

/// Clips for the batch of a step: per-epoch permutations seeded by (seed, epoch).
std::vector<std::size_t> batch_indices(const TrainConfig& cfg, int step, std::size_t dataset_size);

struct TrainHooks {
  std::function<void(const StepRecord&)> on_step;
  std::function<void(int step, const TrainState&)> on_checkpoint;
  std::function<void(int step)> on_eval;
};

/// Runs steps state.step + 1 .. cfg.total_steps, writing key=value records to log.
void train_loop(Tokenizer<float>& model, TrainState& state, const std::vector<VideoTensor>& dataset,
                const TrainConfig& cfg, const PerceptualNet* net, std::ostream& log, const TrainHooks& hooks = {});

void write_step_record(std::ostream& out, const StepRecord& r);

}  // namespace cdt
