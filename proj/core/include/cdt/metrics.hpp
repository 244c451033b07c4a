#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "cdt/model.hpp"
#include "cdt/perceptual.hpp"

namespace cdt {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) on [0, 1]-rescaled pixels, capped at 100 dB.
double psnr(const VideoTensor& a, const VideoTensor& b);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Gaussian-window SSIM over valid windows, per channel and frame, averaged.
double ssim(const VideoTensor& a, const VideoTensor& b, const SsimOptions& opt = {});

double lpips_metric(const VideoTensor& a, const VideoTensor& b, const PerceptualNet& net);

/// Per-channel mean and population variance by Welford accumulation.
class LatentStatsAccumulator {
 public:
  /// latent: channels-last (..., c).
  void add(const Tensor<float>& latent);
  int64_t count() const { return count_; }
  std::vector<double> mean() const { return mean_; }
  std::vector<double> variance() const;

 private:
  int64_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

struct LatentStats {
  std::vector<double> mean;
  std::vector<double> variance;
};

/// Statistics of the posterior means of the given clips.
LatentStats latent_stats(const std::vector<VideoTensor>& clips, const Tokenizer<float>& model);

/// Pixel-wise mean over every frame of every clip, shape (1, H, W, 3).
Tensor<float> mean_frame(const std::vector<VideoTensor>& clips);
/// PSNR of predicting every frame of the clip with one fixed frame.
double mean_frame_psnr(const VideoTensor& clip, const Tensor<float>& frame);

struct ClipReport {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
  double lpips = 0.0;
  double decode_seconds = 0.0;
};

struct EvalReport {
  int steps = 1;
  uint64_t seed = 0;
  std::vector<ClipReport> clips;
  double psnr = 0.0;
  double ssim = 0.0;
  double lpips = 0.0;
  double decode_seconds = 0.0;
  double baseline_psnr = 0.0;
  LatentStats latent;

  /// Line-oriented key=value records: one "clip" line per clip, one
  /// "aggregate" line and one "latent" line per channel.
  void write(std::ostream& out) const;
};

/// Reconstructs every clip with an N-step DDIM decode and scores it. The
/// baseline predicts each frame with the mean frame of the evaluated clips.
EvalReport evaluate(const std::vector<VideoTensor>& clips, const std::vector<std::string>& names,
                    const Tokenizer<float>& model, int steps, uint64_t seed, const PerceptualNet& net);

/// Scores precomputed reconstructions (no model involved).
EvalReport score_pairs(const std::vector<VideoTensor>& refs, const std::vector<VideoTensor>& recons,
                       const std::vector<std::string>& names, const PerceptualNet& net);

}  // namespace cdt
