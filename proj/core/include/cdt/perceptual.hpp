#pragma once

#include <array>
#include <filesystem>

#include "cdt/autograd.hpp"
#include "cdt/video.hpp"

namespace cdt {

/// Fixed three-layer feature network behind the perceptual distance.
///   conv1 3->20 (3x3): +/- pairs of smoothing, gradient and Laplacian filters
///         over luminance and two colour-opponent channels, ReLU
///   2x2 avg pool, conv2 20->24 (3x3), ReLU
///   2x2 avg pool, conv3 24->32 (3x3), ReLU
/// Each layer's features are unit-normalised over channels; the distance is
/// the sum over layers of the mean squared feature difference summed over
/// channels, averaged over frames and positions.
struct PerceptualNet {
  static constexpr int kLayers = 3;
  static constexpr std::array<int, kLayers + 1> kWidths{3, 20, 24, 32};
  static constexpr double kNormDelta = 1e-6;
  static constexpr uint64_t kDefaultSeed = 0x4c504950ULL;

  std::array<Tensor<float>, kLayers> weights;  ///< (Co, Ci, 1, 3, 3)
  std::array<Tensor<float>, kLayers> biases;   ///< (Co)

  /// Deterministic weights: analytic first layer, seeded zero-mean unit-norm
  /// random filters after it.
  static PerceptualNet generate(uint64_t seed = kDefaultSeed);
  /// Reads conv{1,2,3}_{weight,bias}.cdt; throws DataError when missing.
  static PerceptualNet load(const std::filesystem::path& dir);
  void save(const std::filesystem::path& dir) const;
};

/// Directory of the shipped weights; CDT_PERCEPTUAL_DIR overrides it.
std::filesystem::path default_perceptual_dir();

/// Scalar distance between channels-first clips (3, T, H, W) with H, W
/// divisible by 4; differentiable in both inputs.
template <typename T>
Var<T> perceptual_distance(const PerceptualNet& net, const Var<T>& a, const Var<T>& b);

/// Perceptual distance between clips in [-1, 1].
double lpips_loss(const VideoTensor& v0, const VideoTensor& v_hat, const PerceptualNet& net);

}  // namespace cdt
