#pragma once

#include <optional>

#include "cdt/tensor.hpp"

namespace cdt {

inline constexpr int kTemporalCompression = 4;
inline constexpr int kSpatialCompression = 8;

/// A clip of 1 + F RGB frames, shape (1 + F, H, W, 3), values in [-1, 1].
struct VideoTensor {
  Tensor<float> data;
  std::optional<double> fps;

  VideoTensor() = default;
  explicit VideoTensor(Tensor<float> d, std::optional<double> f = std::nullopt) : data(std::move(d)), fps(f) {}

  int64_t frames() const { return data.dim(0); }
  int64_t height() const { return data.dim(1); }
  int64_t width() const { return data.dim(2); }

  /// Throws ShapeError unless F % 4 == 0, H % 8 == 0, W % 8 == 0 and the
  /// last axis holds 3 channels; throws NumericError on non-finite values.
  void validate() const;
};

/// Grid of the latent for a clip: (1 + F/4, H/8, W/8).
struct LatentGrid {
  int64_t frames, height, width;
};
LatentGrid latent_grid(int64_t frames, int64_t height, int64_t width);

}  // namespace cdt
