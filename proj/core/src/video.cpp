#include "cdt/video.hpp"

#include <string>

namespace cdt {

void VideoTensor::validate() const {
  if (data.rank() != 4 || data.dim(3) != 3) {
    throw ShapeError("video must be (1+F, H, W, 3), got " + shape_str(data.shape()));
  }
  (void)latent_grid(frames(), height(), width());
  if (!all_finite(data)) throw NumericError("video contains non-finite values");
}

LatentGrid latent_grid(int64_t frames, int64_t height, int64_t width) {
  if (frames < 1 || (frames - 1) % kTemporalCompression != 0) {
    throw ShapeError("frame count must be 1 + 4k, got " + std::to_string(frames));
  }
  if (height < kSpatialCompression || height % kSpatialCompression != 0 || width < kSpatialCompression ||
      width % kSpatialCompression != 0) {
    throw ShapeError("height and width must be positive multiples of 8, got " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  return {1 + (frames - 1) / kTemporalCompression, height / kSpatialCompression, width / kSpatialCompression};
}

}  // namespace cdt
