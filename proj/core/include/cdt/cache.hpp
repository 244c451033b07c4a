#pragma once

#include <array>
#include <string>
#include <vector>

#include "cdt/ops.hpp"

namespace cdt {

enum class CacheKind {
  kCausalConv,    ///< kernel-3 causal convolution, keeps 2 trailing frames
  kTemporalDown,  ///< stride-2 temporal downsample, keeps 1 trailing frame
  kTemporalUp,    ///< temporal upsample, keeps no frames, only the first-chunk flag
};

int cache_depth(CacheKind kind);
const char* cache_kind_name(CacheKind kind);

struct CacheSlot {
  std::string name;
  CacheKind kind;
};

/// Ordered list of every cached layer of a network; a layer's id is its index.
using CacheLayout = std::vector<CacheSlot>;

template <typename T>
struct LayerCache {
  CacheKind kind = CacheKind::kCausalConv;
  bool primed = false;  ///< false until the first chunk has passed
  Tensor<T> frames;     ///< (C, depth, H, W) once primed
};

/// Streaming state of one network over one stream. A fresh state stands for
/// the zero padding that precedes the first chunk. Owned by a single stream.
template <typename T>
class CacheState {
 public:
  explicit CacheState(CacheLayout layout);

  void reset();
  LayerCache<T>& at(int layer_id);
  const LayerCache<T>& at(int layer_id) const;
  const CacheLayout& layout() const { return layout_; }
  int size() const { return static_cast<int>(layers_.size()); }

  /// Number of frames held across all layers.
  int64_t cached_frames() const;

 private:
  CacheLayout layout_;
  std::vector<LayerCache<T>> layers_;
};

/// Kernel-3 causal convolution over one chunk. Output equals the matching
/// frames of the whole-sequence convolution; the cache is left holding the
/// last two frames of the padded input.
template <typename T>
Var<T> causal_conv_step(const Var<T>& chunk, CacheState<T>& cache, int layer_id, const Var<T>& weight,
                        const Var<T>& bias, std::array<int, 2> spatial_stride, int spatial_pad);

/// Stride-2 temporal downsample (kernel 3) over one chunk. A fresh cache takes
/// an odd-length chunk with causal zero padding; later chunks must be even and
/// are preceded by the one cached frame.
template <typename T>
Var<T> temporal_down_step(const Var<T>& chunk, CacheState<T>& cache, int layer_id, const Var<T>& weight,
                          const Var<T>& bias, std::array<int, 2> spatial_stride, int spatial_pad);

/// Marks a temporal upsample slot as used. Returns true for the first chunk
/// of a stream, whose leading frame is emitted once instead of twice.
template <typename T>
bool temporal_up_step(CacheState<T>& cache, int layer_id);

}  // namespace cdt
