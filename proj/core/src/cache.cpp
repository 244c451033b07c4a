#include "cdt/cache.hpp"

#include <string>

namespace cdt {

int cache_depth(CacheKind kind) {
  switch (kind) {
    case CacheKind::kCausalConv:
      return 2;
    case CacheKind::kTemporalDown:
      return 1;
    case CacheKind::kTemporalUp:
      return 0;
  }
  return 0;
}

const char* cache_kind_name(CacheKind kind) {
  switch (kind) {
    case CacheKind::kCausalConv:
      return "causal_conv";
    case CacheKind::kTemporalDown:
      return "temporal_down";
    case CacheKind::kTemporalUp:
      return "temporal_up";
  }
  return "?";
}

template <typename T>
CacheState<T>::CacheState(CacheLayout layout) : layout_(std::move(layout)) {
  reset();
}

template <typename T>
void CacheState<T>::reset() {
  layers_.assign(layout_.size(), LayerCache<T>{});
  for (std::size_t i = 0; i < layout_.size(); ++i) layers_[i].kind = layout_[i].kind;
}

template <typename T>
LayerCache<T>& CacheState<T>::at(int layer_id) {
  if (layer_id < 0 || layer_id >= size()) throw RangeError("cache layer id " + std::to_string(layer_id) + " unknown");
  return layers_[static_cast<std::size_t>(layer_id)];
}

template <typename T>
const LayerCache<T>& CacheState<T>::at(int layer_id) const {
  if (layer_id < 0 || layer_id >= size()) throw RangeError("cache layer id " + std::to_string(layer_id) + " unknown");
  return layers_[static_cast<std::size_t>(layer_id)];
}

template <typename T>
int64_t CacheState<T>::cached_frames() const {
  int64_t n = 0;
  for (const auto& l : layers_)
    if (l.frames.rank() == 4) n += l.frames.dim(1);
  return n;
}

namespace {

template <typename T>
LayerCache<T>& checked_slot(CacheState<T>& cache, int layer_id, CacheKind kind, const Var<T>& chunk) {
  LayerCache<T>& slot = cache.at(layer_id);
  if (slot.kind != kind) {
    throw ConfigError("cache layer " + std::to_string(layer_id) + " is " + cache_kind_name(slot.kind) + ", not " +
                      cache_kind_name(kind));
  }
  if (chunk.value().rank() != 4) throw ShapeError("streamed chunk must be (C, T, H, W), got " + shape_str(chunk.shape()));
  if (slot.primed) {
    const Shape& s = slot.frames.shape();
    if (s[0] != chunk.dim(0) || s[2] != chunk.dim(2) || s[3] != chunk.dim(3)) {
      throw ShapeError("cache layer " + cache.layout()[static_cast<std::size_t>(layer_id)].name + " holds " +
                       shape_str(s) + " but chunk is " + shape_str(chunk.shape()));
    }
  }
  return slot;
}

template <typename T>
Var<T> prepend_context(const Var<T>& chunk, const LayerCache<T>& slot, int64_t zero_frames) {
  if (slot.primed) return ops::concat(Var<T>(slot.frames), chunk, 1);
  Tensor<T> zeros({chunk.dim(0), zero_frames, chunk.dim(2), chunk.dim(3)});
  return ops::concat(Var<T>(std::move(zeros)), chunk, 1);
}

template <typename T>
Tensor<T> last_frames(const Var<T>& x, int64_t n) {
  const int64_t nt = x.dim(1);
  return ops::slice(x, 1, nt - n, nt).value();
}

ops::ConvGeometry valid_time_geometry(int stride_t, std::array<int, 2> spatial_stride, int spatial_pad) {
  ops::ConvGeometry g;
  g.stride = {stride_t, spatial_stride[0], spatial_stride[1]};
  g.pad_front = {0, spatial_pad, spatial_pad};
  g.pad_back = {0, spatial_pad, spatial_pad};
  return g;
}

}  // namespace

template <typename T>
Var<T> causal_conv_step(const Var<T>& chunk, CacheState<T>& cache, int layer_id, const Var<T>& weight,
                        const Var<T>& bias, std::array<int, 2> spatial_stride, int spatial_pad) {
  LayerCache<T>& slot = checked_slot(cache, layer_id, CacheKind::kCausalConv, chunk);
  if (weight.dim(2) != 3) throw ShapeError("causal_conv_step expects a temporal kernel of 3");
  const Var<T> extended = prepend_context(chunk, slot, 2);
  Var<T> out = ops::conv3d(extended, weight, bias, valid_time_geometry(1, spatial_stride, spatial_pad));
  slot.frames = last_frames(extended, 2);
  slot.primed = true;
  return out;
}

template <typename T>
Var<T> temporal_down_step(const Var<T>& chunk, CacheState<T>& cache, int layer_id, const Var<T>& weight,
                          const Var<T>& bias, std::array<int, 2> spatial_stride, int spatial_pad) {
  LayerCache<T>& slot = checked_slot(cache, layer_id, CacheKind::kTemporalDown, chunk);
  if (weight.dim(2) != 3) throw ShapeError("temporal_down_step expects a temporal kernel of 3");
  const int64_t nt = chunk.dim(1);
  if (!slot.primed && nt % 2 != 1) {
    throw ShapeError("temporal downsample: first chunk must hold an odd number of frames, got " +
                     std::to_string(nt));
  }
  if (slot.primed && nt % 2 != 0) {
    throw ShapeError("temporal downsample: phase misalignment, continuation chunk has " + std::to_string(nt) +
                     " frames");
  }
  const Var<T> extended = prepend_context(chunk, slot, 2);
  Var<T> out = ops::conv3d(extended, weight, bias, valid_time_geometry(2, spatial_stride, spatial_pad));
  slot.frames = last_frames(chunk, 1);
  slot.primed = true;
  return out;
}

template <typename T>
bool temporal_up_step(CacheState<T>& cache, int layer_id) {
  LayerCache<T>& slot = cache.at(layer_id);
  if (slot.kind != CacheKind::kTemporalUp) throw ConfigError("cache layer is not a temporal upsample");
  const bool first = !slot.primed;
  slot.primed = true;
  return first;
}

#define CDT_INSTANTIATE(T)                                                                                      \
  template class CacheState<T>;                                                                                 \
  template Var<T> causal_conv_step(const Var<T>&, CacheState<T>&, int, const Var<T>&, const Var<T>&,           \
                                   std::array<int, 2>, int);                                                    \
  template Var<T> temporal_down_step(const Var<T>&, CacheState<T>&, int, const Var<T>&, const Var<T>&,         \
                                     std::array<int, 2>, int);                                                  \
  template bool temporal_up_step(CacheState<T>&, int);
CDT_INSTANTIATE(float)
CDT_INSTANTIATE(double)
#undef CDT_INSTANTIATE

}  // namespace cdt
