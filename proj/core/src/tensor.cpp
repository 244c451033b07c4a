#include "cdt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cdt {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace memory_meter {
namespace {
thread_local int64_t g_live = 0;
thread_local int64_t g_peak = 0;
}  // namespace

int64_t live_bytes() { return g_live; }
int64_t peak_bytes() { return g_peak; }
void reset_peak() { g_peak = g_live; }

void on_allocate(std::size_t bytes) {
  g_live += static_cast<int64_t>(bytes);
  g_peak = std::max(g_peak, g_live);
}
void on_release(std::size_t bytes) { g_live -= static_cast<int64_t>(bytes); }

}  // namespace memory_meter

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
Tensor<T> to_channels_first(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("to_channels_first expects (T, H, W, C), got " + shape_str(x.shape()));
  const int64_t nt = x.dim(0), nh = x.dim(1), nw = x.dim(2), nc = x.dim(3);
  Tensor<T> out({nc, nt, nh, nw});
  const int64_t plane = nt * nh * nw;
  for (int64_t p = 0; p < plane; ++p) {
    const T* src = x.data() + p * nc;
    for (int64_t c = 0; c < nc; ++c) out[c * plane + p] = src[c];
  }
  return out;
}

template <typename T>
Tensor<T> to_channels_last(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("to_channels_last expects (C, T, H, W), got " + shape_str(x.shape()));
  const int64_t nc = x.dim(0), nt = x.dim(1), nh = x.dim(2), nw = x.dim(3);
  Tensor<T> out({nt, nh, nw, nc});
  const int64_t plane = nt * nh * nw;
  for (int64_t c = 0; c < nc; ++c) {
    const T* src = x.data() + c * plane;
    for (int64_t p = 0; p < plane; ++p) out[p * nc + c] = src[p];
  }
  return out;
}

#define CDT_INSTANTIATE(T)                                           \
  template bool all_finite(const Tensor<T>&);                        \
  template T max_abs_diff(const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> to_channels_first(const Tensor<T>&);            \
  template Tensor<T> to_channels_last(const Tensor<T>&);
CDT_INSTANTIATE(float)
CDT_INSTANTIATE(double)
#undef CDT_INSTANTIATE

}  // namespace cdt
