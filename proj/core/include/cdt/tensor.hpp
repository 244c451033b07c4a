#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

#include "cdt/error.hpp"

namespace cdt {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Per-thread accounting of bytes held by Tensor storage. Used to bound the
/// activation footprint of streaming inference.
namespace memory_meter {

int64_t live_bytes();
int64_t peak_bytes();
/// Sets the peak to the current live byte count.
void reset_peak();

void on_allocate(std::size_t bytes);
void on_release(std::size_t bytes);

}  // namespace memory_meter

template <typename T>
struct MeteredAllocator {
  using value_type = T;

  MeteredAllocator() = default;
  template <typename U>
  MeteredAllocator(const MeteredAllocator<U>&) noexcept {}

  /// Cache-line alignment keeps vectorised kernels on the same code path
  /// for every allocation, so results do not depend on heap addresses.
  static constexpr std::align_val_t kAlignment{64};

  T* allocate(std::size_t n) {
    memory_meter::on_allocate(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    memory_meter::on_release(n * sizeof(T));
    ::operator delete(p, n * sizeof(T), kAlignment);
  }

  template <typename U>
  bool operator==(const MeteredAllocator<U>&) const noexcept {
    return true;
  }
};

/// Dense row-major tensor with value semantics.
template <typename T>
class Tensor {
 public:
  using Storage = std::vector<T, MeteredAllocator<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), fill) {}
  Tensor(Shape shape, std::span<const T> values) : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_)) {
      throw ShapeError("tensor payload of " + std::to_string(data_.size()) + " values does not fit shape " +
                       shape_str(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty() && shape_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return {data_.data(), data_.size()}; }
  std::span<const T> values() const { return {data_.data(), data_.size()}; }

  T& operator[](int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same payload under a new shape with equal element count.
  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  void reshape(Shape shape) {
    if (shape_numel(shape) != numel()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    shape_ = std::move(shape);
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  Shape shape_;
  Storage data_;
};

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
bool all_finite(const Tensor<T>& t);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b);

/// (T, H, W, C) <-> (C, T, H, W). Networks run channels-first; public
/// video and latent tensors are channels-last.
template <typename T>
Tensor<T> to_channels_first(const Tensor<T>& thwc);
template <typename T>
Tensor<T> to_channels_last(const Tensor<T>& cthw);

}  // namespace cdt
