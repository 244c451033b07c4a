#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "cdt/tensor.hpp"

namespace cdt {

using Rng = std::mt19937_64;

/// Mixes a base seed with stream identifiers (step, clip, purpose, ...) into
/// an independent seed, so every random draw is a pure function of its
/// coordinates and training can resume without serialising generator state.
uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> coords);

template <typename T>
Tensor<T> standard_normal(const Shape& shape, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor<T> out(shape);
  for (T& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
Tensor<T> standard_normal(const Shape& shape, uint64_t seed) {
  Rng rng(seed);
  return standard_normal<T>(shape, rng);
}

template <typename T>
Tensor<T> uniform(const Shape& shape, T lo, T hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<T> out(shape);
  for (T& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

}  // namespace cdt
