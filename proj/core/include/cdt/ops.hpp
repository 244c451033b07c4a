#pragma once

#include <array>
#include <cstdint>

#include "cdt/autograd.hpp"

// Differentiable tensor operations. Activations are laid out (C, T, H, W);
// scalar results have shape (1).
namespace cdt::ops {

// Elementwise arithmetic over equal shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
/// alpha * a + beta * b
template <typename T> Var<T> axpby(T alpha, const Var<T>& a, T beta, const Var<T>& b);

template <typename T> Var<T> silu(const Var<T>& x);
template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> clamp(const Var<T>& x, T lo, T hi);

/// Adds v[c] to every element of channel c of x (x has v.numel() leading rows).
template <typename T> Var<T> add_channel_bias(const Var<T>& x, const Var<T>& v);

/// y = W x + b for a vector x of shape (in), W (out, in), b (out).
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

struct ConvGeometry {
  std::array<int, 3> stride{1, 1, 1};
  std::array<int, 3> pad_front{0, 0, 0};
  std::array<int, 3> pad_back{0, 0, 0};
};

/// 3D convolution with zero padding. x (Ci, T, H, W), weight (Co, Ci, kt, kh, kw),
/// bias (Co) or undefined.
template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const ConvGeometry& geom);

/// Output extent of a convolution along one axis; throws on non-positive size.
int64_t conv_out_extent(int64_t in, int kernel, int stride, int pad_front, int pad_back);

/// Group normalisation computed independently for every frame, so that it
/// never mixes information across time.
template <typename T>
Var<T> group_norm_frames(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups, T eps);

template <typename T> Var<T> concat(const Var<T>& a, const Var<T>& b, int axis);
template <typename T> Var<T> slice(const Var<T>& x, int axis, int64_t begin, int64_t end);

/// Nearest-neighbour upsampling. With temporal factor 2 and keep_first_frame,
/// frame 0 maps to one output frame and every later frame to two, so that
/// 1 + F frames become 1 + 2F.
template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int temporal, int spatial, bool keep_first_frame);

/// 2x2 average pooling over H and W (both must be even).
template <typename T> Var<T> avg_pool_spatial(const Var<T>& x);

/// x / sqrt(sum_c x^2 + delta) at every (t, h, w) position.
template <typename T> Var<T> channel_unit_normalize(const Var<T>& x, T delta);

/// Single-head softmax attention among the H*W positions of each frame.
/// q, k, v share the shape (C, T, H, W).
template <typename T>
Var<T> spatial_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v);

/// Mean over all elements of (a - b)^2.
template <typename T> Var<T> mse(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);

/// mean + exp(logvar / 2) * eps
template <typename T>
Var<T> reparameterize(const Var<T>& mean, const Var<T>& logvar, const Tensor<T>& eps);

/// Mean over elements of 0.5 (mu^2 + exp(logvar) - 1 - logvar).
template <typename T> Var<T> kl_standard_normal(const Var<T>& mean, const Var<T>& logvar);

}  // namespace cdt::ops
