#include "cdt/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

namespace cdt {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

}  // namespace cdt

namespace cdt::ops {
namespace {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

/// Gradient buffer of input i, or nullptr when that input is a constant.
template <typename T>
Tensor<T>* grad_of(Node<T>& node, std::size_t i) {
  Node<T>& in = *node.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

template <typename T>
const Tensor<T>& value_of(const Node<T>& node, std::size_t i) {
  return node.inputs[i]->value;
}

template <typename T>
void check_same(const Var<T>& a, const Var<T>& b, const char* what) {
  require_same_shape(a.value(), b.value(), what);
}

template <typename T>
Var<T> scalar_result(T v, std::vector<Var<T>> inputs, std::function<void(Node<T>&)> fn) {
  return make_result(Tensor<T>({1}, v), std::move(inputs), std::move(fn));
}

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same(a, b, "add");
  Tensor<T> out = a.value();
  const T* pb = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += pb[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Tensor<T>* g = grad_of(n, k))
        for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return axpby(T(1), a, T(-1), b);
}

template <typename T>
Var<T> axpby(T alpha, const Var<T>& a, T beta, const Var<T>& b) {
  check_same(a, b, "axpby");
  Tensor<T> out(a.shape());
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = alpha * pa[i] + beta * pb[i];
  return make_result<T>(std::move(out), {a, b}, [alpha, beta](Node<T>& n) {
    if (Tensor<T>* g = grad_of(n, 0))
      for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += alpha * n.grad[i];
    if (Tensor<T>* g = grad_of(n, 1))
      for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += beta * n.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same(a, b, "mul");
  Tensor<T> out = a.value();
  const T* pb = b.value().data();
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= pb[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const Tensor<T>& va = value_of(n, 0);
    const Tensor<T>& vb = value_of(n, 1);
    if (Tensor<T>* g = grad_of(n, 0))
      for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i] * vb[i];
    if (Tensor<T>* g = grad_of(n, 1))
      for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i] * va[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (T& v : out.values()) v *= s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& n) {
    if (Tensor<T>* g = grad_of(n, 0))
      for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += s * n.grad[i];
  });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (T& v : out.values()) v = v / (T(1) + std::exp(-v));
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    Tensor<T>* g = grad_of(n, 0);
    if (!g) return;
    const Tensor<T>& vx = value_of(n, 0);
    for (int64_t i = 0; i < g->numel(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-vx[i]));
      (*g)[i] += n.grad[i] * s * (T(1) + vx[i] * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (T& v : out.values()) v = v > T(0) ? v : T(0);
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    Tensor<T>* g = grad_of(n, 0);
    if (!g) return;
    const Tensor<T>& vx = value_of(n, 0);
    for (int64_t i = 0; i < g->numel(); ++i)
      if (vx[i] > T(0)) (*g)[i] += n.grad[i];
  });
}

template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  Tensor<T> out = x.value();
  for (T& v : out.values()) v = std::clamp(v, lo, hi);
  return make_result<T>(std::move(out), {x}, [lo, hi](Node<T>& n) {
    Tensor<T>* g = grad_of(n, 0);
    if (!g) return;
    const Tensor<T>& vx = value_of(n, 0);
    for (int64_t i = 0; i < g->numel(); ++i)
      if (vx[i] >= lo && vx[i] <= hi) (*g)[i] += n.grad[i];
  });
}

template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& v) {
  const int64_t nc = v.numel();
  if (x.value().rank() < 1 || x.dim(0) != nc) {
    throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " with bias " + shape_str(v.shape()));
  }
  const int64_t inner = x.numel() / nc;
  Tensor<T> out = x.value();
  for (int64_t c = 0; c < nc; ++c) {
    const T b = v.value()[c];
    T* p = out.data() + c * inner;
    for (int64_t i = 0; i < inner; ++i) p[i] += b;
  }
  return make_result<T>(std::move(out), {x, v}, [nc, inner](Node<T>& n) {
    if (Tensor<T>* g = grad_of(n, 0))
      for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i];
    if (Tensor<T>* g = grad_of(n, 1)) {
      for (int64_t c = 0; c < nc; ++c) {
        T s = 0;
        const T* p = n.grad.data() + c * inner;
        for (int64_t i = 0; i < inner; ++i) s += p[i];
        (*g)[c] += s;
      }
    }
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const int64_t nin = x.numel();
  const int64_t nout = weight.dim(0);
  if (weight.value().rank() != 2 || weight.dim(1) != nin || bias.numel() != nout) {
    throw ShapeError("linear: x " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()) + ", bias " +
                     shape_str(bias.shape()));
  }
  Tensor<T> out = bias.value().reshaped({nout});
  CMapRM<T> w(weight.value().data(), nout, nin);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> vx(x.value().data(), nin);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> vy(out.data(), nout);
  vy.noalias() += w * vx;
  return make_result<T>(std::move(out), {x, weight, bias}, [nin, nout](Node<T>& n) {
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> dy(n.grad.data(), nout);
    if (Tensor<T>* g = grad_of(n, 0)) {
      CMapRM<T> w(value_of(n, 1).data(), nout, nin);
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dx(g->data(), nin);
      dx.noalias() += w.transpose() * dy;
    }
    if (Tensor<T>* g = grad_of(n, 1)) {
      Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> vx(value_of(n, 0).data(), nin);
      MapRM<T> dw(g->data(), nout, nin);
      dw.noalias() += dy * vx.transpose();
    }
    if (Tensor<T>* g = grad_of(n, 2))
      for (int64_t i = 0; i < nout; ++i) (*g)[i] += n.grad[i];
  });
}

int64_t conv_out_extent(int64_t in, int kernel, int stride, int pad_front, int pad_back) {
  const int64_t padded = in + pad_front + pad_back;
  if (padded < kernel) {
    throw ShapeError("convolution window " + std::to_string(kernel) + " exceeds padded extent " +
                     std::to_string(padded));
  }
  return (padded - kernel) / stride + 1;
}

namespace {

struct ConvDims {
  int64_t ci, ti, hi, wi;
  int64_t co, kt, kh, kw;
  int64_t to, ho, wo;
  ConvGeometry g;

  int64_t k() const { return ci * kt * kh * kw; }
  int64_t n() const { return to * ho * wo; }
  bool pointwise() const {
    return kt == 1 && kh == 1 && kw == 1 && g.stride == std::array<int, 3>{1, 1, 1} &&
           g.pad_front == std::array<int, 3>{0, 0, 0} && g.pad_back == std::array<int, 3>{0, 0, 0};
  }
};

/// Output positions along one axis whose tap `d` lands inside the input.
inline void valid_range(int64_t out, int64_t in, int stride, int pad, int64_t d, int64_t& lo, int64_t& hi) {
  // i = o * stride + d - pad in [0, in)
  const int64_t off = d - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  hi = (in - 1 - off) < 0 ? -1 : (in - 1 - off) / stride;
  hi = std::min(hi, out - 1);
}

template <typename T>
void im2col(const T* x, const ConvDims& d, T* cols) {
  const int64_t n = d.n();
  const int st = d.g.stride[0], sh = d.g.stride[1], sw = d.g.stride[2];
  const int pt = d.g.pad_front[0], ph = d.g.pad_front[1], pw = d.g.pad_front[2];
  for (int64_t c = 0; c < d.ci; ++c) {
    for (int64_t dt = 0; dt < d.kt; ++dt) {
      for (int64_t dh = 0; dh < d.kh; ++dh) {
        for (int64_t dw = 0; dw < d.kw; ++dw) {
          T* out = cols + (((c * d.kt + dt) * d.kh + dh) * d.kw + dw) * n;
          int64_t wlo, whi;
          valid_range(d.wo, d.wi, sw, pw, dw, wlo, whi);
          for (int64_t to = 0; to < d.to; ++to) {
            const int64_t ti = to * st + dt - pt;
            for (int64_t ho = 0; ho < d.ho; ++ho) {
              T* row = out + (to * d.ho + ho) * d.wo;
              const int64_t hi = ho * sh + dh - ph;
              if (ti < 0 || ti >= d.ti || hi < 0 || hi >= d.hi || whi < wlo) {
                std::fill(row, row + d.wo, T(0));
                continue;
              }
              const T* src = x + ((c * d.ti + ti) * d.hi + hi) * d.wi + (dw - pw);
              std::fill(row, row + wlo, T(0));
              if (sw == 1) {
                std::copy(src + wlo, src + whi + 1, row + wlo);
              } else {
                for (int64_t wo = wlo; wo <= whi; ++wo) row[wo] = src[wo * sw];
              }
              std::fill(row + whi + 1, row + d.wo, T(0));
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvDims& d, T* dx) {
  const int64_t n = d.n();
  const int st = d.g.stride[0], sh = d.g.stride[1], sw = d.g.stride[2];
  const int pt = d.g.pad_front[0], ph = d.g.pad_front[1], pw = d.g.pad_front[2];
  for (int64_t c = 0; c < d.ci; ++c) {
    for (int64_t dt = 0; dt < d.kt; ++dt) {
      for (int64_t dh = 0; dh < d.kh; ++dh) {
        for (int64_t dw = 0; dw < d.kw; ++dw) {
          const T* in = cols + (((c * d.kt + dt) * d.kh + dh) * d.kw + dw) * n;
          int64_t wlo, whi;
          valid_range(d.wo, d.wi, sw, pw, dw, wlo, whi);
          if (whi < wlo) continue;
          for (int64_t to = 0; to < d.to; ++to) {
            const int64_t ti = to * st + dt - pt;
            if (ti < 0 || ti >= d.ti) continue;
            for (int64_t ho = 0; ho < d.ho; ++ho) {
              const int64_t hi = ho * sh + dh - ph;
              if (hi < 0 || hi >= d.hi) continue;
              const T* row = in + (to * d.ho + ho) * d.wo;
              T* dst = dx + ((c * d.ti + ti) * d.hi + hi) * d.wi + (dw - pw);
              for (int64_t wo = wlo; wo <= whi; ++wo) dst[wo * sw] += row[wo];
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, const ConvGeometry& geom) {
  const Tensor<T>& vx = x.value();
  const Tensor<T>& vw = weight.value();
  if (vx.rank() != 4 || vw.rank() != 5 || vw.dim(1) != vx.dim(0)) {
    throw ShapeError("conv3d: input " + shape_str(vx.shape()) + " with weight " + shape_str(vw.shape()));
  }
  ConvDims d{};
  d.ci = vx.dim(0);
  d.ti = vx.dim(1);
  d.hi = vx.dim(2);
  d.wi = vx.dim(3);
  d.co = vw.dim(0);
  d.kt = vw.dim(2);
  d.kh = vw.dim(3);
  d.kw = vw.dim(4);
  d.g = geom;
  d.to = conv_out_extent(d.ti, static_cast<int>(d.kt), geom.stride[0], geom.pad_front[0], geom.pad_back[0]);
  d.ho = conv_out_extent(d.hi, static_cast<int>(d.kh), geom.stride[1], geom.pad_front[1], geom.pad_back[1]);
  d.wo = conv_out_extent(d.wi, static_cast<int>(d.kw), geom.stride[2], geom.pad_front[2], geom.pad_back[2]);
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != d.co) throw ShapeError("conv3d: bias size mismatch");

  const int64_t K = d.k(), N = d.n();
  Tensor<T> out({d.co, d.to, d.ho, d.wo});
  MapRM<T> y(out.data(), d.co, N);
  CMapRM<T> w(vw.data(), d.co, K);
  if (d.pointwise()) {
    y.noalias() = w * CMapRM<T>(vx.data(), K, N);
  } else {
    std::vector<T, MeteredAllocator<T>> cols(static_cast<std::size_t>(K * N));
    im2col(vx.data(), d, cols.data());
    y.noalias() = w * CMapRM<T>(cols.data(), K, N);
  }
  if (has_bias) {
    for (int64_t c = 0; c < d.co; ++c) y.row(c).array() += bias.value()[c];
  }

  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [d, has_bias](Node<T>& n) {
    const int64_t K = d.k(), N = d.n();
    CMapRM<T> dy(n.grad.data(), d.co, N);
    if (has_bias) {
      if (Tensor<T>* g = grad_of(n, 2))
        for (int64_t c = 0; c < d.co; ++c) (*g)[c] += dy.row(c).sum();
    }
    Tensor<T>* gx = grad_of(n, 0);
    Tensor<T>* gw = grad_of(n, 1);
    const Tensor<T>& vx = value_of(n, 0);
    const Tensor<T>& vw = value_of(n, 1);
    if (d.pointwise()) {
      if (gw) MapRM<T>(gw->data(), d.co, K).noalias() += dy * CMapRM<T>(vx.data(), K, N).transpose();
      if (gx) MapRM<T>(gx->data(), K, N).noalias() += CMapRM<T>(vw.data(), d.co, K).transpose() * dy;
      return;
    }
    std::vector<T, MeteredAllocator<T>> cols(static_cast<std::size_t>(K * N));
    if (gw) {
      im2col(vx.data(), d, cols.data());
      MapRM<T>(gw->data(), d.co, K).noalias() += dy * CMapRM<T>(cols.data(), K, N).transpose();
    }
    if (gx) {
      MapRM<T>(cols.data(), K, N).noalias() = CMapRM<T>(vw.data(), d.co, K).transpose() * dy;
      col2im_add(cols.data(), d, gx->data());
    }
  });
}

template <typename T>
Var<T> group_norm_frames(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int groups, T eps) {
  const Tensor<T>& vx = x.value();
  if (vx.rank() != 4) throw ShapeError("group_norm_frames expects (C, T, H, W), got " + shape_str(vx.shape()));
  const int64_t nc = vx.dim(0), nt = vx.dim(1), plane = vx.dim(2) * vx.dim(3);
  if (groups <= 0 || nc % groups != 0) {
    throw ShapeError("group_norm_frames: " + std::to_string(nc) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (gamma.numel() != nc || beta.numel() != nc) throw ShapeError("group_norm_frames: affine size mismatch");
  const int64_t cpg = nc / groups;
  const int64_t count = cpg * plane;

  Tensor<T> out(vx.shape());
  std::vector<T> mean(static_cast<std::size_t>(nt * groups)), inv(static_cast<std::size_t>(nt * groups));
  auto at = [&](int64_t c, int64_t t) { return (c * nt + t) * plane; };
  for (int64_t t = 0; t < nt; ++t) {
    for (int64_t g = 0; g < groups; ++g) {
      T s = 0;
      for (int64_t c = g * cpg; c < (g + 1) * cpg; ++c) {
        const T* p = vx.data() + at(c, t);
        for (int64_t i = 0; i < plane; ++i) s += p[i];
      }
      const T mu = s / static_cast<T>(count);
      T v = 0;
      for (int64_t c = g * cpg; c < (g + 1) * cpg; ++c) {
        const T* p = vx.data() + at(c, t);
        for (int64_t i = 0; i < plane; ++i) v += (p[i] - mu) * (p[i] - mu);
      }
      const T is = T(1) / std::sqrt(v / static_cast<T>(count) + eps);
      mean[static_cast<std::size_t>(t * groups + g)] = mu;
      inv[static_cast<std::size_t>(t * groups + g)] = is;
      for (int64_t c = g * cpg; c < (g + 1) * cpg; ++c) {
        const T* p = vx.data() + at(c, t);
        T* q = out.data() + at(c, t);
        const T ga = gamma.value()[c], be = beta.value()[c];
        for (int64_t i = 0; i < plane; ++i) q[i] = (p[i] - mu) * is * ga + be;
      }
    }
  }

  return make_result<T>(
      std::move(out), {x, gamma, beta},
      [nc, nt, plane, groups, cpg, count, mean = std::move(mean), inv = std::move(inv)](Node<T>& n) {
        const Tensor<T>& vx = value_of(n, 0);
        const Tensor<T>& vg = value_of(n, 1);
        Tensor<T>* gx = grad_of(n, 0);
        Tensor<T>* gg = grad_of(n, 1);
        Tensor<T>* gb = grad_of(n, 2);
        auto at = [&](int64_t c, int64_t t) { return (c * nt + t) * plane; };
        for (int64_t t = 0; t < nt; ++t) {
          for (int64_t g = 0; g < groups; ++g) {
            const T mu = mean[static_cast<std::size_t>(t * groups + g)];
            const T is = inv[static_cast<std::size_t>(t * groups + g)];
            T sum_dxh = 0, sum_dxh_xh = 0;
            for (int64_t c = g * cpg; c < (g + 1) * cpg; ++c) {
              const T* p = vx.data() + at(c, t);
              const T* dy = n.grad.data() + at(c, t);
              T sdy = 0, sdy_xh = 0;
              for (int64_t i = 0; i < plane; ++i) {
                const T xh = (p[i] - mu) * is;
                sdy += dy[i];
                sdy_xh += dy[i] * xh;
              }
              if (gg) (*gg)[c] += sdy_xh;
              if (gb) (*gb)[c] += sdy;
              sum_dxh += sdy * vg[c];
              sum_dxh_xh += sdy_xh * vg[c];
            }
            if (!gx) continue;
            const T cnt = static_cast<T>(count);
            for (int64_t c = g * cpg; c < (g + 1) * cpg; ++c) {
              const T* p = vx.data() + at(c, t);
              const T* dy = n.grad.data() + at(c, t);
              T* dx = gx->data() + at(c, t);
              const T ga = vg[c];
              for (int64_t i = 0; i < plane; ++i) {
                const T xh = (p[i] - mu) * is;
                dx[i] += is / cnt * (cnt * dy[i] * ga - sum_dxh - xh * sum_dxh_xh);
              }
            }
          }
        }
        (void)nc;
      });
}

namespace {

struct AxisSplit {
  int64_t outer, extent, inner;
};

inline AxisSplit split_at(const Shape& s, int axis) {
  if (axis < 0 || axis >= static_cast<int>(s.size())) throw ShapeError("axis out of range for " + shape_str(s));
  AxisSplit r{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

template <typename T>
Var<T> concat(const Var<T>& a, const Var<T>& b, int axis) {
  Shape sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size()) throw ShapeError("concat: rank mismatch");
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (static_cast<int>(i) != axis && sa[i] != sb[i]) {
      throw ShapeError("concat: " + shape_str(sa) + " and " + shape_str(sb) + " differ off axis " +
                       std::to_string(axis));
    }
  }
  const AxisSplit pa = split_at(sa, axis), pb = split_at(sb, axis);
  Shape so = sa;
  so[static_cast<std::size_t>(axis)] += sb[static_cast<std::size_t>(axis)];
  Tensor<T> out(so);
  const int64_t ea = pa.extent * pa.inner, eb = pb.extent * pb.inner;
  for (int64_t o = 0; o < pa.outer; ++o) {
    std::copy_n(a.value().data() + o * ea, ea, out.data() + o * (ea + eb));
    std::copy_n(b.value().data() + o * eb, eb, out.data() + o * (ea + eb) + ea);
  }
  return make_result<T>(std::move(out), {a, b}, [outer = pa.outer, ea, eb](Node<T>& n) {
    if (Tensor<T>* g = grad_of(n, 0))
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < ea; ++i) (*g)[o * ea + i] += n.grad[o * (ea + eb) + i];
    if (Tensor<T>* g = grad_of(n, 1))
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < eb; ++i) (*g)[o * eb + i] += n.grad[o * (ea + eb) + ea + i];
  });
}

template <typename T>
Var<T> slice(const Var<T>& x, int axis, int64_t begin, int64_t end) {
  const AxisSplit p = split_at(x.shape(), axis);
  if (begin < 0 || end > p.extent || begin > end) {
    throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                     shape_str(x.shape()));
  }
  Shape so = x.shape();
  so[static_cast<std::size_t>(axis)] = end - begin;
  Tensor<T> out(so);
  const int64_t src_stride = p.extent * p.inner, len = (end - begin) * p.inner, off = begin * p.inner;
  for (int64_t o = 0; o < p.outer; ++o)
    std::copy_n(x.value().data() + o * src_stride + off, len, out.data() + o * len);
  return make_result<T>(std::move(out), {x}, [outer = p.outer, src_stride, len, off](Node<T>& n) {
    if (Tensor<T>* g = grad_of(n, 0))
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < len; ++i) (*g)[o * src_stride + off + i] += n.grad[o * len + i];
  });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int temporal, int spatial, bool keep_first_frame) {
  const Tensor<T>& vx = x.value();
  if (vx.rank() != 4) throw ShapeError("upsample_nearest expects (C, T, H, W)");
  if ((temporal != 1 && temporal != 2) || spatial < 1) throw RangeError("upsample_nearest: unsupported factors");
  const int64_t nc = vx.dim(0), nt = vx.dim(1), nh = vx.dim(2), nw = vx.dim(3);
  int64_t ot = nt;
  if (temporal == 2) ot = keep_first_frame ? 2 * nt - 1 : 2 * nt;
  const int64_t oh = nh * spatial, ow = nw * spatial;
  std::vector<int64_t> tmap(static_cast<std::size_t>(ot));
  for (int64_t j = 0; j < ot; ++j) {
    if (temporal == 1) tmap[static_cast<std::size_t>(j)] = j;
    else tmap[static_cast<std::size_t>(j)] = keep_first_frame ? (j + 1) / 2 : j / 2;
  }
  Tensor<T> out({nc, ot, oh, ow});
  for (int64_t c = 0; c < nc; ++c)
    for (int64_t j = 0; j < ot; ++j) {
      const T* src = vx.data() + (c * nt + tmap[static_cast<std::size_t>(j)]) * nh * nw;
      T* dst = out.data() + (c * ot + j) * oh * ow;
      for (int64_t h = 0; h < oh; ++h)
        for (int64_t w = 0; w < ow; ++w) dst[h * ow + w] = src[(h / spatial) * nw + w / spatial];
    }
  return make_result<T>(std::move(out), {x},
                        [nc, nt, nh, nw, ot, oh, ow, spatial, tmap = std::move(tmap)](Node<T>& n) {
                          Tensor<T>* g = grad_of(n, 0);
                          if (!g) return;
                          for (int64_t c = 0; c < nc; ++c)
                            for (int64_t j = 0; j < ot; ++j) {
                              T* dst = g->data() + (c * nt + tmap[static_cast<std::size_t>(j)]) * nh * nw;
                              const T* src = n.grad.data() + (c * ot + j) * oh * ow;
                              for (int64_t h = 0; h < oh; ++h)
                                for (int64_t w = 0; w < ow; ++w)
                                  dst[(h / spatial) * nw + w / spatial] += src[h * ow + w];
                            }
                        });
}

template <typename T>
Var<T> avg_pool_spatial(const Var<T>& x) {
  const Tensor<T>& vx = x.value();
  if (vx.rank() != 4 || vx.dim(2) % 2 || vx.dim(3) % 2) {
    throw ShapeError("avg_pool_spatial needs even H and W, got " + shape_str(vx.shape()));
  }
  const int64_t planes = vx.dim(0) * vx.dim(1), nh = vx.dim(2), nw = vx.dim(3);
  const int64_t oh = nh / 2, ow = nw / 2;
  Tensor<T> out({vx.dim(0), vx.dim(1), oh, ow});
  for (int64_t p = 0; p < planes; ++p) {
    const T* s = vx.data() + p * nh * nw;
    T* d = out.data() + p * oh * ow;
    for (int64_t h = 0; h < oh; ++h)
      for (int64_t w = 0; w < ow; ++w)
        d[h * ow + w] = T(0.25) * (s[2 * h * nw + 2 * w] + s[2 * h * nw + 2 * w + 1] + s[(2 * h + 1) * nw + 2 * w] +
                                   s[(2 * h + 1) * nw + 2 * w + 1]);
  }
  return make_result<T>(std::move(out), {x}, [planes, nh, nw, oh, ow](Node<T>& n) {
    Tensor<T>* g = grad_of(n, 0);
    if (!g) return;
    for (int64_t p = 0; p < planes; ++p) {
      T* s = g->data() + p * nh * nw;
      const T* d = n.grad.data() + p * oh * ow;
      for (int64_t h = 0; h < oh; ++h)
        for (int64_t w = 0; w < ow; ++w) {
          const T v = T(0.25) * d[h * ow + w];
          s[2 * h * nw + 2 * w] += v;
          s[2 * h * nw + 2 * w + 1] += v;
          s[(2 * h + 1) * nw + 2 * w] += v;
          s[(2 * h + 1) * nw + 2 * w + 1] += v;
        }
    }
  });
}

template <typename T>
Var<T> channel_unit_normalize(const Var<T>& x, T delta) {
  const Tensor<T>& vx = x.value();
  const int64_t nc = vx.dim(0), np = vx.numel() / nc;
  Tensor<T> out(vx.shape());
  std::vector<T> inv(static_cast<std::size_t>(np));
  for (int64_t p = 0; p < np; ++p) {
    T s = delta;
    for (int64_t c = 0; c < nc; ++c) s += vx[c * np + p] * vx[c * np + p];
    const T is = T(1) / std::sqrt(s);
    inv[static_cast<std::size_t>(p)] = is;
    for (int64_t c = 0; c < nc; ++c) out[c * np + p] = vx[c * np + p] * is;
  }
  return make_result<T>(std::move(out), {x}, [nc, np, inv = std::move(inv)](Node<T>& n) {
    Tensor<T>* g = grad_of(n, 0);
    if (!g) return;
    const Tensor<T>& vx = value_of(n, 0);
    for (int64_t p = 0; p < np; ++p) {
      const T is = inv[static_cast<std::size_t>(p)];
      T dot = 0;
      for (int64_t c = 0; c < nc; ++c) dot += n.grad[c * np + p] * vx[c * np + p] * is;
      for (int64_t c = 0; c < nc; ++c) (*g)[c * np + p] += (n.grad[c * np + p] - vx[c * np + p] * is * dot) * is;
    }
  });
}

namespace {

template <typename T>
void gather_frame(const Tensor<T>& src, int64_t t, MatRM<T>& m) {
  const int64_t nc = src.dim(0), nt = src.dim(1), np = src.dim(2) * src.dim(3);
  m.resize(np, nc);
  for (int64_t c = 0; c < nc; ++c) {
    const T* p = src.data() + (c * nt + t) * np;
    for (int64_t i = 0; i < np; ++i) m(i, c) = p[i];
  }
}

template <typename T>
void scatter_frame_add(const MatRM<T>& m, int64_t t, Tensor<T>& dst) {
  const int64_t nc = dst.dim(0), nt = dst.dim(1), np = dst.dim(2) * dst.dim(3);
  for (int64_t c = 0; c < nc; ++c) {
    T* p = dst.data() + (c * nt + t) * np;
    for (int64_t i = 0; i < np; ++i) p[i] += m(i, c);
  }
}

template <typename T>
MatRM<T> softmax_rows(const MatRM<T>& s) {
  MatRM<T> p(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const T mx = s.row(r).maxCoeff();
    p.row(r) = (s.row(r).array() - mx).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

}  // namespace

template <typename T>
Var<T> spatial_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  check_same(q, k, "spatial_attention");
  check_same(q, v, "spatial_attention");
  if (q.value().rank() != 4) throw ShapeError("spatial_attention expects (C, T, H, W)");
  const int64_t nc = q.dim(0), nt = q.dim(1);
  const T sc = T(1) / std::sqrt(static_cast<T>(nc));
  Tensor<T> out(q.shape());
  MatRM<T> mq, mk, mv;
  for (int64_t t = 0; t < nt; ++t) {
    gather_frame(q.value(), t, mq);
    gather_frame(k.value(), t, mk);
    gather_frame(v.value(), t, mv);
    const MatRM<T> p = softmax_rows<T>((mq * mk.transpose()) * sc);
    const MatRM<T> o = p * mv;
    scatter_frame_add(o, t, out);
  }
  return make_result<T>(std::move(out), {q, k, v}, [nt, sc](Node<T>& n) {
    Tensor<T>* gq = grad_of(n, 0);
    Tensor<T>* gk = grad_of(n, 1);
    Tensor<T>* gv = grad_of(n, 2);
    MatRM<T> mq, mk, mv, dout;
    for (int64_t t = 0; t < nt; ++t) {
      gather_frame(value_of(n, 0), t, mq);
      gather_frame(value_of(n, 1), t, mk);
      gather_frame(value_of(n, 2), t, mv);
      gather_frame(n.grad, t, dout);
      const MatRM<T> p = softmax_rows<T>((mq * mk.transpose()) * sc);
      if (gv) scatter_frame_add<T>(p.transpose() * dout, t, *gv);
      const MatRM<T> dp = dout * mv.transpose();
      MatRM<T> ds = p.array() * dp.array();
      const Eigen::Matrix<T, Eigen::Dynamic, 1> rs = ds.rowwise().sum();
      ds = p.array() * (dp.colwise() - rs).array();
      if (gq) scatter_frame_add<T>((ds * mk) * sc, t, *gq);
      if (gk) scatter_frame_add<T>((ds.transpose() * mq) * sc, t, *gk);
    }
  });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  check_same(a, b, "mse");
  const int64_t n = a.numel();
  double s = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.value()[i]) - static_cast<double>(b.value()[i]);
    s += d * d;
  }
  return scalar_result<T>(static_cast<T>(s / static_cast<double>(n)), {a, b}, [n](Node<T>& node) {
    const T g = node.grad[0] * T(2) / static_cast<T>(n);
    const Tensor<T>& va = value_of(node, 0);
    const Tensor<T>& vb = value_of(node, 1);
    if (Tensor<T>* ga = grad_of(node, 0))
      for (int64_t i = 0; i < n; ++i) (*ga)[i] += g * (va[i] - vb[i]);
    if (Tensor<T>* gb = grad_of(node, 1))
      for (int64_t i = 0; i < n; ++i) (*gb)[i] -= g * (va[i] - vb[i]);
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double s = 0;
  for (T v : x.value().values()) s += static_cast<double>(v);
  return scalar_result<T>(static_cast<T>(s), {x}, [](Node<T>& n) {
    if (Tensor<T>* g = grad_of(n, 0))
      for (T& v : g->values()) v += n.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <typename T>
Var<T> reparameterize(const Var<T>& mu, const Var<T>& logvar, const Tensor<T>& eps) {
  check_same(mu, logvar, "reparameterize");
  require_same_shape(mu.value(), eps, "reparameterize");
  Tensor<T> out(mu.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = mu.value()[i] + std::exp(logvar.value()[i] / T(2)) * eps[i];
  return make_result<T>(std::move(out), {mu, logvar}, [eps](Node<T>& n) {
    if (Tensor<T>* g = grad_of(n, 0))
      for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i];
    if (Tensor<T>* g = grad_of(n, 1)) {
      const Tensor<T>& lv = value_of(n, 1);
      for (int64_t i = 0; i < g->numel(); ++i) (*g)[i] += n.grad[i] * eps[i] * std::exp(lv[i] / T(2)) / T(2);
    }
  });
}

template <typename T>
Var<T> kl_standard_normal(const Var<T>& mu, const Var<T>& logvar) {
  check_same(mu, logvar, "kl_standard_normal");
  const int64_t n = mu.numel();
  double s = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double m = mu.value()[i], lv = logvar.value()[i];
    s += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
  }
  return scalar_result<T>(static_cast<T>(s / static_cast<double>(n)), {mu, logvar}, [n](Node<T>& node) {
    const T g = node.grad[0] / static_cast<T>(n);
    if (Tensor<T>* gm = grad_of(node, 0))
      for (int64_t i = 0; i < n; ++i) (*gm)[i] += g * value_of(node, 0)[i];
    if (Tensor<T>* gl = grad_of(node, 1))
      for (int64_t i = 0; i < n; ++i) (*gl)[i] += g * T(0.5) * (std::exp(value_of(node, 1)[i]) - T(1));
  });
}

#define CDT_INSTANTIATE(T)                                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                \
  template Var<T> scale(const Var<T>&, T);                                                          \
  template Var<T> axpby(T, const Var<T>&, T, const Var<T>&);                                        \
  template Var<T> silu(const Var<T>&);                                                              \
  template Var<T> relu(const Var<T>&);                                                              \
  template Var<T> clamp(const Var<T>&, T, T);                                                       \
  template Var<T> add_channel_bias(const Var<T>&, const Var<T>&);                                   \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                              \
  template Var<T> conv3d(const Var<T>&, const Var<T>&, const Var<T>&, const ConvGeometry&);         \
  template Var<T> group_norm_frames(const Var<T>&, const Var<T>&, const Var<T>&, int, T);           \
  template Var<T> concat(const Var<T>&, const Var<T>&, int);                                        \
  template Var<T> slice(const Var<T>&, int, int64_t, int64_t);                                      \
  template Var<T> upsample_nearest(const Var<T>&, int, int, bool);                                  \
  template Var<T> avg_pool_spatial(const Var<T>&);                                                  \
  template Var<T> channel_unit_normalize(const Var<T>&, T);                                         \
  template Var<T> spatial_attention(const Var<T>&, const Var<T>&, const Var<T>&);                   \
  template Var<T> mse(const Var<T>&, const Var<T>&);                                                \
  template Var<T> sum(const Var<T>&);                                                               \
  template Var<T> mean(const Var<T>&);                                                              \
  template Var<T> reparameterize(const Var<T>&, const Var<T>&, const Tensor<T>&);                   \
  template Var<T> kl_standard_normal(const Var<T>&, const Var<T>&);
CDT_INSTANTIATE(float)
CDT_INSTANTIATE(double)
#undef CDT_INSTANTIATE

}  // namespace cdt::ops
