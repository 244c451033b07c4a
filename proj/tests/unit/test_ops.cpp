#include <gtest/gtest.h>

#include <cmath>

#include "cdt/autograd.hpp"
#include "cdt/ops.hpp"
#include "test_util.hpp"

namespace cdt {
namespace {

Tensor<double> randn(const Shape& s, uint64_t seed) { return standard_normal<double>(s, seed); }

TEST(Conv3d, MatchesDirectLoopsForStridesAndPadding) {
  struct Case {
    std::array<int, 3> stride, pf, pb;
    Shape x, w;
  };
  const std::vector<Case> cases{
      {{1, 1, 1}, {2, 1, 1}, {0, 1, 1}, {3, 5, 6, 7}, {4, 3, 3, 3, 3}},
      {{2, 2, 2}, {2, 1, 1}, {0, 1, 1}, {2, 5, 8, 8}, {3, 2, 3, 3, 3}},
      {{1, 2, 2}, {0, 1, 1}, {0, 1, 1}, {2, 3, 8, 6}, {5, 2, 1, 3, 3}},
      {{1, 1, 1}, {0, 0, 0}, {0, 0, 0}, {6, 2, 3, 3}, {2, 6, 1, 1, 1}},
  };
  uint64_t seed = 1;
  for (const auto& c : cases) {
    const auto x = randn(c.x, seed++), w = randn(c.w, seed++), b = randn({c.w[0]}, seed++);
    ops::ConvGeometry g{c.stride, c.pf, c.pb};
    const auto got = ops::conv3d(Var<double>(x), Var<double>(w), Var<double>(b), g).value();
    const auto want = test::naive_conv3d(x, w, &b, c.stride, c.pf, c.pb);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LT(max_abs_diff(got, want), 1e-12);
  }
}

TEST(Conv3d, GradientsMatchFiniteDifferences) {
  const auto x = randn({2, 3, 4, 4}, 7), w = randn({3, 2, 3, 3, 3}, 8), b = randn({3}, 9);
  const auto probe = randn({3, 3, 2, 2}, 10);
  ops::ConvGeometry g{{1, 2, 2}, {2, 1, 1}, {0, 1, 1}};
  auto loss = [&](const Var<double>& xv, const Var<double>& wv, const Var<double>& bv) {
    return ops::sum(ops::mul(ops::conv3d(xv, wv, bv, g), Var<double>(probe)));
  };
  Var<double> xv(x, true), wv(w, true), bv(b, true);
  backward(loss(xv, wv, bv));
  const auto gx = test::numeric_grad(x, [&](const Tensor<double>& t) {
    return loss(Var<double>(t), Var<double>(w), Var<double>(b)).item();
  });
  const auto gw = test::numeric_grad(w, [&](const Tensor<double>& t) {
    return loss(Var<double>(x), Var<double>(t), Var<double>(b)).item();
  });
  EXPECT_LT(max_abs_diff(xv.grad(), gx), 1e-6);
  EXPECT_LT(max_abs_diff(wv.grad(), gw), 1e-6);
  double probe_sum0 = 0;
  for (int64_t i = 0; i < 12; ++i) probe_sum0 += probe[i];
  EXPECT_NEAR(bv.grad()[0], probe_sum0, 1e-9);
}

TEST(Conv3d, OutputExtentRejectsEmptyOutput) {
  EXPECT_EQ(ops::conv_out_extent(5, 3, 2, 2, 0), 3);
  EXPECT_EQ(ops::conv_out_extent(8, 3, 2, 1, 1), 4);
  EXPECT_THROW(ops::conv_out_extent(1, 3, 1, 0, 0), ShapeError);
}

TEST(GroupNorm, NormalisesEachFrameAndGroupSeparately) {
  const int64_t c = 4, nt = 3, h = 2, w = 3;
  auto x = randn({c, nt, h, w}, 11);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = x[i] * 3.0 + 5.0;
  const auto gamma = randn({c}, 12), beta = randn({c}, 13);
  const auto y = ops::group_norm_frames(Var<double>(x), Var<double>(gamma), Var<double>(beta), 2, 1e-6).value();
  for (int64_t t = 0; t < nt; ++t)
    for (int grp = 0; grp < 2; ++grp) {
      double mean = 0, var = 0;
      const int64_t n = 2 * h * w;
      for (int64_t ch = grp * 2; ch < grp * 2 + 2; ++ch)
        for (int64_t p = 0; p < h * w; ++p) mean += x[(ch * nt + t) * h * w + p];
      mean /= n;
      for (int64_t ch = grp * 2; ch < grp * 2 + 2; ++ch)
        for (int64_t p = 0; p < h * w; ++p) var += std::pow(x[(ch * nt + t) * h * w + p] - mean, 2);
      var /= n;
      for (int64_t ch = grp * 2; ch < grp * 2 + 2; ++ch)
        for (int64_t p = 0; p < h * w; ++p) {
          const int64_t i = (ch * nt + t) * h * w + p;
          EXPECT_NEAR(y[i], (x[i] - mean) / std::sqrt(var + 1e-6) * gamma[ch] + beta[ch], 1e-9);
        }
    }
}

TEST(GroupNorm, GradientMatchesFiniteDifferences) {
  const auto x = randn({4, 2, 2, 2}, 21), gamma = randn({4}, 22), beta = randn({4}, 23), probe = randn({4, 2, 2, 2}, 24);
  auto f = [&](const Var<double>& xv) {
    return ops::sum(ops::mul(ops::group_norm_frames(xv, Var<double>(gamma), Var<double>(beta), 2, 1e-5),
                             Var<double>(probe)));
  };
  Var<double> xv(x, true);
  backward(f(xv));
  const auto g = test::numeric_grad(x, [&](const Tensor<double>& t) { return f(Var<double>(t)).item(); });
  EXPECT_LT(max_abs_diff(xv.grad(), g), 1e-6);
}

TEST(Upsample, KeepFirstFrameGivesOnePlusTwoF) {
  Tensor<double> x({1, 3, 1, 1});
  x[0] = 10;
  x[1] = 20;
  x[2] = 30;
  const auto y = ops::upsample_nearest(Var<double>(x), 2, 2, true).value();
  ASSERT_EQ(y.shape(), (Shape{1, 5, 2, 2}));
  const double want[5] = {10, 20, 20, 30, 30};
  for (int t = 0; t < 5; ++t)
    for (int p = 0; p < 4; ++p) EXPECT_EQ(y[t * 4 + p], want[t]);
  const auto plain = ops::upsample_nearest(Var<double>(x), 2, 1, false).value();
  EXPECT_EQ(plain.dim(1), 6);
}

TEST(Pooling, AveragesTwoByTwoBlocks) {
  Tensor<double> x({1, 1, 2, 4});
  for (int i = 0; i < 8; ++i) x[i] = i;
  const auto y = ops::avg_pool_spatial(Var<double>(x)).value();
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_DOUBLE_EQ(y[0], (0 + 1 + 4 + 5) / 4.0);
  EXPECT_DOUBLE_EQ(y[1], (2 + 3 + 6 + 7) / 4.0);
}

TEST(Attention, MatchesSoftmaxOverPositionsOfEachFrame) {
  const int64_t c = 3, nt = 2, h = 2, w = 2, np = h * w;
  const auto q = randn({c, nt, h, w}, 31), k = randn({c, nt, h, w}, 32), v = randn({c, nt, h, w}, 33);
  const auto y = ops::spatial_attention(Var<double>(q), Var<double>(k), Var<double>(v)).value();
  auto at = [&](const Tensor<double>& a, int64_t ch, int64_t t, int64_t p) { return a[(ch * nt + t) * np + p]; };
  for (int64_t t = 0; t < nt; ++t)
    for (int64_t i = 0; i < np; ++i) {
      std::vector<double> s(np);
      double mx = -1e300, z = 0;
      for (int64_t j = 0; j < np; ++j) {
        for (int64_t ch = 0; ch < c; ++ch) s[j] += at(q, ch, t, i) * at(k, ch, t, j);
        s[j] /= std::sqrt(static_cast<double>(c));
        mx = std::max(mx, s[j]);
      }
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (int64_t ch = 0; ch < c; ++ch) {
        double want = 0;
        for (int64_t j = 0; j < np; ++j) want += s[j] / z * at(v, ch, t, j);
        EXPECT_NEAR(at(y, ch, t, i), want, 1e-12);
      }
    }
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  const auto q = randn({2, 1, 2, 2}, 41), k = randn({2, 1, 2, 2}, 42), v = randn({2, 1, 2, 2}, 43);
  const auto probe = randn({2, 1, 2, 2}, 44);
  auto f = [&](const Var<double>& qv, const Var<double>& kv) {
    return ops::sum(ops::mul(ops::spatial_attention(qv, kv, Var<double>(v)), Var<double>(probe)));
  };
  Var<double> qv(q, true), kv(k, true);
  backward(f(qv, kv));
  EXPECT_LT(max_abs_diff(qv.grad(), test::numeric_grad(q, [&](const Tensor<double>& t) {
              return f(Var<double>(t), Var<double>(k)).item();
            })),
            1e-6);
  EXPECT_LT(max_abs_diff(kv.grad(), test::numeric_grad(k, [&](const Tensor<double>& t) {
              return f(Var<double>(q), Var<double>(t)).item();
            })),
            1e-6);
}

TEST(ChannelNormalize, UnitLengthAndGradient) {
  const auto x = randn({5, 1, 2, 3}, 51), probe = randn({5, 1, 2, 3}, 52);
  const auto y = ops::channel_unit_normalize(Var<double>(x), 1e-6).value();
  for (int64_t p = 0; p < 6; ++p) {
    double n = 0, nx = 0;
    for (int64_t c = 0; c < 5; ++c) {
      n += y[c * 6 + p] * y[c * 6 + p];
      nx += x[c * 6 + p] * x[c * 6 + p];
    }
    EXPECT_NEAR(n, nx / (nx + 1e-6), 1e-12);
  }
  auto f = [&](const Var<double>& v) {
    return ops::sum(ops::mul(ops::channel_unit_normalize(v, 1e-6), Var<double>(probe)));
  };
  Var<double> xv(x, true);
  backward(f(xv));
  EXPECT_LT(max_abs_diff(xv.grad(), test::numeric_grad(x, [&](const Tensor<double>& t) { return f(Var<double>(t)).item(); })),
            1e-6);
}

TEST(Ops, ConcatSliceRoundTrip) {
  const auto a = randn({2, 3, 2, 2}, 61), b = randn({2, 1, 2, 2}, 62);
  const auto cat = ops::concat(Var<double>(a), Var<double>(b), 1);
  EXPECT_EQ(cat.shape(), (Shape{2, 4, 2, 2}));
  EXPECT_EQ(max_abs_diff(ops::slice(cat, 1, 0, 3).value(), a), 0.0);
  EXPECT_EQ(max_abs_diff(ops::slice(cat, 1, 3, 4).value(), b), 0.0);
  EXPECT_THROW(ops::concat(Var<double>(a), Var<double>(randn({3, 1, 2, 2}, 63)), 1), ShapeError);
}

TEST(Ops, KlOfStandardNormalIsZero) {
  Tensor<double> zero({2, 3});
  EXPECT_EQ(ops::kl_standard_normal(Var<double>(zero), Var<double>(zero)).item(), 0.0);
}

TEST(Autograd, SharedSubgraphAccumulatesAndNoGradSkipsTape) {
  Var<double> x(Tensor<double>({1}, 3.0), true);
  const auto y = ops::mul(x, x);
  backward(ops::sum(ops::add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
  NoGradGuard ng;
  Var<double> z(Tensor<double>({1}, 2.0), true);
  EXPECT_FALSE(ops::mul(z, z).requires_grad());
}

TEST(Layout, ChannelsFirstRoundTrip) {
  const auto x = standard_normal<float>({3, 4, 5, 6}, 71);
  const auto cf = to_channels_first(x);
  EXPECT_EQ(cf.shape(), (Shape{6, 3, 4, 5}));
  EXPECT_EQ(cf[((2 * 3 + 1) * 4 + 3) * 5 + 4], x[((1 * 4 + 3) * 5 + 4) * 6 + 2]);
  EXPECT_EQ(max_abs_diff(to_channels_last(cf), x), 0.f);
}

}  // namespace
}  // namespace cdt
