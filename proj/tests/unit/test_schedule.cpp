#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cdt/rng.hpp"
#include "cdt/schedule.hpp"
#include "test_util.hpp"

namespace cdt {
namespace {

// Direct evaluation of the closed form, independent of the cumulative product:
// abar(t) = f(t/T) / f(0) while no beta is clipped; the last step takes the 0.999 cap.
long double closed_form_alpha_bar(int t, int steps) {
  const long double s = 0.008L, half_pi = std::numbers::pi_v<long double> / 2;
  auto f = [&](long double u) {
    const long double c = std::cos((u + s) / (1 + s) * half_pi);
    return c * c;
  };
  if (t < steps) return f(static_cast<long double>(t) / steps) / f(0);
  const long double before = f(static_cast<long double>(steps - 1) / steps) / f(0);
  return before * (1 - 0.999L);
}

TEST(Schedule, MatchesClosedFormAtEveryStep) {
  for (int steps : {1000, 1024, 8192}) {
    const NoiseSchedule s = cosine_schedule(steps);
    for (int t = 1; t <= steps; ++t) {
      const long double want = closed_form_alpha_bar(t, steps);
      ASSERT_LT(std::fabs((s.alpha_bar(t) - want) / want), 1e-10L) << "T=" << steps << " t=" << t;
    }
  }
}

TEST(Schedule, MatchesHighPrecisionReference) {
  const auto ref = test::oracle()["alpha_bar"];
  for (const auto& [steps, table] : ref.items()) {
    const NoiseSchedule s = cosine_schedule(std::stoi(steps));
    for (const auto& [t, v] : table.items()) {
      const double want = v.get<double>();
      EXPECT_LT(std::fabs(s.alpha_bar(std::stoi(t)) / want - 1), 1e-12) << steps << "/" << t;
    }
  }
}

TEST(Schedule, EndpointsAndMonotonicity) {
  const NoiseSchedule s = cosine_schedule(1000);
  EXPECT_GT(s.alpha_bar(1), 0.9999);
  EXPECT_LT(s.alpha_bar(1000), 1e-4);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  for (int steps : {1024, 8192}) {
    const NoiseSchedule big = cosine_schedule(steps);
    for (int t = 1; t <= steps; ++t) ASSERT_LT(big.alpha_bar(t), big.alpha_bar(t - 1));
    for (double b : big.betas()) ASSERT_LE(b, NoiseSchedule::kMaxBeta);
  }
  EXPECT_THROW(cosine_schedule(0), RangeError);
  EXPECT_THROW(s.alpha_bar(1001), RangeError);
  EXPECT_THROW(s.alpha_bar(-1), RangeError);
}

TEST(QSample, ZeroNoiseScalesSignal) {
  const NoiseSchedule s = cosine_schedule(64);
  const auto v0 = standard_normal<double>({2, 3, 4}, 1);
  const Tensor<double> eps(v0.shape());
  const auto vt = q_sample(v0, 17, eps, s);
  for (int64_t i = 0; i < v0.numel(); ++i) EXPECT_EQ(vt[i], std::sqrt(s.alpha_bar(17)) * v0[i]);
}

TEST(QSample, NearCleanAtFirstStepOfLongSchedule) {
  const NoiseSchedule s = cosine_schedule(8192);
  const auto v0 = standard_normal<float>({64}, 2), eps = standard_normal<float>({64}, 3);
  EXPECT_LT(max_abs_diff(q_sample(v0, 1, eps, s), v0), 1e-2f);
}

TEST(QSample, MatchesScalarLoopAtMidpoint) {
  const NoiseSchedule s = cosine_schedule(1024);
  const auto v0 = standard_normal<double>({3, 5, 7}, 4), eps = standard_normal<double>({3, 5, 7}, 5);
  const auto vt = q_sample(v0, 512, eps, s);
  const double ab = static_cast<double>(closed_form_alpha_bar(512, 1024));
  for (int64_t i = 0; i < v0.numel(); ++i) EXPECT_NEAR(vt[i], std::sqrt(ab) * v0[i] + std::sqrt(1 - ab) * eps[i], 1e-12);
  EXPECT_THROW(q_sample(v0, 0, eps, s), RangeError);
  EXPECT_THROW(q_sample(v0, 1, standard_normal<double>({2}, 6), s), ShapeError);
}

TEST(SnrWeight, ValuesAndStrictDecrease) {
  const NoiseSchedule s = cosine_schedule(8192);
  for (int t = 1; t < 8192; ++t) ASSERT_GT(snr_weight(t, s), snr_weight(t + 1, s));
  // Timesteps where abar crosses 0.5 and 0.999 give weights near 1 and 999.
  int mid = 1;
  while (s.alpha_bar(mid) > 0.5) ++mid;
  const double ab = s.alpha_bar(mid);
  EXPECT_NEAR(snr_weight(mid, s), ab / (1 - ab), 1e-12);
  EXPECT_NEAR(snr_weight(mid, s), 1.0, 2e-3);
}

TEST(EpsFromX0, RoundTripAndZeroSignal) {
  const NoiseSchedule s = cosine_schedule(1024);
  const auto v0 = standard_normal<double>({4, 6}, 7), eps = standard_normal<double>({4, 6}, 8);
  for (int t : {1, 300, 1000}) {
    const auto vt = q_sample(v0, t, eps, s);
    EXPECT_LT(max_abs_diff(eps_from_x0(vt, v0, t, s), eps), 1e-6);
  }
  const Tensor<double> zero(eps.shape());
  const auto vt = q_sample(zero, 200, eps, s);
  EXPECT_LT(max_abs_diff(eps_from_x0(vt, zero, 200, s), eps), 1e-12);
}

TEST(EpsFromX0, NoiseErrorEqualsWeightedCleanError) {
  const NoiseSchedule s = cosine_schedule(1024);
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int t = 1 + static_cast<int>(rng() % 1024);
    const auto v0 = standard_normal<double>({16}, rng()), eps = standard_normal<double>({16}, rng());
    const auto v0_hat = standard_normal<double>({16}, rng());
    const auto vt = q_sample(v0, t, eps, s);
    const auto eps_hat = eps_from_x0(vt, v0_hat, t, s);
    double lhs = 0, rhs = 0;
    for (int i = 0; i < 16; ++i) {
      lhs += (eps[i] - eps_hat[i]) * (eps[i] - eps_hat[i]);
      rhs += (v0[i] - v0_hat[i]) * (v0[i] - v0_hat[i]);
    }
    rhs *= snr_weight(t, s);
    ASSERT_LT(std::fabs(lhs - rhs) / rhs, 1e-5) << "t=" << t;
  }
}

}  // namespace
}  // namespace cdt
