#include "cdt/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace cdt {

double cosine_profile(double u) {
  const double s = NoiseSchedule::kOffset;
  const double c = std::cos((u + s) / (1.0 + s) * std::numbers::pi / 2.0);
  const double c0 = std::cos(s / (1.0 + s) * std::numbers::pi / 2.0);
  return (c * c) / (c0 * c0);
}

NoiseSchedule::NoiseSchedule(int steps) {
  if (steps < 1) throw RangeError("noise schedule needs at least one step, got " + std::to_string(steps));
  betas_.resize(static_cast<std::size_t>(steps));
  alphas_.resize(betas_.size());
  alpha_bars_.resize(betas_.size());
  double prev = cosine_profile(0.0);
  double bar = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double cur = cosine_profile(static_cast<double>(i + 1) / steps);
    const double beta = std::min(1.0 - cur / prev, kMaxBeta);
    betas_[static_cast<std::size_t>(i)] = beta;
    alphas_[static_cast<std::size_t>(i)] = 1.0 - beta;
    bar *= 1.0 - beta;
    alpha_bars_[static_cast<std::size_t>(i)] = bar;
    prev = cur;
  }
}

double NoiseSchedule::alpha_bar(Timestep t) const {
  check_timestep(t, 0);
  return t == 0 ? 1.0 : alpha_bars_[static_cast<std::size_t>(t - 1)];
}

void NoiseSchedule::check_timestep(Timestep t, int lo) const {
  if (t < lo || t > steps()) {
    throw RangeError("timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                     std::to_string(steps()) + "]");
  }
}

NoiseSchedule cosine_schedule(int steps) { return NoiseSchedule(steps); }

template <typename T>
Tensor<T> q_sample(const Tensor<T>& v0, Timestep t, const Tensor<T>& eps, const NoiseSchedule& sched) {
  require_same_shape(v0, eps, "q_sample");
  sched.check_timestep(t);
  const double ab = sched.alpha_bar(t);
  const T a = static_cast<T>(std::sqrt(ab));
  const T b = static_cast<T>(std::sqrt(1.0 - ab));
  Tensor<T> out(v0.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = a * v0[i] + b * eps[i];
  return out;
}

double snr_weight(Timestep t, const NoiseSchedule& sched) {
  sched.check_timestep(t);
  const double ab = sched.alpha_bar(t);
  return ab / (1.0 - ab);
}

template <typename T>
Tensor<T> eps_from_x0(const Tensor<T>& v_t, const Tensor<T>& v0_hat, Timestep t, const NoiseSchedule& sched) {
  require_same_shape(v_t, v0_hat, "eps_from_x0");
  sched.check_timestep(t);
  const double ab = sched.alpha_bar(t);
  const T a = static_cast<T>(std::sqrt(ab));
  const T inv = static_cast<T>(1.0 / std::sqrt(1.0 - ab));
  Tensor<T> out(v_t.shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = (v_t[i] - a * v0_hat[i]) * inv;
  return out;
}

template Tensor<float> q_sample(const Tensor<float>&, Timestep, const Tensor<float>&, const NoiseSchedule&);
template Tensor<double> q_sample(const Tensor<double>&, Timestep, const Tensor<double>&, const NoiseSchedule&);
template Tensor<float> eps_from_x0(const Tensor<float>&, const Tensor<float>&, Timestep, const NoiseSchedule&);
template Tensor<double> eps_from_x0(const Tensor<double>&, const Tensor<double>&, Timestep, const NoiseSchedule&);

}  // namespace cdt
