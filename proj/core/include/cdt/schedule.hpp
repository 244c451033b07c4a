#pragma once

#include <vector>

#include "cdt/tensor.hpp"

namespace cdt {

/// Diffusion timestep. 0 is clean data, T is the prior.
using Timestep = int;

/// Precomputed cosine noise schedule over T steps. The tables are 0-based:
/// entry i describes public timestep i + 1.
class NoiseSchedule {
 public:
  static constexpr double kOffset = 0.008;
  static constexpr double kMaxBeta = 0.999;

  explicit NoiseSchedule(int steps);

  int steps() const { return static_cast<int>(betas_.size()); }
  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  /// Cumulative signal fraction at public timestep t; alpha_bar(0) == 1.
  double alpha_bar(Timestep t) const;
  /// Throws RangeError unless lo <= t <= T.
  void check_timestep(Timestep t, int lo = 1) const;

 private:
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

NoiseSchedule cosine_schedule(int steps);

/// Squared-cosine signal profile, f(0) == 1.
double cosine_profile(double u);

/// V_t = sqrt(abar_t) V_0 + sqrt(1 - abar_t) eps, for 1 <= t <= T.
template <typename T>
Tensor<T> q_sample(const Tensor<T>& v0, Timestep t, const Tensor<T>& eps, const NoiseSchedule& sched);

/// abar_t / (1 - abar_t): converts noise-space squared error to clean-space.
double snr_weight(Timestep t, const NoiseSchedule& sched);

/// Noise implied by a clean-data prediction: (V_t - sqrt(abar_t) V0_hat) / sqrt(1 - abar_t).
template <typename T>
Tensor<T> eps_from_x0(const Tensor<T>& v_t, const Tensor<T>& v0_hat, Timestep t, const NoiseSchedule& sched);

}  // namespace cdt
