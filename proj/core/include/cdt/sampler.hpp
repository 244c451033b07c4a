#pragma once

#include <functional>
#include <vector>

#include "cdt/model.hpp"

namespace cdt {

/// 0 = tau_0 < tau_1 < ... < tau_N = T.
struct TimeGrid {
  std::vector<Timestep> taus;
  int steps() const { return static_cast<int>(taus.size()) - 1; }
};

/// tau_i = round(i T / N), duplicates removed, endpoints pinned.
TimeGrid make_time_grid(int n, int total_steps);

/// Clean-clip predictor V_theta(v, t) with the latent already bound.
using DenoiseFn = std::function<VideoTensor(const VideoTensor&, Timestep)>;

/// Deterministic DDIM update from tau_n to tau_prev < tau_n. Returns the
/// clean prediction itself when tau_prev is 0.
VideoTensor ddim_step(const VideoTensor& v_tau, Timestep tau_n, Timestep tau_prev, const DenoiseFn& predictor,
                      const NoiseSchedule& sched);
VideoTensor ddim_step(const VideoTensor& v_tau, const Latent& z, Timestep tau_n, Timestep tau_prev,
                      const Tokenizer<float>& model);

struct SamplerOptions {
  /// Run every denoiser call chunk by chunk.
  bool streaming = false;
};

/// Clip shape (1 + 4(t-1), 8h, 8w, 3) decoded from a latent (t, h, w, c).
Shape video_shape_for_latent(const Shape& latent_shape);

/// Draws V_T from the seed and walks the N-step grid down to a clean clip.
VideoTensor decode_latent(const Latent& z, int steps, uint64_t seed, const Tokenizer<float>& model,
                          const SamplerOptions& opt = {});
VideoTensor decode_latent(const Shape& video_shape, int steps, uint64_t seed, const DenoiseFn& predictor,
                          const NoiseSchedule& sched);

/// Encode with the posterior mean, then decode_latent.
VideoTensor reconstruct(const VideoTensor& v0, int steps, uint64_t seed, const Tokenizer<float>& model,
                        const SamplerOptions& opt = {});

}  // namespace cdt
