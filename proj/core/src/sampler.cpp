#include "cdt/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "cdt/rng.hpp"
#include "cdt/stream.hpp"

namespace cdt {

namespace {
constexpr uint64_t kPriorStream = 0x5052494fULL;
}

TimeGrid make_time_grid(int n, int total_steps) {
  if (total_steps < 1) throw RangeError("time grid needs T >= 1");
  if (n < 1 || n > total_steps) {
    throw RangeError("DDIM steps must be in [1, " + std::to_string(total_steps) + "], got " + std::to_string(n));
  }
  TimeGrid g;
  for (int i = 0; i <= n; ++i) {
    const auto tau = static_cast<Timestep>(std::llround(static_cast<double>(i) * total_steps / n));
    if (g.taus.empty() || tau > g.taus.back()) g.taus.push_back(tau);
  }
  g.taus.front() = 0;
  g.taus.back() = total_steps;
  return g;
}

VideoTensor ddim_step(const VideoTensor& v_tau, Timestep tau_n, Timestep tau_prev, const DenoiseFn& predictor,
                      const NoiseSchedule& sched) {
  sched.check_timestep(tau_n);
  if (tau_prev < 0 || tau_prev >= tau_n) {
    throw RangeError("DDIM step needs 0 <= tau_prev < tau_n, got " + std::to_string(tau_prev) + " -> " +
                     std::to_string(tau_n));
  }
  VideoTensor x0 = predictor(v_tau, tau_n);
  require_same_shape(x0.data, v_tau.data, "ddim_step");
  if (tau_prev == 0) return x0;

  const double ab_n = sched.alpha_bar(tau_n);
  const double ab_p = sched.alpha_bar(tau_prev);
  const double sa_n = std::sqrt(ab_n), sn_n = std::sqrt(1.0 - ab_n);
  const double sa_p = std::sqrt(ab_p), sn_p = std::sqrt(1.0 - ab_p);
  Tensor<float> out(v_tau.data.shape());
  for (int64_t i = 0; i < out.numel(); ++i) {
    const double x = x0.data[i];
    const double eps = (static_cast<double>(v_tau.data[i]) - sa_n * x) / sn_n;
    out[i] = static_cast<float>(sa_p * x + sn_p * eps);
  }
  return VideoTensor(std::move(out), v_tau.fps);
}

namespace {

DenoiseFn bind_model(const Latent& z, const Tokenizer<float>& model, bool streaming) {
  return [&z, &model, streaming](const VideoTensor& v, Timestep t) {
    return streaming ? stream_denoise(v, z, t, model) : denoise(v, z, t, model);
  };
}

}  // namespace

VideoTensor ddim_step(const VideoTensor& v_tau, const Latent& z, Timestep tau_n, Timestep tau_prev,
                      const Tokenizer<float>& model) {
  return ddim_step(v_tau, tau_n, tau_prev, bind_model(z, model, false), model.denoiser().schedule());
}

Shape video_shape_for_latent(const Shape& latent_shape) {
  if (latent_shape.size() != 4 || latent_shape[0] < 1 || latent_shape[1] < 1 || latent_shape[2] < 1) {
    throw ShapeError("latent must be (t, h, w, c), got " + shape_str(latent_shape));
  }
  return {1 + kTemporalCompression * (latent_shape[0] - 1), kSpatialCompression * latent_shape[1],
          kSpatialCompression * latent_shape[2], 3};
}

VideoTensor decode_latent(const Shape& video_shape, int steps, uint64_t seed, const DenoiseFn& predictor,
                          const NoiseSchedule& sched) {
  const TimeGrid grid = make_time_grid(steps, sched.steps());
  VideoTensor v(standard_normal<float>(video_shape, derive_seed(seed, {kPriorStream})));
  for (int n = grid.steps(); n >= 1; --n) {
    v = ddim_step(v, grid.taus[static_cast<std::size_t>(n)], grid.taus[static_cast<std::size_t>(n - 1)], predictor,
                  sched);
  }
  return v;
}

VideoTensor decode_latent(const Latent& z, int steps, uint64_t seed, const Tokenizer<float>& model,
                          const SamplerOptions& opt) {
  return decode_latent(video_shape_for_latent(z.z.shape()), steps, seed, bind_model(z, model, opt.streaming),
                       model.denoiser().schedule());
}

VideoTensor reconstruct(const VideoTensor& v0, int steps, uint64_t seed, const Tokenizer<float>& model,
                        const SamplerOptions& opt) {
  const LatentPosterior post = opt.streaming ? stream_encode(v0, model) : encode(v0, model);
  const Latent z = sample_latent(post, std::nullopt);
  VideoTensor out = decode_latent(z, steps, seed, model, opt);
  out.fps = v0.fps;
  return out;
}

}  // namespace cdt
