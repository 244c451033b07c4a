#include "cdt/stream.hpp"

#include <cstring>

namespace cdt {

namespace {

/// Frames [begin, end) of a channels-last (T, ...) tensor.
Tensor<float> frame_range(const Tensor<float>& x, int64_t begin, int64_t end) {
  Shape s = x.shape();
  const int64_t per = x.numel() / s[0];
  s[0] = end - begin;
  return Tensor<float>(s, std::span<const float>(x.data() + begin * per, static_cast<std::size_t>((end - begin) * per)));
}

/// Concatenates channels-first (C, T_i, H, W) tensors along T.
Tensor<float> join_time(const std::vector<Tensor<float>>& parts) {
  const Shape& s0 = parts.front().shape();
  int64_t total = 0;
  for (const auto& p : parts) total += p.dim(1);
  const int64_t plane = s0[2] * s0[3];
  Tensor<float> out({s0[0], total, s0[2], s0[3]});
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t nt = p.dim(1);
    for (int64_t c = 0; c < s0[0]; ++c) {
      std::memcpy(out.data() + (c * total + offset) * plane, p.data() + c * nt * plane,
                  static_cast<std::size_t>(nt * plane) * sizeof(float));
    }
    offset += nt;
  }
  return out;
}

int64_t chunk_begin(int64_t k) { return k == 0 ? 0 : 1 + (k - 1) * kTemporalCompression; }
int64_t chunk_end(int64_t k) { return 1 + k * kTemporalCompression; }

struct ChunkMeter {
  StreamStats* stats;
  int64_t base = 0;

  void begin() {
    base = memory_meter::live_bytes();
    memory_meter::reset_peak();
  }
  void end(const CacheState<float>& cache) {
    if (stats == nullptr) return;
    stats->chunks += 1;
    stats->peak_chunk_bytes = std::max(stats->peak_chunk_bytes, memory_meter::peak_bytes() - base);
    stats->max_cached_frames = std::max(stats->max_cached_frames, cache.cached_frames());
  }
};

}  // namespace

std::vector<Chunk> chunk_video(const VideoTensor& v) {
  v.validate();
  const int64_t n = 1 + (v.frames() - 1) / kTemporalCompression;
  std::vector<Chunk> chunks;
  chunks.reserve(static_cast<std::size_t>(n));
  for (int64_t k = 0; k < n; ++k) {
    chunks.push_back({VideoTensor(frame_range(v.data, chunk_begin(k), chunk_end(k)), v.fps), k});
  }
  return chunks;
}

VideoTensor join_chunks(const std::vector<Chunk>& chunks) {
  if (chunks.empty()) throw ShapeError("join_chunks: no chunks");
  Shape s = chunks.front().frames.data.shape();
  int64_t total = 0;
  for (const auto& c : chunks) total += c.frames.frames();
  s[0] = total;
  Tensor<float> out(s);
  float* dst = out.data();
  for (const auto& c : chunks) {
    std::memcpy(dst, c.frames.data.data(), static_cast<std::size_t>(c.frames.data.numel()) * sizeof(float));
    dst += c.frames.data.numel();
  }
  return VideoTensor(std::move(out), chunks.front().frames.fps);
}

LatentPosterior stream_encode(const VideoTensor& v, const Tokenizer<float>& model, StreamStats* stats,
                              const ChunkObserver& observer) {
  NoGradGuard ng;
  v.validate();
  const int64_t n = 1 + (v.frames() - 1) / kTemporalCompression;
  CacheState<float> cache(model.encoder_cache_layout());
  std::vector<Tensor<float>> means, logvars;
  ChunkMeter meter{stats};
  for (int64_t k = 0; k < n; ++k) {
    meter.begin();
    const Var<float> x(to_channels_first(frame_range(v.data, chunk_begin(k), chunk_end(k))));
    auto [mean, logvar] = model.encoder().forward(x, &cache);
    means.push_back(mean.value());
    logvars.push_back(logvar.value());
    meter.end(cache);
    if (observer) observer(k, cache);
  }
  return {to_channels_last(join_time(means)), to_channels_last(join_time(logvars))};
}

VideoTensor stream_denoise(const VideoTensor& v_t, const Latent& z, Timestep t, const Tokenizer<float>& model,
                           StreamStats* stats, const ChunkObserver& observer) {
  NoGradGuard ng;
  v_t.validate();
  const LatentGrid g = latent_grid(v_t.frames(), v_t.height(), v_t.width());
  if (z.z.rank() != 4 || z.z.dim(0) != g.frames || z.z.dim(1) != g.height || z.z.dim(2) != g.width ||
      z.z.dim(3) != model.config().latent_dim) {
    throw ShapeError("latent " + shape_str(z.z.shape()) + " does not match clip " + shape_str(v_t.data.shape()));
  }
  model.denoiser().schedule().check_timestep(t);
  CacheState<float> cache(model.decoder_cache_layout());
  std::vector<Tensor<float>> outs;
  ChunkMeter meter{stats};
  for (int64_t k = 0; k < g.frames; ++k) {
    meter.begin();
    const Var<float> x(to_channels_first(frame_range(v_t.data, chunk_begin(k), chunk_end(k))));
    const Var<float> zk(to_channels_first(frame_range(z.z, k, k + 1)));
    outs.push_back(model.denoiser().forward(x, zk, t, &cache).value());
    meter.end(cache);
    if (observer) observer(k, cache);
  }
  model.denoiser().note_call();
  return VideoTensor(to_channels_last(join_time(outs)), v_t.fps);
}

}  // namespace cdt
