#pragma once

#include <functional>
#include <vector>

#include "cdt/model.hpp"

namespace cdt {

/// Streaming unit: chunk 0 holds the first frame, every later chunk 4 frames.
struct Chunk {
  VideoTensor frames;
  int64_t index = 0;
};

/// Lossless (1, 4, 4, ...) partition of a clip. Rejects ragged tails.
std::vector<Chunk> chunk_video(const VideoTensor& v);

/// Inverse of chunk_video.
VideoTensor join_chunks(const std::vector<Chunk>& chunks);

struct StreamStats {
  int64_t chunks = 0;
  /// Largest growth of live tensor bytes while processing a single chunk.
  int64_t peak_chunk_bytes = 0;
  /// Largest number of frames held by the cache after any chunk.
  int64_t max_cached_frames = 0;
};

/// Called after each chunk with the chunk index and the cache it left behind.
using ChunkObserver = std::function<void(int64_t, const CacheState<float>&)>;

/// Chunk-by-chunk encode with a fresh cache. Matches encode() up to float
/// accumulation order.
LatentPosterior stream_encode(const VideoTensor& v, const Tokenizer<float>& model, StreamStats* stats = nullptr,
                              const ChunkObserver& observer = {});

/// Chunk-by-chunk clean-clip prediction. Counts as a single denoiser call.
VideoTensor stream_denoise(const VideoTensor& v_t, const Latent& z, Timestep t, const Tokenizer<float>& model,
                           StreamStats* stats = nullptr, const ChunkObserver& observer = {});

}  // namespace cdt
