#include <gtest/gtest.h>

#include "cdt/cache.hpp"
#include "cdt/stream.hpp"
#include "test_util.hpp"

namespace cdt {
namespace {

TEST(Chunking, SizesAndLosslessJoin) {
  auto sizes = [](int64_t frames) {
    std::vector<int64_t> s;
    for (const auto& c : chunk_video(test::random_clip(frames, 8, 8, 1))) s.push_back(c.frames.frames());
    return s;
  };
  EXPECT_EQ(sizes(17), (std::vector<int64_t>{1, 4, 4, 4, 4}));
  EXPECT_EQ(sizes(1), (std::vector<int64_t>{1}));
  const VideoTensor v = test::random_clip(9, 8, 8, 2);
  const auto chunks = chunk_video(v);
  ASSERT_EQ(chunks.size(), 3u);
  for (std::size_t i = 0; i < chunks.size(); ++i) EXPECT_EQ(chunks[i].index, static_cast<int64_t>(i));
  EXPECT_EQ(join_chunks(chunks).data.values().size(), v.data.values().size());
  EXPECT_EQ(max_abs_diff(join_chunks(chunks).data, v.data), 0.f);
  EXPECT_THROW(chunk_video(test::random_clip(7, 8, 8, 3)), ShapeError);
}

struct CausalConvCase : ::testing::Test {
  CacheLayout layout{{"c", CacheKind::kCausalConv}, {"d", CacheKind::kTemporalDown}};
  Tensor<double> x = standard_normal<double>({3, 17, 4, 4}, 5);
  Var<double> w{standard_normal<double>({2, 3, 3, 3, 3}, 6)};
  Var<double> b{standard_normal<double>({2}, 7)};

  static Var<double> frames(const Tensor<double>& t, int64_t lo, int64_t hi) {
    return ops::slice(Var<double>(t), 1, lo, hi);
  }
};

TEST_F(CausalConvCase, StreamedEqualsWholeSequenceAndCacheHoldsTrailingFrames) {
  ops::ConvGeometry g{{1, 1, 1}, {2, 1, 1}, {0, 1, 1}};
  const auto whole = ops::conv3d(Var<double>(x), w, b, g).value();
  CacheState<double> cache(layout);
  std::vector<Tensor<double>> outs;
  int64_t lo = 0;
  for (int64_t hi : {1, 5, 9, 13, 17}) {
    const auto y = causal_conv_step(frames(x, lo, hi), cache, 0, w, b, {1, 1}, 1).value();
    EXPECT_LT(max_abs_diff(y, ops::slice(Var<double>(whole), 1, lo, hi).value()), 1e-12);
    const auto& held = cache.at(0).frames;
    const Tensor<double> padded = ops::concat(Var<double>(Tensor<double>({3, 2, 4, 4})), Var<double>(x), 1).value();
    EXPECT_EQ(max_abs_diff(held, ops::slice(Var<double>(padded), 1, hi, hi + 2).value()), 0.0);
    lo = hi;
  }
}

TEST_F(CausalConvCase, FirstChunkEqualsZeroPaddedConvOfThatFrame) {
  ops::ConvGeometry g{{1, 1, 1}, {2, 1, 1}, {0, 1, 1}};
  CacheState<double> cache(layout);
  const auto first = frames(x, 0, 1);
  EXPECT_EQ(max_abs_diff(causal_conv_step(first, cache, 0, w, b, {1, 1}, 1).value(),
                         ops::conv3d(first, w, b, g).value()),
            0.0);
}

TEST_F(CausalConvCase, TemporalDownStreamsAndResets) {
  ops::ConvGeometry g{{2, 1, 1}, {2, 1, 1}, {0, 1, 1}};
  const auto whole = ops::conv3d(Var<double>(x), w, b, g).value();
  ASSERT_EQ(whole.dim(1), 9);
  CacheState<double> cache(layout);
  auto run = [&] {
    std::vector<Tensor<double>> outs;
    int64_t lo = 0;
    for (int64_t hi : {1, 5, 9, 13, 17}) {
      outs.push_back(temporal_down_step(frames(x, lo, hi), cache, 1, w, b, {1, 1}, 1).value());
      lo = hi;
    }
    return outs;
  };
  const auto outs = run();
  int64_t at = 0;
  for (const auto& o : outs) {
    EXPECT_LT(max_abs_diff(o, ops::slice(Var<double>(whole), 1, at, at + o.dim(1)).value()), 1e-12);
    at += o.dim(1);
  }
  EXPECT_EQ(at, 9);
  EXPECT_THROW(temporal_down_step(frames(x, 0, 3), cache, 1, w, b, {1, 1}, 1), ShapeError);
  cache.reset();
  const auto again = run();
  for (std::size_t i = 0; i < outs.size(); ++i) EXPECT_EQ(max_abs_diff(outs[i], again[i]), 0.0);
}

TEST(StreamEncode, MatchesWholeClipAndImage) {
  Tokenizer<float> m(ModelConfig::tiny());
  m.initialize(3, InitMode::kRandomized);
  for (int64_t f : {0, 4, 16}) {
    const VideoTensor v = test::random_clip(1 + f, 16, 16, 10 + static_cast<uint64_t>(f));
    const auto a = encode(v, m), b = stream_encode(v, m);
    EXPECT_LT(max_abs_diff(a.mean, b.mean), 1e-4f) << f;
    EXPECT_LT(max_abs_diff(a.logvar, b.logvar), 1e-4f) << f;
  }
}

TEST(StreamDenoise, MatchesWholeClipAndCountsOnce) {
  Tokenizer<float> m(ModelConfig::tiny());
  m.initialize(4, InitMode::kRandomized);
  const VideoTensor v = test::random_clip(9, 16, 16, 20);
  const Latent z{standard_normal<float>({3, 2, 2, 4}, 21)};
  m.denoiser().reset_calls();
  std::vector<int64_t> seen;
  const VideoTensor s = stream_denoise(v, z, 77, m, nullptr, [&](int64_t k, const CacheState<float>&) { seen.push_back(k); });
  EXPECT_EQ(m.denoiser().calls(), 1);
  EXPECT_EQ(seen, (std::vector<int64_t>{0, 1, 2}));
  EXPECT_LT(max_abs_diff(s.data, denoise(v, z, 77, m).data), 1e-4f);
}

TEST(StreamEncode, PerChunkMemoryDoesNotGrowWithLength) {
  Tokenizer<float> m(ModelConfig::tiny());
  m.initialize(5, InitMode::kRandomized);
  std::vector<int64_t> peaks, cached;
  for (int64_t f : {8, 16, 32}) {
    StreamStats st;
    stream_encode(test::random_clip(1 + f, 16, 16, 30), m, &st);
    EXPECT_EQ(st.chunks, 1 + f / 4);
    peaks.push_back(st.peak_chunk_bytes);
    cached.push_back(st.max_cached_frames);
  }
  EXPECT_GT(peaks[0], 0);
  EXPECT_EQ(peaks[0], peaks[1]);
  EXPECT_EQ(peaks[1], peaks[2]);
  EXPECT_EQ(cached[0], cached[2]);
}

}  // namespace
}  // namespace cdt
