#include <benchmark/benchmark.h>

#include <memory>

#include "cdt/model.hpp"
#include "cdt/ops.hpp"
#include "cdt/rng.hpp"
#include "cdt/sampler.hpp"
#include "cdt/stream.hpp"

using namespace cdt;

namespace {

VideoTensor clip(int64_t frames, int64_t side, uint64_t seed) {
  Rng rng(seed);
  return VideoTensor(uniform<float>({frames, side, side, 3}, -1.f, 1.f, rng));
}

const Tokenizer<float>& toy_model() {
  static const auto m = [] {
    auto t = std::make_unique<Tokenizer<float>>(ModelConfig::toy());
    t->initialize(1, InitMode::kRandomized);
    return t;
  }();
  return *m;
}

// 3x3x3 causal conv at the toy model's widest activation.
void BM_Conv3d(benchmark::State& state) {
  const int64_t c = state.range(0);
  NoGradGuard ng;
  Var<float> x(standard_normal<float>({c, 9, 64, 64}, 1));
  Var<float> w(standard_normal<float>({c, c, 3, 3, 3}, 2));
  Var<float> b(Tensor<float>({c}));
  ops::ConvGeometry g;
  g.pad_front = {2, 1, 1};
  g.pad_back = {0, 1, 1};
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv3d(x, w, b, g));
  state.SetItemsProcessed(state.iterations() * c * c * 27 * 9 * 64 * 64);
}
BENCHMARK(BM_Conv3d)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_Encode(benchmark::State& state) {
  const VideoTensor v = clip(9, 64, 3);
  for (auto _ : state) benchmark::DoNotOptimize(encode(v, toy_model()));
}
BENCHMARK(BM_Encode)->Unit(benchmark::kMillisecond);

void BM_DenoiserForward(benchmark::State& state) {
  const VideoTensor v = clip(9, 64, 4);
  const Latent z{encode(v, toy_model()).mean};
  for (auto _ : state) benchmark::DoNotOptimize(denoise(v, z, 512, toy_model()));
}
BENCHMARK(BM_DenoiserForward)->Unit(benchmark::kMillisecond);

void BM_Reconstruct(benchmark::State& state) {
  const VideoTensor v = clip(9, 64, 5);
  const int steps = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(reconstruct(v, steps, 0, toy_model()));
}
BENCHMARK(BM_Reconstruct)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

// Per-frame throughput of chunked encoding and denoising over longer clips.
void BM_StreamEncode(benchmark::State& state) {
  const VideoTensor v = clip(1 + state.range(0), 64, 6);
  for (auto _ : state) benchmark::DoNotOptimize(stream_encode(v, toy_model()));
  state.SetItemsProcessed(state.iterations() * (1 + state.range(0)));
}
BENCHMARK(BM_StreamEncode)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_StreamDenoise(benchmark::State& state) {
  const VideoTensor v = clip(1 + state.range(0), 64, 7);
  const Latent z{stream_encode(v, toy_model()).mean};
  for (auto _ : state) benchmark::DoNotOptimize(stream_denoise(v, z, 512, toy_model()));
  state.SetItemsProcessed(state.iterations() * (1 + state.range(0)));
}
BENCHMARK(BM_StreamDenoise)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
