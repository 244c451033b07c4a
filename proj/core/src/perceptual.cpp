#include "cdt/perceptual.hpp"

#include <cmath>
#include <cstdlib>

#include "cdt/data_io.hpp"
#include "cdt/ops.hpp"
#include "cdt/rng.hpp"

#ifndef CDT_DEFAULT_PERCEPTUAL_DIR
#define CDT_DEFAULT_PERCEPTUAL_DIR "assets/perceptual"
#endif

namespace cdt {

namespace {

using Kernel = std::array<double, 9>;

Kernel outer(const std::array<double, 3>& col, const std::array<double, 3>& row) {
  Kernel k{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) k[static_cast<std::size_t>(i * 3 + j)] = col[static_cast<std::size_t>(i)] * row[static_cast<std::size_t>(j)];
  return k;
}

void normalize_rows(Tensor<float>& w) {
  const int64_t co = w.dim(0), k = w.numel() / co;
  for (int64_t o = 0; o < co; ++o) {
    float* r = w.data() + o * k;
    double mean = 0.0, norm = 0.0;
    for (int64_t i = 0; i < k; ++i) mean += r[i];
    mean /= static_cast<double>(k);
    for (int64_t i = 0; i < k; ++i) norm += (r[i] - mean) * (r[i] - mean);
    norm = std::sqrt(norm);
    for (int64_t i = 0; i < k; ++i) r[i] = static_cast<float>((r[i] - mean) / norm);
  }
}

const char* const kNames[PerceptualNet::kLayers] = {"conv1", "conv2", "conv3"};

}  // namespace

PerceptualNet PerceptualNet::generate(uint64_t seed) {
  PerceptualNet net;
  const Kernel smooth = outer({0.25, 0.5, 0.25}, {0.25, 0.5, 0.25});
  const Kernel dx = outer({1, 2, 1}, {-1, 0, 1});
  const Kernel dy = outer({-1, 0, 1}, {1, 2, 1});
  const Kernel lap{0, 1, 0, 1, -4, 1, 0, 1, 0};
  const std::array<double, 3> lum{1.0 / 3, 1.0 / 3, 1.0 / 3};
  const std::array<double, 3> rg{0.5, -0.5, 0.0};
  const std::array<double, 3> yb{0.25, 0.25, -0.5};
  const std::vector<std::pair<std::array<double, 3>, Kernel>> bank{
      {lum, smooth}, {lum, dx}, {lum, dy}, {lum, lap}, {rg, smooth},
      {rg, dx},      {rg, dy},  {yb, smooth}, {yb, dx}, {yb, dy}};

  Tensor<float> w1({kWidths[1], 3, 1, 3, 3});
  for (std::size_t f = 0; f < bank.size(); ++f) {
    const auto& [mix, k] = bank[f];
    double norm = 0.0;
    for (int c = 0; c < 3; ++c)
      for (double v : k) norm += mix[static_cast<std::size_t>(c)] * mix[static_cast<std::size_t>(c)] * v * v;
    norm = std::sqrt(norm);
    for (int sign = 0; sign < 2; ++sign) {
      float* dst = w1.data() + (2 * static_cast<int64_t>(f) + sign) * 27;
      for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 9; ++i) {
          const double v = mix[static_cast<std::size_t>(c)] * k[static_cast<std::size_t>(i)] / norm;
          dst[c * 9 + i] = static_cast<float>(sign == 0 ? v : -v);
        }
    }
  }
  net.weights[0] = std::move(w1);
  for (int l = 1; l < kLayers; ++l) {
    Tensor<float> w = standard_normal<float>({kWidths[static_cast<std::size_t>(l + 1)], kWidths[static_cast<std::size_t>(l)], 1, 3, 3},
                                             derive_seed(seed, {static_cast<uint64_t>(l)}));
    normalize_rows(w);
    net.weights[static_cast<std::size_t>(l)] = std::move(w);
  }
  for (int l = 0; l < kLayers; ++l) net.biases[static_cast<std::size_t>(l)] = Tensor<float>({kWidths[static_cast<std::size_t>(l + 1)]});
  return net;
}

PerceptualNet PerceptualNet::load(const std::filesystem::path& dir) {
  PerceptualNet net;
  for (int l = 0; l < kLayers; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    const auto wp = dir / (std::string(kNames[l]) + "_weight.cdt");
    const auto bp = dir / (std::string(kNames[l]) + "_bias.cdt");
    if (!std::filesystem::exists(wp) || !std::filesystem::exists(bp)) {
      throw DataError("perceptual weights missing in " + dir.string());
    }
    net.weights[ul] = read_tensor(wp);
    net.biases[ul] = read_tensor(bp);
    const Shape expect{kWidths[ul + 1], kWidths[ul], 1, 3, 3};
    if (net.weights[ul].shape() != expect || net.biases[ul].shape() != Shape{kWidths[ul + 1]}) {
      throw DataError("perceptual weights in " + dir.string() + " have unexpected shapes");
    }
  }
  return net;
}

void PerceptualNet::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (int l = 0; l < kLayers; ++l) {
    write_tensor(dir / (std::string(kNames[l]) + "_weight.cdt"), weights[static_cast<std::size_t>(l)]);
    write_tensor(dir / (std::string(kNames[l]) + "_bias.cdt"), biases[static_cast<std::size_t>(l)]);
  }
}

std::filesystem::path default_perceptual_dir() {
  if (const char* env = std::getenv("CDT_PERCEPTUAL_DIR"); env != nullptr && *env != '\0') return env;
  return CDT_DEFAULT_PERCEPTUAL_DIR;
}

template <typename T>
Var<T> perceptual_distance(const PerceptualNet& net, const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "perceptual_distance");
  if (a.value().rank() != 4 || a.dim(0) != 3 || a.dim(2) % 4 != 0 || a.dim(3) % 4 != 0) {
    throw ShapeError("perceptual distance needs (3, T, H, W) with H, W divisible by 4, got " + shape_str(a.shape()));
  }
  ops::ConvGeometry g;
  g.pad_front = {0, 1, 1};
  g.pad_back = {0, 1, 1};
  const T delta = static_cast<T>(PerceptualNet::kNormDelta);
  Var<T> fa = a, fb = b, total;
  for (int l = 0; l < PerceptualNet::kLayers; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    const Var<T> w(net.weights[ul].template cast<T>());
    const Var<T> bias(net.biases[ul].template cast<T>());
    if (l > 0) {
      fa = ops::avg_pool_spatial(fa);
      fb = ops::avg_pool_spatial(fb);
    }
    fa = ops::relu(ops::conv3d(fa, w, bias, g));
    fb = ops::relu(ops::conv3d(fb, w, bias, g));
    const Var<T> term = ops::scale(ops::mse(ops::channel_unit_normalize(fa, delta), ops::channel_unit_normalize(fb, delta)),
                                   static_cast<T>(PerceptualNet::kWidths[ul + 1]));
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

double lpips_loss(const VideoTensor& v0, const VideoTensor& v_hat, const PerceptualNet& net) {
  require_same_shape(v0.data, v_hat.data, "lpips_loss");
  NoGradGuard ng;
  const Var<double> a(to_channels_first(v0.data).cast<double>());
  const Var<double> b(to_channels_first(v_hat.data).cast<double>());
  return perceptual_distance(net, a, b).item();
}

template Var<float> perceptual_distance(const PerceptualNet&, const Var<float>&, const Var<float>&);
template Var<double> perceptual_distance(const PerceptualNet&, const Var<double>&, const Var<double>&);

}  // namespace cdt
