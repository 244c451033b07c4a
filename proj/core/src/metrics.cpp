#include "cdt/metrics.hpp"

#include <chrono>
#include <cmath>
#include <ostream>

#include "cdt/sampler.hpp"

namespace cdt {

double psnr(const VideoTensor& a, const VideoTensor& b) {
  require_same_shape(a.data, b.data, "psnr");
  if (a.data.numel() == 0) throw ShapeError("psnr of empty clips");
  double acc = 0.0;
  for (int64_t i = 0; i < a.data.numel(); ++i) {
    const double d = 0.5 * (static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.data.numel());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - (size - 1) / 2.0;
    g[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
    s += g[static_cast<std::size_t>(i)];
  }
  for (double& v : g) v /= s;
  return g;
}

/// Valid separable filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& x, int64_t h, int64_t w, const std::vector<double>& g) {
  const auto k = static_cast<int64_t>(g.size());
  const int64_t oh = h - k + 1, ow = w - k + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h * ow)), out(static_cast<std::size_t>(oh * ow));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x0 = 0; x0 < ow; ++x0) {
      double s = 0.0;
      for (int64_t i = 0; i < k; ++i) s += g[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(y * w + x0 + i)];
      tmp[static_cast<std::size_t>(y * ow + x0)] = s;
    }
  for (int64_t y0 = 0; y0 < oh; ++y0)
    for (int64_t x0 = 0; x0 < ow; ++x0) {
      double s = 0.0;
      for (int64_t i = 0; i < k; ++i) s += g[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>((y0 + i) * ow + x0)];
      out[static_cast<std::size_t>(y0 * ow + x0)] = s;
    }
  return out;
}

}  // namespace

double ssim(const VideoTensor& a, const VideoTensor& b, const SsimOptions& opt) {
  require_same_shape(a.data, b.data, "ssim");
  if (a.data.rank() != 4 || a.data.dim(3) != 3) throw ShapeError("ssim expects (T, H, W, 3) clips");
  const int64_t nt = a.frames(), h = a.height(), w = a.width();
  if (h < opt.window || w < opt.window) {
    throw ShapeError("ssim window " + std::to_string(opt.window) + " larger than frame " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  const std::vector<double> g = gaussian_window(opt.window, opt.sigma);
  const double c1 = opt.k1 * opt.k1, c2 = opt.k2 * opt.k2;
  const auto plane = static_cast<std::size_t>(h * w);
  std::vector<double> pa(plane), pb(plane), paa(plane), pbb(plane), pab(plane);
  double total = 0.0;
  int64_t planes = 0;
  for (int64_t t = 0; t < nt; ++t) {
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t idx = (static_cast<std::size_t>(t) * plane + i) * 3 + static_cast<std::size_t>(c);
        const double x = 0.5 * (static_cast<double>(a.data[static_cast<int64_t>(idx)]) + 1.0);
        const double y = 0.5 * (static_cast<double>(b.data[static_cast<int64_t>(idx)]) + 1.0);
        pa[i] = x;
        pb[i] = y;
        paa[i] = x * x;
        pbb[i] = y * y;
        pab[i] = x * y;
      }
      const auto ma = filter_valid(pa, h, w, g), mb = filter_valid(pb, h, w, g);
      const auto saa = filter_valid(paa, h, w, g), sbb = filter_valid(pbb, h, w, g), sab = filter_valid(pab, h, w, g);
      double acc = 0.0;
      for (std::size_t i = 0; i < ma.size(); ++i) {
        const double va = saa[i] - ma[i] * ma[i];
        const double vb = sbb[i] - mb[i] * mb[i];
        const double cov = sab[i] - ma[i] * mb[i];
        acc += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
      }
      total += acc / static_cast<double>(ma.size());
      ++planes;
    }
  }
  return total / static_cast<double>(planes);
}

double lpips_metric(const VideoTensor& a, const VideoTensor& b, const PerceptualNet& net) {
  return lpips_loss(a, b, net);
}

void LatentStatsAccumulator::add(const Tensor<float>& latent) {
  if (latent.rank() < 1) throw ShapeError("latent_stats needs a channels-last tensor");
  const int64_t c = latent.dim(latent.rank() - 1);
  if (mean_.empty()) {
    mean_.assign(static_cast<std::size_t>(c), 0.0);
    m2_.assign(static_cast<std::size_t>(c), 0.0);
  } else if (static_cast<int64_t>(mean_.size()) != c) {
    throw ShapeError("latent channel count changed between clips");
  }
  const int64_t n = latent.numel() / c;
  for (int64_t p = 0; p < n; ++p) {
    ++count_;
    for (int64_t k = 0; k < c; ++k) {
      const double x = latent[p * c + k];
      const auto uk = static_cast<std::size_t>(k);
      const double d = x - mean_[uk];
      mean_[uk] += d / static_cast<double>(count_);
      m2_[uk] += d * (x - mean_[uk]);
    }
  }
}

std::vector<double> LatentStatsAccumulator::variance() const {
  std::vector<double> v(m2_.size(), 0.0);
  if (count_ == 0) return v;
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = m2_[k] / static_cast<double>(count_);
  return v;
}

LatentStats latent_stats(const std::vector<VideoTensor>& clips, const Tokenizer<float>& model) {
  if (clips.empty()) throw DataError("latent_stats over an empty dataset");
  LatentStatsAccumulator acc;
  for (const auto& c : clips) acc.add(encode(c, model).mean);
  return {acc.mean(), acc.variance()};
}

Tensor<float> mean_frame(const std::vector<VideoTensor>& clips) {
  if (clips.empty()) throw DataError("mean frame of an empty dataset");
  const int64_t h = clips.front().height(), w = clips.front().width();
  std::vector<double> acc(static_cast<std::size_t>(h * w * 3), 0.0);
  int64_t frames = 0;
  for (const auto& c : clips) {
    if (c.height() != h || c.width() != w) throw ShapeError("mean frame over clips of different sizes");
    for (int64_t t = 0; t < c.frames(); ++t, ++frames)
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += c.data[t * h * w * 3 + static_cast<int64_t>(i)];
  }
  Tensor<float> out({1, h, w, 3});
  for (std::size_t i = 0; i < acc.size(); ++i) out[static_cast<int64_t>(i)] = static_cast<float>(acc[i] / static_cast<double>(frames));
  return out;
}

double mean_frame_psnr(const VideoTensor& clip, const Tensor<float>& frame) {
  const int64_t per = clip.height() * clip.width() * 3;
  if (frame.numel() != per) throw ShapeError("mean frame does not match clip");
  Tensor<float> tiled(clip.data.shape());
  for (int64_t t = 0; t < clip.frames(); ++t)
    std::copy(frame.data(), frame.data() + per, tiled.data() + t * per);
  return psnr(clip, VideoTensor(std::move(tiled)));
}

namespace {

void finish(EvalReport& r, const std::vector<VideoTensor>& refs) {
  const auto n = static_cast<double>(r.clips.size());
  r.psnr = r.ssim = r.lpips = r.decode_seconds = 0.0;
  for (const auto& c : r.clips) {
    r.psnr += c.psnr / n;
    r.ssim += c.ssim / n;
    r.lpips += c.lpips / n;
    r.decode_seconds += c.decode_seconds / n;
  }
  const Tensor<float> mf = mean_frame(refs);
  r.baseline_psnr = 0.0;
  for (const auto& v : refs) r.baseline_psnr += mean_frame_psnr(v, mf) / n;
}

std::string clip_name(const std::vector<std::string>& names, std::size_t i) {
  return i < names.size() ? names[i] : "clip" + std::to_string(i);
}

}  // namespace

EvalReport evaluate(const std::vector<VideoTensor>& clips, const std::vector<std::string>& names,
                    const Tokenizer<float>& model, int steps, uint64_t seed, const PerceptualNet& net) {
  if (clips.empty()) throw DataError("evaluation set is empty");
  EvalReport r;
  r.steps = steps;
  r.seed = seed;
  LatentStatsAccumulator acc;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const LatentPosterior post = encode(clips[i], model);
    acc.add(post.mean);
    const auto t0 = std::chrono::steady_clock::now();
    const VideoTensor rec = decode_latent(sample_latent(post, std::nullopt), steps, seed, model);
    const auto t1 = std::chrono::steady_clock::now();
    r.clips.push_back({clip_name(names, i), psnr(clips[i], rec), ssim(clips[i], rec), lpips_metric(clips[i], rec, net),
                       std::chrono::duration<double>(t1 - t0).count()});
  }
  r.latent = {acc.mean(), acc.variance()};
  finish(r, clips);
  return r;
}

EvalReport score_pairs(const std::vector<VideoTensor>& refs, const std::vector<VideoTensor>& recons,
                       const std::vector<std::string>& names, const PerceptualNet& net) {
  if (refs.empty() || refs.size() != recons.size()) throw DataError("score_pairs needs matching non-empty lists");
  EvalReport r;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    r.clips.push_back({clip_name(names, i), psnr(refs[i], recons[i]), ssim(refs[i], recons[i]),
                       lpips_metric(refs[i], recons[i], net), 0.0});
  }
  finish(r, refs);
  return r;
}

void EvalReport::write(std::ostream& out) const {
  const auto old = out.precision(10);
  for (const auto& c : clips) {
    out << "record=clip name=" << c.name << " psnr=" << c.psnr << " ssim=" << c.ssim << " lpips=" << c.lpips
        << " decode_seconds=" << c.decode_seconds << '\n';
  }
  out << "record=aggregate clips=" << clips.size() << " steps=" << steps << " seed=" << seed << " psnr=" << psnr
      << " ssim=" << ssim << " lpips=" << lpips << " decode_seconds=" << decode_seconds
      << " baseline_psnr=" << baseline_psnr << '\n';
  for (std::size_t k = 0; k < latent.mean.size(); ++k) {
    out << "record=latent channel=" << k << " mean=" << latent.mean[k] << " variance=" << latent.variance[k] << '\n';
  }
  out.precision(old);
}

}  // namespace cdt
