// Acceptance checks. Prints one "criterion N: PASS|FAIL ..." line per
// criterion and exits non-zero when any selected criterion fails.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include <random>

#include "cdt/checkpoint.hpp"
#include "cdt/data_io.hpp"
#include "cdt/metrics.hpp"
#include "cdt/model.hpp"
#include "cdt/rng.hpp"
#include "cdt/sampler.hpp"
#include "cdt/stream.hpp"
#include "cdt/training.hpp"

namespace fs = std::filesystem;
using namespace cdt;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

VideoTensor random_clip(int64_t frames, int64_t h, int64_t w, uint64_t seed) {
  Rng rng(seed);
  return VideoTensor(uniform<float>({frames, h, w, 3}, -1.f, 1.f, rng));
}

// 1. Streamed and whole-clip passes agree.
Outcome stream_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  double enc = 0, dec = 0;
  int cases = 0;
  for (uint64_t init = 0; init < 50; ++init) {
    Tokenizer<float> m(ModelConfig::toy());
    m.initialize(1000 + init, InitMode::kRandomized);
    for (int64_t f : {4, 8, 16}) {
      const uint64_t s = derive_seed(init, {static_cast<uint64_t>(f)});
      const VideoTensor v = random_clip(1 + f, 16, 24, s);
      const auto a = encode(v, m), b = stream_encode(v, m);
      enc = std::max({enc, static_cast<double>(max_abs_diff(a.mean, b.mean)),
                      static_cast<double>(max_abs_diff(a.logvar, b.logvar))});
      const Latent z{a.mean};
      const VideoTensor vt = random_clip(1 + f, 16, 24, s + 1);
      const Timestep t = 1 + static_cast<int>(s % static_cast<uint64_t>(m.config().timesteps));
      dec = std::max(dec, static_cast<double>(max_abs_diff(denoise(vt, z, t, m).data, stream_denoise(vt, z, t, m).data)));
      ++cases;
    }
  }
  const double secs = seconds_since(t0);
  return {enc <= 1e-4 && dec <= 1e-4 && secs < 300,
          fmt("cases=%d max_encoder_diff=%.3g max_denoiser_diff=%.3g seconds=%.1f", cases, enc, dec, secs)};
}

// 2. Outputs of chunks <= k ignore every input of later chunks.
Outcome causality() {
  int trials = 0, violations = 0;
  for (int k = 0; k <= 2; ++k) {
    for (uint64_t trial = 0; trial < 20; ++trial) {
      const uint64_t s = derive_seed(77, {static_cast<uint64_t>(k), trial});
      Tokenizer<float> m(ModelConfig::tiny());
      m.initialize(s, InitMode::kRandomized);
      const int64_t frames = 13, h = 16, w = 16, keep = 1 + 4 * k;
      const VideoTensor v = random_clip(frames, h, w, s + 1);
      VideoTensor pv = v;
      Rng rng(s + 2);
      std::uniform_real_distribution<float> noise(-1.f, 1.f);
      for (int64_t i = keep * h * w * 3; i < pv.data.numel(); ++i) pv.data[i] = noise(rng);
      const auto a = encode(v, m).mean, b = encode(pv, m).mean;
      const int64_t lat_frame = a.numel() / a.dim(0);
      for (int64_t i = 0; i < (k + 1) * lat_frame; ++i) violations += a[i] != b[i];

      Latent z{standard_normal<float>(a.shape(), s + 3)}, pz = z;
      for (int64_t i = (k + 1) * lat_frame; i < pz.z.numel(); ++i) pz.z[i] = static_cast<float>(noise(rng) * 3.0);
      const Timestep t = 1 + static_cast<int>(s % 1024);
      const auto da = denoise(v, z, t, m).data, db = denoise(pv, pz, t, m).data;
      for (int64_t i = 0; i < keep * h * w * 3; ++i) violations += da[i] != db[i];
      ++trials;
    }
  }
  return {violations == 0, fmt("trials=%d differing_elements=%d", trials, violations)};
}

// 3. Noise-space error equals snr-weighted clean-space error.
Outcome loss_identity() {
  Rng rng(3);
  double worst = 0;
  const NoiseSchedule sched = cosine_schedule(8192);
  for (int i = 0; i < 1000; ++i) {
    const int t = std::uniform_int_distribution<int>(1, 8192)(rng);
    const Shape shape{5, 8, 8, 3};
    const auto v0 = standard_normal<double>(shape, rng()), eps = standard_normal<double>(shape, rng());
    const auto v0_hat = standard_normal<double>(shape, rng());
    const auto eps_hat = eps_from_x0(q_sample(v0, t, eps, sched), v0_hat, t, sched);
    double lhs = 0, rhs = 0;
    for (int64_t k = 0; k < v0.numel(); ++k) {
      lhs += (eps[k] - eps_hat[k]) * (eps[k] - eps_hat[k]);
      rhs += (v0[k] - v0_hat[k]) * (v0[k] - v0_hat[k]);
    }
    rhs *= snr_weight(t, sched);
    worst = std::max(worst, std::fabs(lhs - rhs) / rhs);
  }
  return {worst <= 1e-5, fmt("samples=1000 max_relative_error=%.3g", worst)};
}

// 4. Sampler fidelity on the toy configuration.
Outcome sampler_fidelity() {
  Tokenizer<float> m(ModelConfig::toy());
  m.initialize(4, InitMode::kRandomized);
  const VideoTensor v0 = random_clip(9, 64, 64, 40);
  const Latent z = sample_latent(encode(v0, m), std::nullopt);
  m.denoiser().reset_calls();
  const VideoTensor one = reconstruct(v0, 1, 9, m);
  const int64_t calls = m.denoiser().calls();
  const VideoTensor v_T(standard_normal<float>(v0.data.shape(), derive_seed(9, {0x5052494f})));
  const float direct = max_abs_diff(one.data, denoise(v_T, z, m.config().timesteps, m).data);
  const VideoTensor v_mid = random_clip(9, 64, 64, 41);
  const float terminal = max_abs_diff(ddim_step(v_mid, z, 300, 0, m).data, denoise(v_mid, z, 300, m).data);
  const float repeat = max_abs_diff(reconstruct(v0, 3, 9, m).data, reconstruct(v0, 3, 9, m).data);
  return {calls == 1 && direct == 0.f && terminal == 0.f && repeat == 0.f,
          fmt("n1_calls=%lld n1_vs_direct=%g terminal_vs_x0=%g repeat_diff=%g", static_cast<long long>(calls),
              direct, terminal, repeat)};
}

// 5. Cosine table against a per-t closed-form evaluation.
Outcome schedule_correctness() {
  double worst = 0;
  bool decreasing = true;
  for (int steps : {1024, 8192}) {
    const NoiseSchedule s = cosine_schedule(steps);
    const long double off = 0.008L, half_pi = std::numbers::pi_v<long double> / 2;
    auto f = [&](long double u) {
      const long double c = std::cos((u + off) / (1 + off) * half_pi);
      return c * c;
    };
    for (int t = 1; t <= steps; ++t) {
      long double want = f(static_cast<long double>(t) / steps) / f(0);
      // The final beta reaches the 0.999 cap.
      if (t == steps) want = f(static_cast<long double>(t - 1) / steps) / f(0) * (1 - 0.999L);
      worst = std::max(worst, static_cast<double>(std::fabs((s.alpha_bar(t) - want) / want)));
      decreasing = decreasing && s.alpha_bar(t) < s.alpha_bar(t - 1);
    }
  }
  return {worst <= 1e-10 && decreasing, fmt("max_relative_error=%.3g strictly_decreasing=%d", worst, decreasing)};
}

// 6. Backprop against central differences, double precision.
Outcome gradient_check() {
  Tokenizer<double> m(ModelConfig::tiny());
  m.initialize(6, InitMode::kRandomized);
  const PerceptualNet net = PerceptualNet::generate();
  const auto v0 = to_channels_first(random_clip(5, 16, 16, 60).data).cast<double>();
  const auto eps = standard_normal<double>(v0.shape(), 61);
  const auto zeps = standard_normal<double>({4, 2, 2, 2}, 62);
  const LossWeights w{0.1, 0.05};
  auto loss = [&] { return total_loss(m, v0, 400, eps, zeps, w, &net).total; };
  m.params().zero_grad();
  backward(loss());
  auto& entries = m.params().entries();
  Rng rng(63);
  double worst = 0;
  std::set<std::pair<std::size_t, int64_t>> picked;
  while (picked.size() < 32) {
    int64_t flat = static_cast<int64_t>(rng() % static_cast<uint64_t>(m.params().count()));
    std::size_t e = 0;
    while (flat >= entries[e].var.numel()) flat -= entries[e++].var.numel();
    if (!picked.insert({e, flat}).second) continue;
    Tensor<double>& val = entries[e].var.mutable_value();
    const double keep = val[flat], h = 1e-5;
    NoGradGuard ng;
    val[flat] = keep + h;
    const double up = loss().item();
    val[flat] = keep - h;
    const double down = loss().item();
    val[flat] = keep;
    const double numeric = (up - down) / (2 * h), analytic = entries[e].var.grad()[flat];
    worst = std::max(worst, std::fabs(numeric - analytic) / std::max({std::fabs(numeric), std::fabs(analytic), 1e-6}));
  }
  return {worst <= 1e-3, fmt("weights=32 max_relative_error=%.3g", worst)};
}

// 10. KL properties.
Outcome kl_properties() {
  Rng rng(10);
  double worst = 0, min_kl = 1e300;
  for (int i = 0; i < 100; ++i) {
    LatentPosterior p{uniform<float>({2, 3, 3, 16}, -3.f, 3.f, rng), uniform<float>({2, 3, 3, 16}, -8.f, 8.f, rng)};
    double want = 0;
    for (int64_t k = 0; k < p.mean.numel(); ++k) {
      const double mu = p.mean[k], lv = p.logvar[k];
      want += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    }
    want /= static_cast<double>(p.mean.numel());
    const double got = kl_loss(p);
    min_kl = std::min(min_kl, got);
    worst = std::max(worst, std::fabs(got - want) / std::max(1.0, std::fabs(want)));
  }
  const double standard = kl_loss({Tensor<float>({2, 3, 3, 16}), Tensor<float>({2, 3, 3, 16})});
  return {worst <= 1e-7 && min_kl >= 0 && standard == 0.0,
          fmt("posteriors=100 max_error=%.3g min_kl=%.4g standard_normal_kl=%g", worst, min_kl, standard)};
}

// 11. Latent shape law.
Outcome shape_law() {
  Tokenizer<float> m(ModelConfig::toy());
  m.initialize(11, InitMode::kRandomized);
  Rng rng(11);
  int bad = 0;
  for (int i = 0; i < 20; ++i) {
    const int64_t f = 4 * std::uniform_int_distribution<int>(0, 3)(rng);
    const int64_t h = 8 * std::uniform_int_distribution<int>(1, 5)(rng);
    const int64_t w = 8 * std::uniform_int_distribution<int>(1, 5)(rng);
    const auto post = encode(random_clip(1 + f, h, w, rng()), m);
    bad += post.mean.shape() != Shape{1 + f / 4, h / 8, w / 8, 16};
  }
  return {bad == 0, fmt("shapes=20 mismatches=%d", bad)};
}

// Desk-scale training runs (criteria 7, 8, 9).

struct TrainingSetup {
  fs::path workdir;
  int steps = 5000;
  int stage2_step = 4501;
  int batch = 4;
  double learning_rate = 1e-3;
  int ablation_stage1 = 1500;
  int ablation_stage2 = 400;
  int heldout = 32;
  int train_clips = 256;
};

struct Data {
  std::vector<VideoTensor> train, heldout;
  std::vector<std::string> heldout_names;
};

Data synthetic_data(const TrainingSetup& s) {
  const DatasetManifest m =
      make_synthetic_dataset(s.workdir / "dataset", 0, s.train_clips + s.heldout, 64, 9, s.heldout);
  Data d;
  for (const auto& c : m.clips) {
    if (c.split == "heldout") {
      d.heldout.push_back(load_clip(m, c));
      d.heldout_names.push_back(c.path);
    } else {
      d.train.push_back(load_clip(m, c));
    }
  }
  return d;
}

TrainConfig toy_schedule(const TrainingSetup& s, uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.total_steps = s.steps;
  c.learning_rate = s.learning_rate;
  c.stage2_step = s.stage2_step;
  c.batch_size = s.batch;
  c.log_every = 100;
  return c;
}

// train_loop without the final-step cut-off, so a prefix shares the full run's LR schedule.
void run_until(Tokenizer<float>& m, TrainState& st, const Data& d, const TrainConfig& c, int last_step,
               const PerceptualNet& net, const fs::path& log_path) {
  std::ofstream log(log_path, std::ios::app);
  while (st.step < last_step) {
    std::vector<VideoTensor> batch;
    for (std::size_t i : batch_indices(c, static_cast<int>(st.step) + 1, d.train.size())) batch.push_back(d.train[i]);
    const StepRecord rec = train_step(m, st, batch, c, &net);
    if (rec.step % c.log_every == 0) write_step_record(log, rec);
  }
}

void run_training(Tokenizer<float>& m, TrainState& st, const Data& d, const TrainConfig& c, const PerceptualNet& net,
                  const fs::path& log_path) {
  std::ofstream log(log_path, std::ios::app);
  train_loop(m, st, d.train, c, &net, log);
}

std::vector<Outcome> trained_model_criteria(const TrainingSetup& s, const Data& d, const PerceptualNet& net,
                                            bool run7, bool run8) {
  Tokenizer<float> m(ModelConfig::toy());
  m.initialize(1);
  TrainState st;
  const auto t0 = std::chrono::steady_clock::now();
  run_training(m, st, d, toy_schedule(s, 1), net, s.workdir / "train_toy.log");
  const double secs = seconds_since(t0);
  save_checkpoint(s.workdir / "toy_final", m, &st, toy_schedule(s, 1), 1);

  const EvalReport r1 = evaluate(d.heldout, d.heldout_names, m, 1, 0, net);
  std::ofstream(s.workdir / "eval_n1.txt") << [&] {
    std::ostringstream o;
    r1.write(o);
    return o.str();
  }();
  std::vector<Outcome> out;
  if (run7) {
    const double margin = r1.psnr - r1.baseline_psnr;
    out.push_back({margin >= 6.0 && secs < 4 * 3600,
                   fmt("steps=%d train_seconds=%.0f heldout_psnr_n1=%.2f baseline_psnr=%.2f margin_db=%.2f", s.steps,
                       secs, r1.psnr, r1.baseline_psnr, margin)});
  }
  if (run8) {
    const EvalReport r3 = evaluate(d.heldout, d.heldout_names, m, 3, 0, net);
    out.push_back({r3.psnr >= r1.psnr, fmt("psnr_n1=%.3f psnr_n3=%.3f ssim_n1=%.4f ssim_n3=%.4f", r1.psnr, r3.psnr,
                                           r1.ssim, r3.ssim)});
  }
  return out;
}

Outcome ablation(const TrainingSetup& s, const Data& d, const PerceptualNet& net) {
  std::string detail;
  bool pass = true;
  for (uint64_t seed : {11, 12}) {
    TrainConfig base = toy_schedule(s, seed);
    base.batch_size = 1;
    base.total_steps = s.ablation_stage1 + s.ablation_stage2;
    base.stage2_step = s.ablation_stage1 + 1;
    const fs::path log = s.workdir / fmt("ablation_seed%llu.log", static_cast<unsigned long long>(seed));
    const fs::path snap = s.workdir / fmt("ablation_seed%llu_stage1", static_cast<unsigned long long>(seed));
    {
      Tokenizer<float> prefix(ModelConfig::toy());
      prefix.initialize(seed);
      TrainState st;
      run_until(prefix, st, d, base, s.ablation_stage1, net, log);
      save_checkpoint(snap, prefix, &st, base, seed);
    }
    // Both branches replay identical data, timesteps and noise; only the perceptual weight differs.
    double lpips[2] = {0, 0}, psnr[2] = {0, 0};
    for (int branch = 0; branch < 2; ++branch) {
      TrainConfig c = base;
      c.lpips_enabled = branch == 1;
      Tokenizer<float> m(ModelConfig::toy());
      TrainState bs;
      load_checkpoint(snap, m, &bs);
      run_training(m, bs, d, c, net, log);
      const EvalReport r = evaluate(d.heldout, d.heldout_names, m, 1, 0, net);
      lpips[branch] = r.lpips;
      psnr[branch] = r.psnr;
    }
    pass = pass && lpips[0] > lpips[1];
    const auto sd = static_cast<unsigned long long>(seed);
    detail += fmt("seed%llu: lpips eta0=%.4f eta0.01=%.4f psnr eta0=%.2f eta0.01=%.2f; ", sd, lpips[0], lpips[1],
                  psnr[0], psnr[1]);
  }
  detail += fmt("stage1_steps=%d stage2_steps=%d", s.ablation_stage1, s.ablation_stage2);
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> selected;
  TrainingSetup setup;
  std::string workdir = (fs::temp_directory_path() / "cdt_acceptance").string();
  app.add_option("--criteria", selected, "Criteria to run (default: all)")->delimiter(',');
  app.add_option("--workdir", workdir, "Scratch directory for datasets, logs and checkpoints");
  app.add_option("--steps", setup.steps, "Training steps for criteria 7 and 8");
  app.add_option("--stage2-step", setup.stage2_step, "First stage-2 step for criteria 7 and 8");
  app.add_option("--batch", setup.batch, "Batch size for criteria 7 and 8");
  app.add_option("--lr", setup.learning_rate, "Peak learning rate of the training runs");
  app.add_option("--ablation-stage1", setup.ablation_stage1, "Shared stage-1 steps for criterion 9");
  app.add_option("--ablation-stage2", setup.ablation_stage2, "Stage-2 steps per branch for criterion 9");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  setup.workdir = workdir;
  auto wants = [&](int c) { return std::find(selected.begin(), selected.end(), c) != selected.end(); };

  bool all = true;
  auto report = [&](int id, const Outcome& o) {
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " " << o.detail << std::endl;
    all = all && o.pass;
  };
  auto guarded = [&](int id, const std::function<Outcome()>& f) {
    if (!wants(id)) return;
    try {
      report(id, f());
    } catch (const std::exception& e) {
      report(id, {false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, stream_equivalence);
  guarded(2, causality);
  guarded(3, loss_identity);
  guarded(4, sampler_fidelity);
  guarded(5, schedule_correctness);
  guarded(6, gradient_check);

  if (wants(7) || wants(8) || wants(9)) {
    try {
      fs::create_directories(setup.workdir);
      const Data data = synthetic_data(setup);
      const PerceptualNet net = PerceptualNet::load(default_perceptual_dir());
      if (wants(7) || wants(8)) {
        const auto outs = trained_model_criteria(setup, data, net, wants(7), wants(8));
        std::size_t i = 0;
        if (wants(7)) report(7, outs[i++]);
        if (wants(8)) report(8, outs[i++]);
      }
      guarded(9, [&] { return ablation(setup, data, net); });
    } catch (const std::exception& e) {
      for (int id : {7, 8, 9})
        if (wants(id)) report(id, {false, std::string("exception: ") + e.what()});
    }
  }

  guarded(10, kl_properties);
  guarded(11, shape_law);
  return all ? 0 : 1;
}
