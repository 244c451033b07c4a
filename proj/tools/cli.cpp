#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "cdt/checkpoint.hpp"
#include "cdt/config.hpp"
#include "cdt/data_io.hpp"
#include "cdt/metrics.hpp"
#include "cdt/sampler.hpp"
#include "cdt/stream.hpp"
#include "cdt/training.hpp"

namespace cdt::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

bool is_container(const fs::path& p) { return p.extension() == ".cdt"; }

/// A .cdt tensor (T, H, W, 3), or a directory of numbered PPM frames.
VideoTensor read_video(const fs::path& path, int64_t frames, int64_t crop) {
  if (is_container(path)) {
    VideoTensor v(read_tensor(path));
    v.validate();
    return v;
  }
  if (!fs::is_directory(path)) throw DataError("input " + path.string() + " is neither a .cdt file nor a frame directory");
  int64_t available = 0;
  while (fs::exists(frame_path(path, available))) ++available;
  if (available == 0) throw DataError("no frames in " + path.string());
  const Image first = read_ppm(frame_path(path, 0));
  PreprocessSpec spec;
  spec.crop = crop > 0 ? crop : std::min(first.width, first.height);
  spec.frames = frames > 0 ? frames : 1 + (available - 1) / kTemporalCompression * kTemporalCompression;
  ClipEntry entry;
  entry.path = path.filename().string();
  VideoTensor v = load_clip(path.parent_path(), entry, spec);
  v.validate();
  return v;
}

void write_video(const fs::path& path, const VideoTensor& v) {
  if (is_container(path)) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_tensor(path, v.data);
  } else {
    write_clip_frames(path, v);
  }
}

PerceptualNet load_perceptual(const std::string& dir) {
  return PerceptualNet::load(dir.empty() ? default_perceptual_dir() : fs::path(dir));
}

/// Copies everything written to it into two streams.
class TeeBuf : public std::streambuf {
 public:
  TeeBuf(std::streambuf* a, std::streambuf* b) : a_(a), b_(b) {}

 protected:
  int overflow(int c) override {
    if (c == EOF) return !EOF;
    const int r1 = a_->sputc(static_cast<char>(c));
    const int r2 = b_->sputc(static_cast<char>(c));
    return r1 == EOF || r2 == EOF ? EOF : c;
  }
  int sync() override { return a_->pubsync() == 0 && b_->pubsync() == 0 ? 0 : -1; }

 private:
  std::streambuf* a_;
  std::streambuf* b_;
};

struct Options {
  // init-config
  std::string preset = "toy";
  std::string out_path;
  std::vector<std::string> overrides;
  // make-data
  uint64_t seed = 0;
  int clips = 256;
  int resolution = 64;
  int frames = 9;
  int heldout = 32;
  // model commands
  std::string config;
  std::string resume;
  std::string checkpoint;
  std::string input;
  std::string output;
  std::string latent;
  std::string manifest;
  std::string split = "heldout";
  std::string report;
  std::string perceptual_dir;
  int steps = 1;
  int64_t input_frames = 0;
  int64_t crop = 0;
  int max_clips = 0;
  bool streaming = false;
  bool passthrough = false;
};

int cmd_init_config(const Options& o, std::ostream& out) {
  RunConfig cfg;
  if (o.preset == "tiny") cfg.model = ModelConfig::tiny();
  else if (o.preset == "default") cfg.model = ModelConfig{};
  else if (o.preset != "toy") throw ConfigError("unknown preset '" + o.preset + "' (toy, tiny, default)");
  for (const auto& s : o.overrides) apply_override(cfg, s);
  if (o.out_path.empty()) {
    out << config_to_json(cfg);
  } else {
    save_config(o.out_path, cfg);
    out << "record=config path=" << o.out_path << '\n';
  }
  return kOk;
}

int cmd_make_data(const Options& o, std::ostream& out) {
  const DatasetManifest m = make_synthetic_dataset(o.out_path, o.seed, o.clips, o.resolution, o.frames, o.heldout);
  out << "record=dataset path=" << (fs::path(o.out_path) / "manifest.json").string() << " clips=" << m.clips.size()
      << " heldout=" << o.heldout << " resolution=" << o.resolution << " frames=" << o.frames << " seed=" << o.seed
      << '\n';
  return kOk;
}

int cmd_make_perceptual(const Options& o, std::ostream& out) {
  PerceptualNet::generate(o.seed == 0 ? PerceptualNet::kDefaultSeed : o.seed).save(o.out_path);
  out << "record=perceptual_weights path=" << o.out_path << '\n';
  return kOk;
}

std::vector<VideoTensor> load_split(const DatasetManifest& m, const std::string& split, int max_clips,
                                    std::vector<std::string>* names = nullptr) {
  std::vector<VideoTensor> clips;
  for (const auto& e : m.split(split)) {
    if (max_clips > 0 && static_cast<int>(clips.size()) >= max_clips) break;
    clips.push_back(load_clip(m, e));
    if (names) names->push_back(e.path);
  }
  return clips;
}

int cmd_train(const Options& o, std::ostream& out) {
  RunConfig cfg = load_config(o.config);
  for (const auto& s : o.overrides) apply_override(cfg, s);
  if (cfg.data.manifest.empty()) throw ConfigError("data.manifest is not set");
  const fs::path run_dir = o.out_path.empty() ? fs::path("run") : fs::path(o.out_path);
  fs::create_directories(run_dir);
  save_config(run_dir / "config.json", cfg);

  const DatasetManifest manifest = DatasetManifest::load(cfg.data.manifest);
  const std::vector<VideoTensor> train = load_split(manifest, cfg.data.train_split, 0);
  if (train.empty()) throw DataError("split '" + cfg.data.train_split + "' is empty");
  std::vector<std::string> eval_names;
  const std::vector<VideoTensor> eval =
      cfg.train.eval_every > 0 ? load_split(manifest, cfg.data.eval_split, cfg.data.max_eval_clips, &eval_names)
                               : std::vector<VideoTensor>{};

  std::optional<PerceptualNet> net;
  const bool need_net = cfg.train.lpips_enabled && cfg.model.lpips_weight > 0.0;
  if (need_net || cfg.train.eval_every > 0) net = load_perceptual(cfg.data.perceptual_dir);

  Tokenizer<float> model(cfg.model);
  model.initialize(cfg.train.seed);
  TrainState state;
  if (!o.resume.empty()) load_checkpoint(o.resume, model, &state);

  std::ofstream log_file(run_dir / "metrics.log", o.resume.empty() ? std::ios::trunc : std::ios::app);
  TeeBuf tee(out.rdbuf(), log_file.rdbuf());
  std::ostream log(&tee);
  log << "record=start step=" << state.step << " total_steps=" << cfg.train.total_steps
      << " encoder_params=" << model.encoder_parameter_count() << " decoder_params=" << model.decoder_parameter_count()
      << " train_clips=" << train.size() << '\n';

  TrainHooks hooks;
  hooks.on_checkpoint = [&](int step, const TrainState& s) {
    char name[32];
    std::snprintf(name, sizeof(name), "step_%06d", step);
    save_checkpoint(run_dir / "checkpoints" / name, model, &s, cfg.train, cfg.train.seed);
    log << "record=checkpoint step=" << step << " path=" << (run_dir / "checkpoints" / name).string() << '\n';
  };
  if (!eval.empty()) {
    hooks.on_eval = [&](int step) {
      const EvalReport r = evaluate(eval, eval_names, model, cfg.train.eval_steps, cfg.train.seed, *net);
      log << "record=eval step=" << step << " steps=" << r.steps << " psnr=" << r.psnr << " ssim=" << r.ssim
          << " lpips=" << r.lpips << " baseline_psnr=" << r.baseline_psnr << '\n';
    };
  }
  train_loop(model, state, train, cfg.train, need_net ? &*net : nullptr, log, hooks);
  save_checkpoint(run_dir / "final", model, &state, cfg.train, cfg.train.seed);
  log << "record=done step=" << state.step << " path=" << (run_dir / "final").string() << '\n';
  log.flush();
  return kOk;
}

int cmd_encode(const Options& o, std::ostream& out) {
  const auto model = open_checkpoint(o.checkpoint);
  const VideoTensor v = read_video(o.input, o.input_frames, o.crop);
  const LatentPosterior post = o.streaming ? stream_encode(v, *model) : encode(v, *model);
  write_tensor(o.output, post.mean);
  out << "record=encode input=" << o.input << " latent=" << o.output << " shape=" << shape_str(post.mean.shape())
      << " kl=" << kl_loss(post) << '\n';
  return kOk;
}

int cmd_decode(const Options& o, std::ostream& out) {
  const auto model = open_checkpoint(o.checkpoint);
  const Latent z{read_tensor(o.latent)};
  model->denoiser().reset_calls();
  const auto t0 = std::chrono::steady_clock::now();
  const VideoTensor v = decode_latent(z, o.steps, o.seed, *model, {o.streaming});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_video(o.output, v);
  out << "record=decode latent=" << o.latent << " output=" << o.output << " steps=" << o.steps << " seed=" << o.seed
      << " denoiser_calls=" << model->denoiser().calls() << " seconds=" << secs << '\n';
  return kOk;
}

int cmd_reconstruct(const Options& o, std::ostream& out) {
  const auto model = open_checkpoint(o.checkpoint);
  const VideoTensor v = read_video(o.input, o.input_frames, o.crop);
  model->denoiser().reset_calls();
  const auto t0 = std::chrono::steady_clock::now();
  const VideoTensor rec = reconstruct(v, o.steps, o.seed, *model, {o.streaming});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_video(o.output, rec);
  out << "record=reconstruct input=" << o.input << " output=" << o.output << " steps=" << o.steps
      << " seed=" << o.seed << " denoiser_calls=" << model->denoiser().calls() << " seconds=" << secs
      << " psnr=" << psnr(v, rec) << '\n';
  return kOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const DatasetManifest manifest = DatasetManifest::load(o.manifest);
  std::vector<std::string> names;
  const std::vector<VideoTensor> clips = load_split(manifest, o.split, o.max_clips, &names);
  if (clips.empty()) throw DataError("split '" + o.split + "' is empty");
  const PerceptualNet net = load_perceptual(o.perceptual_dir);
  EvalReport report;
  if (o.passthrough) {
    report = score_pairs(clips, clips, names, net);
  } else {
    const auto model = open_checkpoint(o.checkpoint);
    report = evaluate(clips, names, *model, o.steps, o.seed, net);
  }
  if (!o.report.empty()) {
    std::ofstream f(o.report, std::ios::trunc);
    if (!f) throw DataError("cannot write report " + o.report);
    report.write(f);
  }
  report.write(out);
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Conditioned-diffusion video tokenizer"};
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "Print version and config format");
  Options o;

  auto* init = app.add_subcommand("init-config", "Write a default configuration file");
  init->add_option("--preset", o.preset, "toy, tiny or default")->capture_default_str();
  init->add_option("--out", o.out_path, "Output path (stdout when omitted)");
  init->add_option("--set", o.overrides, "Override section.key=value");

  auto* data = app.add_subcommand("make-data", "Generate the synthetic moving-pattern dataset");
  data->add_option("--out", o.out_path, "Output directory")->required();
  data->add_option("--seed", o.seed)->capture_default_str();
  data->add_option("--clips", o.clips)->capture_default_str();
  data->add_option("--resolution", o.resolution)->capture_default_str();
  data->add_option("--frames", o.frames)->capture_default_str();
  data->add_option("--heldout", o.heldout, "Clips tagged heldout")->capture_default_str();

  auto* perc = app.add_subcommand("make-perceptual-weights", "Write the perceptual feature network weights");
  perc->add_option("--out", o.out_path, "Output directory")->required();
  perc->add_option("--seed", o.seed, "Seed for the random layers (0 = default)");

  auto* train = app.add_subcommand("train", "Train encoder and decoder");
  train->add_option("--config", o.config, "Configuration file")->required();
  train->add_option("--out", o.out_path, "Run directory")->capture_default_str();
  train->add_option("--resume", o.resume, "Checkpoint directory to resume from");
  train->add_option("--set", o.overrides, "Override section.key=value");

  auto* enc = app.add_subcommand("encode", "Encode a clip to its posterior-mean latent");
  auto* dec = app.add_subcommand("decode", "Decode a latent with N-step DDIM");
  auto* rec = app.add_subcommand("reconstruct", "Encode then decode a clip");
  auto* ev = app.add_subcommand("eval", "Score reconstructions of a dataset split");
  for (auto* c : {enc, dec, rec, ev}) {
    c->add_option("--checkpoint", o.checkpoint, "Checkpoint directory")->required(c != ev);
    c->add_flag("--stream", o.streaming, "Process chunk by chunk with feature caches");
  }
  for (auto* c : {enc, rec}) {
    c->add_option("--input", o.input, "Clip: .cdt tensor or frame directory")->required();
    c->add_option("--frames", o.input_frames, "Frames to read from a frame directory");
    c->add_option("--crop", o.crop, "Centre-crop size for frame directories");
  }
  for (auto* c : {dec, rec, ev}) {
    c->add_option("--steps", o.steps, "DDIM steps")->capture_default_str();
    c->add_option("--seed", o.seed, "Seed of the initial noise")->capture_default_str();
  }
  enc->add_option("--output", o.output, "Latent .cdt path")->required();
  dec->add_option("--latent", o.latent, "Latent .cdt path")->required();
  for (auto* c : {dec, rec}) c->add_option("--output", o.output, "Clip: .cdt path or frame directory")->required();
  ev->add_option("--manifest", o.manifest, "Dataset manifest")->required();
  ev->add_option("--split", o.split)->capture_default_str();
  ev->add_option("--report", o.report, "Report path");
  ev->add_option("--max-clips", o.max_clips, "Limit on evaluated clips");
  ev->add_option("--perceptual-dir", o.perceptual_dir, "Perceptual weights directory");
  ev->add_flag("--passthrough", o.passthrough, "Score each clip against itself (no model)");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }
  if (ev->parsed() && !o.passthrough && o.checkpoint.empty()) {
    err << "error: eval needs --checkpoint unless --passthrough is given\n";
    return kUsage;
  }

  try {
    if (version) {
      out << "cdt " << kVersion << " config-format " << kConfigFormatVersion << " checkpoint-format "
          << kCheckpointFormatVersion << '\n';
      return kOk;
    }
    if (init->parsed()) return cmd_init_config(o, out);
    if (data->parsed()) return cmd_make_data(o, out);
    if (perc->parsed()) return cmd_make_perceptual(o, out);
    if (train->parsed()) return cmd_train(o, out);
    if (enc->parsed()) return cmd_encode(o, out);
    if (dec->parsed()) return cmd_decode(o, out);
    if (rec->parsed()) return cmd_reconstruct(o, out);
    if (ev->parsed()) return cmd_eval(o, out);
    out << app.help();
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kDataError;
  }
}

}  // namespace cdt::cli
