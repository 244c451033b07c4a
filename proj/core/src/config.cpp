#include "cdt/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json_config.hpp"

namespace cdt {

using nlohmann::json;

namespace {

/// Strict reader of one JSON object: absent keys keep defaults, unknown keys fail.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("config section '" + name_ + "' must be an object");
  }
  ~Section() = default;

  template <typename U>
  void get(const char* key, U& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<U>();
    } catch (const json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }
  const json* sub(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }
  void finish() const {
    for (const auto& item : j_.items())
      if (seen_.count(item.key()) == 0) throw ConfigError("unknown config key " + name_ + "." + item.key());
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json stage_to_json(const StageSpec& s) { return {{"frames", s.frames}, {"downscale", s.downscale}}; }

StageSpec stage_from_json(const json& j, const std::string& name) {
  StageSpec s;
  Section r(j, name);
  r.get("frames", s.frames);
  r.get("downscale", s.downscale);
  r.finish();
  return s;
}

json data_to_json(const DataConfig& d) {
  return {{"manifest", d.manifest},
          {"train_split", d.train_split},
          {"eval_split", d.eval_split},
          {"max_eval_clips", d.max_eval_clips},
          {"perceptual_dir", d.perceptual_dir}};
}

DataConfig data_from_json(const json& j) {
  DataConfig d;
  Section r(j, "data");
  r.get("manifest", d.manifest);
  r.get("train_split", d.train_split);
  r.get("eval_split", d.eval_split);
  r.get("max_eval_clips", d.max_eval_clips);
  r.get("perceptual_dir", d.perceptual_dir);
  r.finish();
  return d;
}

json to_json(const RunConfig& c) {
  return {{"format_version", kConfigFormatVersion},
          {"model", detail::model_to_json(c.model)},
          {"schedule", detail::schedule_to_json(c.model)},
          {"train", detail::train_to_json(c.train)},
          {"data", data_to_json(c.data)}};
}

RunConfig from_json(const json& j) {
  RunConfig c;
  Section top(j, "config");
  int version = kConfigFormatVersion;
  top.get("format_version", version);
  if (version != kConfigFormatVersion) {
    throw ConfigError("config format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kConfigFormatVersion) + ")");
  }
  const json empty = json::object();
  const json* model = top.sub("model");
  const json* schedule = top.sub("schedule");
  c.model = detail::model_from_json(model ? *model : empty, schedule ? *schedule : empty);
  if (const json* t = top.sub("train")) c.train = detail::train_from_json(*t);
  if (const json* d = top.sub("data")) c.data = data_from_json(*d);
  top.finish();
  c.validate();
  return c;
}

}  // namespace

namespace detail {

json model_to_json(const ModelConfig& m) {
  return {{"latent_dim", m.latent_dim},
          {"base_channels", m.base_channels},
          {"channel_multipliers", m.channel_multipliers},
          {"encoder_base_channels", m.encoder_base_channels},
          {"encoder_channel_multipliers", m.encoder_channel_multipliers},
          {"injection_count", m.injection_count},
          {"norm_groups", m.norm_groups},
          {"kl_weight", m.kl_weight},
          {"lpips_weight", m.lpips_weight}};
}

json schedule_to_json(const ModelConfig& m) { return {{"kind", "cosine"}, {"timesteps", m.timesteps}}; }

ModelConfig model_from_json(const json& model, const json& schedule) {
  ModelConfig m = ModelConfig::toy();
  Section r(model, "model");
  r.get("latent_dim", m.latent_dim);
  r.get("base_channels", m.base_channels);
  r.get("channel_multipliers", m.channel_multipliers);
  r.get("encoder_base_channels", m.encoder_base_channels);
  r.get("encoder_channel_multipliers", m.encoder_channel_multipliers);
  r.get("injection_count", m.injection_count);
  r.get("norm_groups", m.norm_groups);
  r.get("kl_weight", m.kl_weight);
  r.get("lpips_weight", m.lpips_weight);
  r.finish();
  Section s(schedule, "schedule");
  std::string kind = "cosine";
  s.get("kind", kind);
  if (kind != "cosine") throw ConfigError("schedule.kind must be \"cosine\", got \"" + kind + "\"");
  s.get("timesteps", m.timesteps);
  s.finish();
  m.validate();
  return m;
}

json train_to_json(const TrainConfig& t) {
  return {{"seed", t.seed},
          {"total_steps", t.total_steps},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"min_lr_ratio", t.min_lr_ratio},
          {"warmup_steps", t.warmup_steps},
          {"grad_clip", t.grad_clip},
          {"stage2_step", t.stage2_step},
          {"stage1", stage_to_json(t.stage1)},
          {"stage2", stage_to_json(t.stage2)},
          {"lpips_enabled", t.lpips_enabled},
          {"image_probability", t.image_probability},
          {"log_every", t.log_every},
          {"checkpoint_every", t.checkpoint_every},
          {"eval_every", t.eval_every},
          {"eval_steps", t.eval_steps}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  Section r(j, "train");
  r.get("seed", t.seed);
  r.get("total_steps", t.total_steps);
  r.get("batch_size", t.batch_size);
  r.get("learning_rate", t.learning_rate);
  r.get("min_lr_ratio", t.min_lr_ratio);
  r.get("warmup_steps", t.warmup_steps);
  r.get("grad_clip", t.grad_clip);
  r.get("stage2_step", t.stage2_step);
  if (const json* s = r.sub("stage1")) t.stage1 = stage_from_json(*s, "train.stage1");
  if (const json* s = r.sub("stage2")) t.stage2 = stage_from_json(*s, "train.stage2");
  r.get("lpips_enabled", t.lpips_enabled);
  r.get("image_probability", t.image_probability);
  r.get("log_every", t.log_every);
  r.get("checkpoint_every", t.checkpoint_every);
  r.get("eval_every", t.eval_every);
  r.get("eval_steps", t.eval_steps);
  r.finish();
  t.validate();
  return t;
}

}  // namespace detail

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (data.max_eval_clips < 0) throw ConfigError("data.max_eval_clips must be >= 0");
}

std::string config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg = config_from_json(ss.str());
  if (!cfg.data.manifest.empty() && std::filesystem::path(cfg.data.manifest).is_relative()) {
    cfg.data.manifest = (path.parent_path() / cfg.data.manifest).lexically_normal().string();
  }
  return cfg;
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write config " + path.string());
  out << config_to_json(cfg);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override must look like section.key=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json j = to_json(cfg);
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto next = path.find('.', start);
    const std::string key = path.substr(start, next == std::string::npos ? std::string::npos : next - start);
    if (next == std::string::npos) {
      (*node)[key] = value;
      break;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) throw ConfigError("unknown config section in '" + path + "'");
    node = &(*node)[key];
    start = next + 1;
  }
  cfg = from_json(j);
}

}  // namespace cdt
