#include "cdt/checkpoint.hpp"

#include <fstream>

#include "cdt/data_io.hpp"
#include "json_config.hpp"

namespace cdt {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* const kGroups[] = {"encoder", "decoder"};

bool in_group(const std::string& name, const std::string& group) { return name.rfind(group + ".", 0) == 0; }

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no checkpoint manifest in " + dir.string());
  try {
    json j = json::parse(in);
    if (j.value("format", "") != "cdt-checkpoint") throw DataError(dir.string() + ": not a checkpoint");
    return j;
  } catch (const json::exception& e) {
    throw DataError(dir.string() + "/manifest.json: " + e.what());
  }
}

Tensor<float> flatten(const std::vector<const Tensor<float>*>& parts) {
  int64_t n = 0;
  for (const auto* p : parts) n += p->numel();
  Tensor<float> out({n});
  float* dst = out.data();
  for (const auto* p : parts) dst = std::copy(p->data(), p->data() + p->numel(), dst);
  return out;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Tokenizer<float>& model, const TrainState* state,
                     const std::optional<TrainConfig>& train, uint64_t seed) {
  fs::create_directories(dir);
  const auto& entries = model.params().entries();
  json j;
  j["format"] = "cdt-checkpoint";
  j["format_version"] = kCheckpointFormatVersion;
  j["model"] = detail::model_to_json(model.config());
  j["schedule"] = detail::schedule_to_json(model.config());
  if (train) j["train"] = detail::train_to_json(*train);
  j["step"] = state ? state->step : 0;
  j["seed"] = seed;
  j["groups"] = json::object();
  for (const char* g : kGroups) {
    std::vector<const Tensor<float>*> parts;
    json table = json::array();
    int64_t offset = 0;
    for (const auto& e : entries) {
      if (!in_group(e.name, g)) continue;
      table.push_back({{"name", e.name}, {"shape", e.var.shape()}, {"offset", offset}});
      offset += e.var.numel();
      parts.push_back(&e.var.value());
    }
    const std::string file = std::string(g) + ".cdt";
    write_tensor(dir / file, flatten(parts));
    j["groups"][g] = {{"file", file}, {"params", table}};
  }
  if (state != nullptr && !state->adam.m.empty()) {
    std::vector<const Tensor<float>*> m, v;
    for (std::size_t i = 0; i < state->adam.m.size(); ++i) {
      m.push_back(&state->adam.m[i]);
      v.push_back(&state->adam.v[i]);
    }
    write_tensor(dir / "adam_m.cdt", flatten(m));
    write_tensor(dir / "adam_v.cdt", flatten(v));
    j["optimizer"] = {{"kind", "adam"}, {"step", state->adam.step}, {"m", "adam_m.cdt"}, {"v", "adam_v.cdt"},
                      {"loss_ema", state->loss_ema}};
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint manifest in " + dir.string());
  out << j.dump(2) << '\n';
}

CheckpointInfo read_checkpoint_info(const fs::path& dir) {
  const json j = read_manifest(dir);
  CheckpointInfo info;
  info.format_version = j.value("format_version", 0);
  if (info.format_version != kCheckpointFormatVersion) {
    throw ConfigError("checkpoint format version " + std::to_string(info.format_version) + " is not supported");
  }
  try {
    info.model = detail::model_from_json(j.at("model"), j.at("schedule"));
    if (j.contains("train")) info.train = detail::train_from_json(j["train"]);
    info.step = j.value("step", 0);
    info.seed = j.value("seed", uint64_t{0});
  } catch (const json::exception& e) {
    throw DataError(dir.string() + "/manifest.json: " + e.what());
  }
  info.has_optimizer = j.contains("optimizer");
  return info;
}

CheckpointInfo load_checkpoint(const fs::path& dir, Tokenizer<float>& model, TrainState* state) {
  const CheckpointInfo info = read_checkpoint_info(dir);
  if (!(info.model == model.config())) {
    throw ConfigError("checkpoint " + dir.string() + " was written for a different model config");
  }
  const json j = read_manifest(dir);
  auto& entries = model.params().entries();
  try {
    for (const char* g : kGroups) {
      const json& group = j.at("groups").at(g);
      const Tensor<float> flat = read_tensor(dir / group.at("file").get<std::string>());
      std::size_t k = 0;
      for (auto& e : entries) {
        if (!in_group(e.name, g)) continue;
        if (k >= group.at("params").size()) throw ConfigError("checkpoint is missing parameter " + e.name);
        const json& p = group["params"][k++];
        const auto offset = p.at("offset").get<int64_t>();
        if (p.at("name").get<std::string>() != e.name || p.at("shape").get<Shape>() != e.var.shape() ||
            offset + e.var.numel() > flat.numel()) {
          throw ConfigError("checkpoint parameter table does not match the model at " + e.name);
        }
        Tensor<float>& w = e.var.mutable_value();
        std::copy(flat.data() + offset, flat.data() + offset + w.numel(), w.data());
        e.var.zero_grad();
      }
      if (k != group["params"].size()) throw ConfigError("checkpoint holds parameters the model does not have");
    }
    if (state != nullptr) {
      state->step = info.step;
      state->adam = AdamState{};
      state->loss_ema = 0.0;
      if (info.has_optimizer) {
        const json& o = j.at("optimizer");
        const Tensor<float> m = read_tensor(dir / o.at("m").get<std::string>());
        const Tensor<float> v = read_tensor(dir / o.at("v").get<std::string>());
        int64_t offset = 0;
        for (const auto& e : entries) {
          if (offset + e.var.numel() > m.numel() || m.numel() != v.numel()) {
            throw DataError("optimizer state in " + dir.string() + " is too short");
          }
          state->adam.m.emplace_back(e.var.shape(), std::span<const float>(m.data() + offset, static_cast<std::size_t>(e.var.numel())));
          state->adam.v.emplace_back(e.var.shape(), std::span<const float>(v.data() + offset, static_cast<std::size_t>(e.var.numel())));
          offset += e.var.numel();
        }
        if (offset != m.numel()) throw DataError("optimizer state in " + dir.string() + " has extra entries");
        state->adam.step = o.at("step").get<int64_t>();
        state->loss_ema = o.value("loss_ema", 0.0);
      }
    }
  } catch (const json::exception& e) {
    throw DataError(dir.string() + "/manifest.json: " + e.what());
  }
  return info;
}

std::unique_ptr<Tokenizer<float>> open_checkpoint(const fs::path& dir, CheckpointInfo* info) {
  const CheckpointInfo i = read_checkpoint_info(dir);
  auto model = std::make_unique<Tokenizer<float>>(i.model);
  load_checkpoint(dir, *model);
  if (info != nullptr) *info = i;
  return model;
}

}  // namespace cdt
