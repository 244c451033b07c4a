#pragma once

#include <filesystem>
#include <string>

#include "cdt/model.hpp"
#include "cdt/training.hpp"

namespace cdt {

inline constexpr int kConfigFormatVersion = 1;

struct DataConfig {
  std::string manifest;  ///< dataset manifest; relative paths resolve against the config file
  std::string train_split = "train";
  std::string eval_split = "heldout";
  int max_eval_clips = 0;      ///< 0 evaluates every clip of the split
  std::string perceptual_dir;  ///< empty selects default_perceptual_dir()

  bool operator==(const DataConfig&) const = default;
};

/// Sections: model, schedule, train, data.
struct RunConfig {
  ModelConfig model = ModelConfig::toy();
  TrainConfig train;
  DataConfig data;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

std::string config_to_json(const RunConfig& cfg);
/// Strict parse: unknown keys and wrong types raise ConfigError.
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

/// Applies "section.key=value"; value is parsed as JSON, else taken as a string.
void apply_override(RunConfig& cfg, const std::string& assignment);

}  // namespace cdt
