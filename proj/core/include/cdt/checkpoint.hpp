#pragma once

#include <filesystem>
#include <memory>
#include <optional>

#include "cdt/model.hpp"
#include "cdt/training.hpp"

namespace cdt {

inline constexpr int kCheckpointFormatVersion = 1;

// Directory layout:
//   manifest.json   format version, model + schedule config, step, seed,
//                   parameter table (name, shape, offset) per group
//   encoder.cdt     flat f32 vector of every encoder parameter
//   decoder.cdt     flat f32 vector of every decoder parameter
//   adam_m.cdt, adam_v.cdt   optimizer moments in parameter order (optional)

struct CheckpointInfo {
  int format_version = kCheckpointFormatVersion;
  ModelConfig model;
  std::optional<TrainConfig> train;
  int step = 0;
  uint64_t seed = 0;
  bool has_optimizer = false;
};

void save_checkpoint(const std::filesystem::path& dir, const Tokenizer<float>& model, const TrainState* state = nullptr,
                     const std::optional<TrainConfig>& train = std::nullopt, uint64_t seed = 0);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir);

/// Loads weights (and optimizer state when requested) into a model built
/// with the same config; any config difference raises ConfigError.
CheckpointInfo load_checkpoint(const std::filesystem::path& dir, Tokenizer<float>& model, TrainState* state = nullptr);

/// Builds the model described by the manifest and loads it.
std::unique_ptr<Tokenizer<float>> open_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info = nullptr);

}  // namespace cdt
