#pragma once

#include <json.hpp>

#include "cdt/config.hpp"

namespace cdt::detail {

nlohmann::json model_to_json(const ModelConfig& m);
nlohmann::json schedule_to_json(const ModelConfig& m);
/// Reads the model and schedule sections into one ModelConfig.
ModelConfig model_from_json(const nlohmann::json& model, const nlohmann::json& schedule);
nlohmann::json train_to_json(const TrainConfig& t);
TrainConfig train_from_json(const nlohmann::json& j);

}  // namespace cdt::detail
