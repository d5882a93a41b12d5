#pragma once

#include "lgc/flocking.hpp"
#include "lgc/models.hpp"

#include <string>

#include <nlohmann/json.hpp>

namespace lgc {

/// Matrices are stored row-major as nested arrays.
nlohmann::json to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

nlohmann::json to_json(const flocking::Params& p);
flocking::Params flocking_params_from_json(const nlohmann::json& j);

nlohmann::json to_json(const flocking::ScenarioConfig& c);
flocking::ScenarioConfig scenario_from_json(const nlohmann::json& j);

nlohmann::json to_json(const flocking::Trajectory& t);
flocking::Trajectory trajectory_from_json(const nlohmann::json& j);

nlohmann::json to_json(const PolicyConfig& c);
PolicyConfig policy_config_from_json(const nlohmann::json& j);

/// Checkpoint: model kind, hyperparameters, named tensors and any extra
/// provenance (e.g. the training config) under "config".
nlohmann::json checkpoint_to_json(const Policy& policy, const nlohmann::json& provenance = nullptr);
Policy checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const std::string& path, const Policy& policy, const nlohmann::json& provenance = nullptr);
Policy load_checkpoint(const std::string& path);

nlohmann::json read_json_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace lgc
