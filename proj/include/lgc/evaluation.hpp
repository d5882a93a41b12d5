#pragma once

#include "lgc/flocking.hpp"
#include "lgc/models.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace lgc {

struct EvalConfig {
  std::vector<int> teams{4, 10, 25, 50};
  std::vector<double> ranges{2.0, 3.0, 4.0, 5.0, 6.0};
  int episodes = 20;
  double duration = 2.5;  // s
  std::uint64_t seed = 0;
  flocking::ScenarioConfig scenario;
};

nlohmann::json to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const nlohmann::json& j);

/// One rollout of one controller. The expert's numbers for the same
/// initial world ride along on every row so results can be normalized.
struct EvalRow {
  std::string scenario;  // "N<teams>_R<range>"
  int agents = 0;
  double range = 0.0;
  int episode = 0;
  std::uint64_t seed = 0;
  std::string controller;  // "expert" or the model kind
  double flocking_error = 0.0;
  double leader_error = 0.0;
  double expert_flocking_error = 0.0;
  double expert_leader_error = 0.0;
  bool diverged = false;
};

/// Episode seed for a cell; identical worlds across controllers and ranges.
std::uint64_t episode_seed(std::uint64_t seed, int agents, int episode);

/// Rolls out the policy and the expert on every (team, range, episode) cell
/// in parallel. Rows come back in sweep order, expert rows last per cell.
std::vector<EvalRow> evaluate(const Policy& policy, const EvalConfig& config);
/// Expert-only rows (no learned controller).
std::vector<EvalRow> evaluate_expert(const EvalConfig& config);

void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows);

/// Mean of a column over rows with the given controller name and range
/// (range < 0 matches all).
double mean_flocking_error(const std::vector<EvalRow>& rows, const std::string& controller, double range = -1.0);

}  // namespace lgc
