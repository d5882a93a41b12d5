#include "lgc/evaluation.hpp"

#include "lgc/io.hpp"
#include "lgc/parallel.hpp"
#include "lgc/training.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace lgc {

nlohmann::json to_json(const EvalConfig& c) {
  return {{"teams", c.teams},     {"ranges", c.ranges}, {"episodes", c.episodes},
          {"duration", c.duration}, {"seed", c.seed},     {"scenario", to_json(c.scenario)}};
}

EvalConfig eval_config_from_json(const nlohmann::json& j) {
  EvalConfig c;
  c.teams = j.at("teams").get<std::vector<int>>();
  c.ranges = j.at("ranges").get<std::vector<double>>();
  c.episodes = j.at("episodes").get<int>();
  c.duration = j.at("duration").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("scenario")) c.scenario = scenario_from_json(j.at("scenario"));
  return c;
}

std::uint64_t episode_seed(std::uint64_t seed, int agents, int episode) {
  return flocking::mix_seed(flocking::mix_seed(seed, static_cast<std::uint64_t>(agents)),
                            static_cast<std::uint64_t>(episode));
}

namespace {

struct Cell {
  int agents;
  double range;
  int episode;
};

std::string scenario_name(int agents, double range) {
  std::ostringstream s;
  s << "N" << agents << "_R" << range;
  return s.str();
}

void validate(const EvalConfig& c) {
  if (c.teams.empty() || c.ranges.empty()) throw std::invalid_argument("eval: empty sweep");
  if (c.episodes < 1) throw std::invalid_argument("eval: need at least one episode");
  for (int n : c.teams)
    if (n < 2) throw std::invalid_argument("eval: team sizes must be >= 2");
}

struct Outcome {
  double flocking = 0.0;
  double leader = 0.0;
  bool diverged = false;
};

Outcome run(flocking::Controller& controller, const flocking::World& world, double duration, std::uint64_t seed) {
  const auto t = flocking::rollout(controller, world, duration, seed);
  Outcome o;
  o.diverged = t.diverged;
  if (t.records.empty()) {
    o.flocking = o.leader = std::numeric_limits<double>::quiet_NaN();
    return o;
  }
  o.flocking = flocking::flocking_error(t);
  o.leader = flocking::leader_error(t);
  return o;
}

std::vector<EvalRow> sweep(const Policy* policy, const EvalConfig& config) {
  validate(config);
  std::vector<Cell> cells;
  for (int n : config.teams)
    for (double r : config.ranges)
      for (int e = 0; e < config.episodes; ++e) cells.push_back({n, r, e});

  const std::size_t per_cell = policy ? 2 : 1;
  std::vector<EvalRow> rows(cells.size() * per_cell);
  parallel_for(cells.size(), [&](std::size_t i) {
    const Cell& c = cells[i];
    auto scenario = config.scenario;
    scenario.params.comm_radius = c.range;
    const auto seed = episode_seed(config.seed, c.agents, c.episode);
    const auto world = flocking::sample_world(scenario, static_cast<std::size_t>(c.agents), seed);

    flocking::ExpertController expert;
    const Outcome ex = run(expert, world, config.duration, seed);
    EvalRow base;
    base.scenario = scenario_name(c.agents, c.range);
    base.agents = c.agents;
    base.range = c.range;
    base.episode = c.episode;
    base.seed = seed;
    base.expert_flocking_error = ex.flocking;
    base.expert_leader_error = ex.leader;

    EvalRow expert_row = base;
    expert_row.controller = "expert";
    expert_row.flocking_error = ex.flocking;
    expert_row.leader_error = ex.leader;
    expert_row.diverged = ex.diverged;

    if (policy) {
      PolicyController learned(*policy);
      const Outcome o = run(learned, world, config.duration, seed);
      EvalRow row = base;
      row.controller = to_string(policy->config.kind);
      row.flocking_error = o.flocking;
      row.leader_error = o.leader;
      row.diverged = o.diverged;
      rows[i * 2] = row;
      rows[i * 2 + 1] = expert_row;
    } else {
      rows[i] = expert_row;
    }
  });
  return rows;
}

}  // namespace

std::vector<EvalRow> evaluate(const Policy& policy, const EvalConfig& config) { return sweep(&policy, config); }

std::vector<EvalRow> evaluate_expert(const EvalConfig& config) { return sweep(nullptr, config); }

void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows) {
  out << "scenario,N,R,episode,seed,controller,flocking_error,leader_error,expert_flocking_error,"
         "expert_leader_error,diverged\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.scenario << ',' << r.agents << ',' << r.range << ',' << r.episode << ',' << r.seed << ','
        << r.controller << ',' << r.flocking_error << ',' << r.leader_error << ',' << r.expert_flocking_error << ','
        << r.expert_leader_error << ',' << (r.diverged ? 1 : 0) << '\n';
  }
}

double mean_flocking_error(const std::vector<EvalRow>& rows, const std::string& controller, double range) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.controller != controller || (range >= 0.0 && r.range != range)) continue;
    total += r.flocking_error;
    ++n;
  }
  if (n == 0) throw std::invalid_argument("mean_flocking_error: no matching rows");
  return total / static_cast<double>(n);
}

}  // namespace lgc
