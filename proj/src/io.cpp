#include "lgc/io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lgc {

using nlohmann::json;

json to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  if (!j.is_array()) throw std::invalid_argument("matrix: expected an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? Eigen::Index{0} : static_cast<Eigen::Index>(j.front().size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw std::invalid_argument("matrix: ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

json to_json(const flocking::Params& p) {
  return {{"dt", p.dt},
          {"comm_radius", p.comm_radius},
          {"sensing_radius", p.sensing_radius},
          {"leader_gain", p.leader_gain},
          {"u_max", p.u_max},
          {"consensus", flocking::to_string(p.consensus)},
          {"coincident_repulsion", p.coincident_repulsion},
          {"support", to_string(p.support)},
          {"filter_length", p.filter_length}};
}

flocking::Params flocking_params_from_json(const json& j) {
  flocking::Params p;
  p.dt = j.value("dt", p.dt);
  p.comm_radius = j.value("comm_radius", p.comm_radius);
  p.sensing_radius = j.value("sensing_radius", p.sensing_radius);
  p.leader_gain = j.value("leader_gain", p.leader_gain);
  p.u_max = j.value("u_max", p.u_max);
  if (j.contains("consensus")) p.consensus = flocking::consensus_from_string(j.at("consensus").get<std::string>());
  p.coincident_repulsion = j.value("coincident_repulsion", p.coincident_repulsion);
  if (j.contains("support")) p.support = support_kind_from_string(j.at("support").get<std::string>());
  p.filter_length = j.value("filter_length", p.filter_length);
  p.validate();
  return p;
}

json to_json(const flocking::ScenarioConfig& c) {
  return {{"team_sizes", c.team_sizes},         {"min_spacing", c.min_spacing}, {"max_spacing", c.max_spacing},
          {"max_speed", c.max_speed},           {"target_half_width", c.target_half_width},
          {"params", to_json(c.params)}};
}

flocking::ScenarioConfig scenario_from_json(const json& j) {
  flocking::ScenarioConfig c;
  c.team_sizes = j.value("team_sizes", c.team_sizes);
  c.min_spacing = j.value("min_spacing", c.min_spacing);
  c.max_spacing = j.value("max_spacing", c.max_spacing);
  c.max_speed = j.value("max_speed", c.max_speed);
  c.target_half_width = j.value("target_half_width", c.target_half_width);
  if (j.contains("params")) c.params = flocking_params_from_json(j.at("params"));
  return c;
}

json to_json(const flocking::Trajectory& t) {
  json records = json::array();
  for (const auto& r : t.records) {
    records.push_back({{"tick", r.tick},
                       {"positions", to_json(r.positions)},
                       {"velocities", to_json(r.velocities)},
                       {"features", to_json(r.features)},
                       {"expert", to_json(r.expert)},
                       {"applied", to_json(r.applied)},
                       {"support", to_json(r.support)}});
  }
  return {{"seed", t.seed},
          {"N", t.agents()},
          {"leader", t.leader},
          {"target", {t.target.x(), t.target.y()}},
          {"params", to_json(t.params)},
          {"records", std::move(records)},
          {"final", {{"positions", to_json(t.final_positions)}, {"velocities", to_json(t.final_velocities)}}},
          {"diverged", t.diverged}};
}

flocking::Trajectory trajectory_from_json(const json& j) {
  flocking::Trajectory t;
  t.seed = j.at("seed").get<std::uint64_t>();
  t.leader = j.at("leader").get<std::size_t>();
  const auto& target = j.at("target");
  t.target = {target.at(0).get<double>(), target.at(1).get<double>()};
  t.params = flocking_params_from_json(j.at("params"));
  for (const auto& r : j.at("records")) {
    flocking::TrajectoryRecord rec;
    rec.tick = r.at("tick").get<int>();
    rec.positions = matrix_from_json(r.at("positions"));
    rec.velocities = matrix_from_json(r.at("velocities"));
    rec.features = matrix_from_json(r.at("features"));
    rec.expert = matrix_from_json(r.at("expert"));
    rec.applied = matrix_from_json(r.at("applied"));
    rec.support = matrix_from_json(r.at("support"));
    t.records.push_back(std::move(rec));
  }
  t.final_positions = matrix_from_json(j.at("final").at("positions"));
  t.final_velocities = matrix_from_json(j.at("final").at("velocities"));
  t.diverged = j.value("diverged", false);
  const auto n = j.at("N").get<std::size_t>();
  for (const auto& r : t.records) {
    if (static_cast<std::size_t>(r.positions.rows()) != n || r.features.cols() != flocking::kFeatureCount ||
        r.expert.rows() != r.positions.rows() || r.support.rows() != r.positions.rows()) {
      throw std::invalid_argument("trajectory: record shapes disagree with N");
    }
  }
  return t;
}

json to_json(const PolicyConfig& c) {
  return {{"kind", to_string(c.kind)},
          {"raw_features", c.raw_features},
          {"hidden", c.hidden},
          {"F", c.state_features},
          {"K", c.filter_length},
          {"F_shared", c.shared_state},
          {"G_shared", c.shared_input},
          {"controls", c.controls},
          {"u_max", c.u_max},
          {"epsilon", c.epsilon},
          {"t_cf", c.cf_horizon},
          {"ode_horizon", c.ode_horizon},
          {"solver_steps", c.solver_steps},
          {"input_scale", c.input_scale}};
}

PolicyConfig policy_config_from_json(const json& j) {
  PolicyConfig c;
  if (j.contains("kind")) c.kind = model_kind_from_string(j.at("kind").get<std::string>());
  c.raw_features = j.value("raw_features", c.raw_features);
  c.hidden = j.value("hidden", c.hidden);
  c.state_features = j.value("F", c.state_features);
  c.filter_length = j.value("K", c.filter_length);
  c.shared_state = j.value("F_shared", c.shared_state);
  c.shared_input = j.value("G_shared", c.shared_input);
  c.controls = j.value("controls", c.controls);
  c.u_max = j.value("u_max", c.u_max);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.cf_horizon = j.value("t_cf", c.cf_horizon);
  c.ode_horizon = j.value("ode_horizon", c.ode_horizon);
  c.solver_steps = j.value("solver_steps", c.solver_steps);
  c.input_scale = j.value("input_scale", c.input_scale);
  return c;
}

json checkpoint_to_json(const Policy& policy, const json& provenance) {
  Policy copy = policy;
  json tensors = json::object();
  copy.visit([&](const std::string& name, Matrix& m) { tensors[name] = to_json(m); });
  json doc = {{"format", "lgc-checkpoint"},
              {"version", 1},
              {"kind", to_string(policy.config.kind)},
              {"hyperparameters", to_json(policy.config)},
              {"tensors", std::move(tensors)}};
  if (!provenance.is_null()) doc["config"] = provenance;
  return doc;
}

Policy checkpoint_from_json(const json& j) {
  if (j.value("format", std::string()) != "lgc-checkpoint") throw std::invalid_argument("not an lgc checkpoint");
  PolicyConfig config = policy_config_from_json(j.at("hyperparameters"));
  if (j.contains("kind") && model_kind_from_string(j.at("kind").get<std::string>()) != config.kind) {
    throw std::invalid_argument("checkpoint: kind disagrees with hyperparameters");
  }
  Policy policy = make_zero_policy(config);
  const auto& tensors = j.at("tensors");
  std::size_t used = 0;
  policy.visit([&](const std::string& name, Matrix& m) {
    if (!tensors.contains(name)) throw std::invalid_argument("checkpoint: missing tensor " + name);
    Matrix loaded = matrix_from_json(tensors.at(name));
    if (loaded.rows() != m.rows() || loaded.cols() != m.cols()) {
      throw DimensionError("checkpoint: tensor " + name + " has the wrong shape");
    }
    m = std::move(loaded);
    ++used;
  });
  if (used != tensors.size()) throw std::invalid_argument("checkpoint: unexpected extra tensors");
  return policy;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

void save_checkpoint(const std::string& path, const Policy& policy, const json& provenance) {
  write_text_file(path, checkpoint_to_json(policy, provenance).dump() + "\n");
}

Policy load_checkpoint(const std::string& path) { return checkpoint_from_json(read_json_file(path)); }

}  // namespace lgc
