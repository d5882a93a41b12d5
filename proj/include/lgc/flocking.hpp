#pragma once

#include "lgc/graph.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace lgc::flocking {

using Vec2 = Eigen::Vector2d;

enum class Consensus {
  MeanVelocity,  // u_i = mean_j v_j (as printed)
  Relative,      // u_i = -(v_i - mean_j v_j)
};

std::string to_string(Consensus c);
Consensus consensus_from_string(const std::string& name);

struct Params {
  double dt = 0.05;              // sampling period T (s)
  double comm_radius = 4.0;      // R (m)
  double sensing_radius = 1.0;   // R_CA (m)
  double leader_gain = 1.0;      // W_p
  double u_max = 5.0;            // control saturation (m/s^2)
  Consensus consensus = Consensus::MeanVelocity;
  double coincident_repulsion = 1e3;  // gradient magnitude for coincident agents
  SupportKind support = SupportKind::NormalizedLaplacian;
  int filter_length = 2;

  void validate() const;
};

struct World {
  Matrix positions;   // N x 2
  Matrix velocities;  // N x 2
  std::size_t leader = 0;
  Vec2 target = Vec2::Zero();
  Params params;

  std::size_t size() const { return static_cast<std::size_t>(positions.rows()); }
  void validate() const;
};

/// Clamps every component into [-u_max, u_max].
Matrix saturate(const Matrix& u, double u_max);

/// r+ = r + T v, v+ = v + T u.
World step_dynamics(const World& world, const Matrix& u);

/// Edge (i, j), weight 1, iff ||r_i - r_j|| <= R.
Graph build_comm_graph(const World& world);
SupportMatrix build_comm_support(const World& world);

/// Collision-avoidance gradient for r_ij = r_i - r_j; zero when ||r_ij||^2 > R_CA.
Vec2 ca_gradient(const Vec2& r_ij, double sensing_radius, double coincident_repulsion = 1e3);

/// Centralized experts, saturated.
Matrix expert_follower(const World& world);
Vec2 expert_leader(const World& world);
/// Followers use expert_follower, the leader row uses expert_leader.
Matrix expert_controls(const World& world);

constexpr int kFeatureCount = 10;

/// Per agent: [v, Σ r_ij/||r||^4, Σ r_ij/||r||^2, leader offset or 0, one-hot role].
Matrix extract_features(const World& world);

/// Fixed per-column scales applied before the encoder.
std::vector<double> default_feature_scale();

struct TrajectoryRecord {
  int tick = 0;
  Matrix positions;
  Matrix velocities;
  Matrix features;  // N x 10
  Matrix expert;    // N x 2
  Matrix applied;   // N x 2
  Matrix support;   // N x N shift operator
};

struct Trajectory {
  std::uint64_t seed = 0;
  std::size_t leader = 0;
  Vec2 target = Vec2::Zero();
  Params params;
  std::vector<TrajectoryRecord> records;
  Matrix final_positions;
  Matrix final_velocities;
  bool diverged = false;

  std::size_t agents() const;
  World initial_world() const;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset(const World& world) = 0;
  virtual Matrix act(const World& world, const Matrix& features, const SupportMatrix& support) = 0;
};

class ExpertController : public Controller {
 public:
  void reset(const World&) override {}
  Matrix act(const World& world, const Matrix&, const SupportMatrix&) override { return expert_controls(world); }
};

class ZeroController : public Controller {
 public:
  void reset(const World&) override {}
  Matrix act(const World& world, const Matrix&, const SupportMatrix&) override {
    return Matrix::Zero(static_cast<Eigen::Index>(world.size()), 2);
  }
};

/// Per tick: graph -> features -> controller -> saturation -> dynamics.
/// A non-finite state stops the loop and marks the trajectory diverged.
Trajectory rollout(Controller& controller, const World& initial, double duration, std::uint64_t seed = 0);

/// Time average of (1/N) Σ_i ||v_i - v̄|| over every recorded state (m/s).
double flocking_error(const Trajectory& trajectory);
/// (1/N) Σ_i ||v_i - v̄|| for one velocity snapshot.
double instant_flocking_error(const Matrix& velocities);
/// Final over initial squared leader-target distance.
double leader_error(const Trajectory& trajectory);

struct ScenarioConfig {
  std::vector<int> team_sizes{4, 6, 10, 12, 15};
  double min_spacing = 0.6;
  double max_spacing = 1.0;
  double max_speed = 2.0;
  double target_half_width = 10.0;
  Params params;
};

/// Random initial world: nearest-neighbour spacing in [min, max], speeds
/// uniform per component, random leader, target in a square around it.
World sample_world(const ScenarioConfig& config, std::size_t agents, std::uint64_t seed);

/// Deterministic sub-seed derivation.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace lgc::flocking
