#include "lgc/flocking.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace lgc::flocking {

std::string to_string(Consensus c) {
  return c == Consensus::MeanVelocity ? "mean_velocity" : "relative";
}

Consensus consensus_from_string(const std::string& name) {
  if (name == "mean_velocity") return Consensus::MeanVelocity;
  if (name == "relative") return Consensus::Relative;
  throw std::invalid_argument("unknown consensus mode: " + name);
}

void Params::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("flocking: sampling period must be positive");
  if (!(sensing_radius > 0.0) || !(comm_radius > sensing_radius)) {
    throw std::invalid_argument("flocking: need R > R_CA > 0");
  }
  if (!(u_max > 0.0)) throw std::invalid_argument("flocking: u_max must be positive");
  if (filter_length < 0) throw std::invalid_argument("flocking: filter length must be >= 0");
}

void World::validate() const {
  params.validate();
  if (positions.rows() < 2 || positions.cols() != 2) throw DimensionError("world: positions must be N x 2, N >= 2");
  if (velocities.rows() != positions.rows() || velocities.cols() != 2) {
    throw DimensionError("world: velocities must match positions");
  }
  if (leader >= size()) throw std::out_of_range("world: leader index out of range");
}

Matrix saturate(const Matrix& u, double u_max) { return u.cwiseMax(-u_max).cwiseMin(u_max); }

World step_dynamics(const World& world, const Matrix& u) {
  if (u.rows() != world.positions.rows() || u.cols() != 2) throw DimensionError("step_dynamics: control must be N x 2");
  if (!u.allFinite()) throw std::domain_error("step_dynamics: non-finite control");
  World next = world;
  next.positions = world.positions + world.params.dt * world.velocities;
  next.velocities = world.velocities + world.params.dt * u;
  return next;
}

Graph build_comm_graph(const World& world) {
  const std::size_t n = world.size();
  Graph g(n);
  const double r2 = world.params.comm_radius * world.params.comm_radius;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto ii = static_cast<Eigen::Index>(i);
      const auto jj = static_cast<Eigen::Index>(j);
      if ((world.positions.row(ii) - world.positions.row(jj)).squaredNorm() <= r2) g.add_edge(i, j, 1.0);
    }
  }
  return g;
}

SupportMatrix build_comm_support(const World& world) {
  return build_support(build_comm_graph(world), world.params.support, world.params.filter_length);
}

Vec2 ca_gradient(const Vec2& r_ij, double sensing_radius, double coincident_repulsion) {
  const double d2 = r_ij.squaredNorm();
  if (d2 > sensing_radius) return Vec2::Zero();
  if (d2 == 0.0) return -coincident_repulsion * Vec2::UnitX();
  return -r_ij / (d2 * d2) - r_ij / d2;
}

namespace {

Vec2 row2(const Matrix& m, std::size_t i) { return m.row(static_cast<Eigen::Index>(i)).transpose(); }

Vec2 ca_sum(const World& world, std::size_t i) {
  Vec2 total = Vec2::Zero();
  for (std::size_t j = 0; j < world.size(); ++j) {
    if (j == i) continue;
    total += ca_gradient(row2(world.positions, i) - row2(world.positions, j), world.params.sensing_radius,
                         world.params.coincident_repulsion);
  }
  return total;
}

}  // namespace

Matrix expert_follower(const World& world) {
  const Eigen::RowVector2d mean = world.velocities.colwise().mean();
  Matrix u(world.positions.rows(), 2);
  for (std::size_t i = 0; i < world.size(); ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    Eigen::RowVector2d consensus = mean;
    if (world.params.consensus == Consensus::Relative) consensus = mean - world.velocities.row(ii);
    u.row(ii) = consensus - ca_sum(world, i).transpose();
  }
  return saturate(u, world.params.u_max);
}

Vec2 expert_leader(const World& world) {
  const std::size_t l = world.leader;
  const Vec2 u = -world.params.leader_gain * (row2(world.positions, l) - world.target) - ca_sum(world, l);
  return u.cwiseMax(-world.params.u_max).cwiseMin(world.params.u_max);
}

Matrix expert_controls(const World& world) {
  world.validate();
  Matrix u = expert_follower(world);
  u.row(static_cast<Eigen::Index>(world.leader)) = expert_leader(world).transpose();
  return u;
}

Matrix extract_features(const World& world) {
  const std::size_t n = world.size();
  const double r_ca = world.params.sensing_radius;
  Matrix w = Matrix::Zero(static_cast<Eigen::Index>(n), kFeatureCount);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    Vec2 quartic = Vec2::Zero();
    Vec2 quadratic = Vec2::Zero();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const Vec2 r = row2(world.positions, i) - row2(world.positions, j);
      const double d2 = r.squaredNorm();
      if (d2 == 0.0 || d2 > r_ca * r_ca) continue;  // coincident agents carry no direction
      quartic += r / (d2 * d2);
      quadratic += r / d2;
    }
    w.block(ii, 0, 1, 2) = world.velocities.row(ii);
    w.block(ii, 2, 1, 2) = quartic.transpose();
    w.block(ii, 4, 1, 2) = quadratic.transpose();
    if (i == world.leader) {
      w.block(ii, 6, 1, 2) = (row2(world.positions, i) - world.target).transpose();
      w(ii, 8) = 1.0;
    } else {
      w(ii, 9) = 1.0;
    }
  }
  return w;
}

std::vector<double> default_feature_scale() {
  return {0.5, 0.5, 0.1, 0.1, 0.1, 0.1, 0.05, 0.05, 1.0, 1.0};
}

std::size_t Trajectory::agents() const {
  if (!records.empty()) return static_cast<std::size_t>(records.front().positions.rows());
  return static_cast<std::size_t>(final_positions.rows());
}

World Trajectory::initial_world() const {
  if (records.empty()) throw std::logic_error("trajectory has no records");
  World w;
  w.positions = records.front().positions;
  w.velocities = records.front().velocities;
  w.leader = leader;
  w.target = target;
  w.params = params;
  return w;
}

Trajectory rollout(Controller& controller, const World& initial, double duration, std::uint64_t seed) {
  initial.validate();
  const double ticks_real = duration / initial.params.dt;
  const auto ticks = static_cast<int>(std::llround(ticks_real));
  if (ticks < 0 || std::abs(ticks_real - ticks) > 1e-9) {
    throw std::invalid_argument("rollout: duration must be a nonnegative multiple of the sampling period");
  }
  Trajectory traj;
  traj.seed = seed;
  traj.leader = initial.leader;
  traj.target = initial.target;
  traj.params = initial.params;

  World world = initial;
  controller.reset(world);
  for (int t = 0; t < ticks; ++t) {
    TrajectoryRecord rec;
    rec.tick = t;
    rec.positions = world.positions;
    rec.velocities = world.velocities;
    const SupportMatrix support = build_comm_support(world);
    rec.support = support.matrix();
    rec.features = extract_features(world);
    rec.expert = expert_controls(world);
    Matrix u = controller.act(world, rec.features, support);
    if (!u.allFinite() || !rec.features.allFinite()) {
      traj.diverged = true;
      break;
    }
    rec.applied = saturate(u, world.params.u_max);
    World next = step_dynamics(world, rec.applied);
    traj.records.push_back(std::move(rec));
    world = std::move(next);
    if (!world.positions.allFinite() || !world.velocities.allFinite()) {
      traj.diverged = true;
      break;
    }
  }
  traj.final_positions = world.positions;
  traj.final_velocities = world.velocities;
  return traj;
}

double instant_flocking_error(const Matrix& velocities) {
  const Eigen::RowVector2d mean = velocities.colwise().mean();
  return (velocities.rowwise() - mean).rowwise().norm().mean();
}

double flocking_error(const Trajectory& trajectory) {
  if (trajectory.records.empty()) throw std::invalid_argument("flocking_error: empty trajectory");
  double total = 0.0;
  for (const auto& r : trajectory.records) total += instant_flocking_error(r.velocities);
  total += instant_flocking_error(trajectory.final_velocities);
  return total / static_cast<double>(trajectory.records.size() + 1);
}

double leader_error(const Trajectory& trajectory) {
  if (trajectory.records.empty()) throw std::invalid_argument("leader_error: empty trajectory");
  const auto l = static_cast<Eigen::Index>(trajectory.leader);
  const double initial = (trajectory.records.front().positions.row(l).transpose() - trajectory.target).squaredNorm();
  const double final = (trajectory.final_positions.row(l).transpose() - trajectory.target).squaredNorm();
  if (initial == 0.0) {
    if (final == 0.0) return 0.0;
    throw std::domain_error("leader_error: leader starts on the target but ends elsewhere");
  }
  return final / initial;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

World sample_world(const ScenarioConfig& config, std::size_t agents, std::uint64_t seed) {
  if (agents < 2) throw std::invalid_argument("sample_world: need at least two agents");
  if (!(config.min_spacing > 0.0) || config.max_spacing < config.min_spacing) {
    throw std::invalid_argument("sample_world: invalid spacing band");
  }
  config.params.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double side = std::sqrt(static_cast<double>(agents)) * 0.8;
  const std::size_t cap = 10 * agents * agents;
  std::size_t attempts = 0;

  std::vector<Vec2> placed;
  placed.emplace_back(side * unit(rng), side * unit(rng));
  const double two_pi = 2.0 * std::acos(-1.0);
  while (placed.size() < agents) {
    if (++attempts > cap) throw std::runtime_error("sample_world: placement retry cap exceeded");
    // Annulus sampling around an already placed agent.
    const auto anchor = static_cast<std::size_t>(unit(rng) * static_cast<double>(placed.size())) % placed.size();
    const double radius = config.min_spacing + (config.max_spacing - config.min_spacing) * unit(rng);
    const double angle = two_pi * unit(rng);
    const Vec2 candidate = placed[anchor] + radius * Vec2(std::cos(angle), std::sin(angle));
    if (candidate.x() < 0.0 || candidate.y() < 0.0 || candidate.x() > side || candidate.y() > side) continue;
    bool ok = true;
    for (const auto& p : placed) {
      if ((p - candidate).norm() < config.min_spacing) {
        ok = false;
        break;
      }
    }
    if (ok) placed.push_back(candidate);
  }

  World w;
  w.params = config.params;
  w.positions.resize(static_cast<Eigen::Index>(agents), 2);
  w.velocities.resize(static_cast<Eigen::Index>(agents), 2);
  for (std::size_t i = 0; i < agents; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    w.positions.row(ii) = placed[i].transpose();
    w.velocities(ii, 0) = config.max_speed * (2.0 * unit(rng) - 1.0);
    w.velocities(ii, 1) = config.max_speed * (2.0 * unit(rng) - 1.0);
  }
  w.leader = static_cast<std::size_t>(unit(rng) * static_cast<double>(agents)) % agents;
  const Vec2 leader_pos = placed[w.leader];
  w.target = leader_pos + config.target_half_width * Vec2(2.0 * unit(rng) - 1.0, 2.0 * unit(rng) - 1.0);
  return w;
}

}  // namespace lgc::flocking
