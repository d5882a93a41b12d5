#include "lgc/training.hpp"

#include "lgc/autodiff.hpp"
#include "lgc/io.hpp"
#include "lgc/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace lgc {

using nlohmann::json;
using Trajectories = std::vector<const flocking::Trajectory*>;

PolicyConfig flocking_policy_config(ModelKind kind) {
  PolicyConfig c;
  c.kind = kind;
  c.raw_features = flocking::kFeatureCount;
  c.input_scale = flocking::default_feature_scale();
  return c;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

void adam_update(AdamState& state, const std::vector<NamedTensor>& params, const Gradients& grads) {
  // Validate everything before touching any tensor.
  for (const auto& p : params) {
    const auto it = grads.find(p.name);
    if (it == grads.end()) throw std::invalid_argument("adam: no gradient for " + p.name);
    if (it->second.rows() != p.value->rows() || it->second.cols() != p.value->cols()) {
      throw DimensionError("adam: gradient shape mismatch for " + p.name);
    }
    if (!it->second.allFinite()) throw std::domain_error("adam: non-finite gradient for " + p.name);
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (const auto& p : params) {
    const Matrix& g = grads.at(p.name);
    auto [mi, fresh_m] = state.m.try_emplace(p.name, Matrix::Zero(g.rows(), g.cols()));
    auto [vi, fresh_v] = state.v.try_emplace(p.name, Matrix::Zero(g.rows(), g.cols()));
    if (mi->second.rows() != g.rows() || mi->second.cols() != g.cols()) {
      throw DimensionError("adam: moment shape mismatch for " + p.name);
    }
    mi->second = state.beta1 * mi->second + (1.0 - state.beta1) * g;
    vi->second = state.beta2 * vi->second + (1.0 - state.beta2) * g.cwiseAbs2();
    const Matrix m_hat = mi->second / c1;
    const Matrix v_hat = vi->second / c2;
    *p.value -= (state.lr * m_hat.array() / (v_hat.array().sqrt() + state.eps)).matrix();
  }
}

void adam_update(AdamState& state, Policy& policy, const Gradients& grads) {
  std::vector<NamedTensor> params;
  policy.visit([&](const std::string& name, Matrix& m) { params.push_back({name, &m}); });
  adam_update(state, params, grads);
}

double clip_gradients(Gradients& grads, double limit) {
  double norm = 0.0;
  for (const auto& [name, g] : grads)
    if (g.size() > 0) norm = std::max(norm, g.cwiseAbs().maxCoeff());
  if (norm > limit) {
    for (auto& [name, g] : grads) g *= limit / norm;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Regularizer
// ---------------------------------------------------------------------------

std::vector<SupportMatrix> sample_supports(const Trajectories& trajectories, int filter_length, std::size_t count) {
  std::vector<const flocking::TrajectoryRecord*> records;
  std::vector<SupportKind> kinds;
  for (const auto* t : trajectories) {
    for (const auto& r : t->records) {
      records.push_back(&r);
      kinds.push_back(t->params.support);
    }
  }
  std::vector<SupportMatrix> out;
  if (records.empty() || count == 0) return out;
  count = std::min(count, records.size());
  for (std::size_t k = 0; k < count; ++k) {
    // evenly spaced over the concatenated records
    const std::size_t idx = (k * records.size()) / count;
    out.emplace_back(kinds[idx], records[idx]->support, filter_length);
  }
  return out;
}

Regularizer make_regularizer(const PolicyConfig& config, const Trajectories& trajectories, double beta,
                             std::size_t samples) {
  Regularizer reg;
  reg.beta = beta;
  reg.samples = sample_supports(trajectories, config.filter_length, samples);
  if (reg.samples.empty()) throw std::invalid_argument("regularizer: no support samples");
  const bool normalized = std::all_of(reg.samples.begin(), reg.samples.end(), [](const SupportMatrix& s) {
    return s.kind() == SupportKind::NormalizedLaplacian;
  });
  reg.bounds = normalized ? SupportBounds::normalized_laplacian(config.filter_length, reg.samples)
                          : SupportBounds::measured(reg.samples);
  return reg;
}

PenaltyGradient<Gradients> policy_penalty(const Policy& policy, const Regularizer& reg) {
  PenaltyGradient<Gradients> out;
  const auto collect = [&](auto& weights) {
    weights.visit([&](const std::string& name, Matrix& g) { out.gradient["core." + name] = g; });
  };
  if (policy.config.kind == ModelKind::Ggnn) {
    auto pg = ggnn_penalty(policy.weights.ggnn, reg.bounds, reg.beta);
    out.value = pg.value;
    collect(pg.gradient);
  } else {
    ContractionOptions options;
    options.state_mask = policy.config.masks().state;
    auto pg = liquid_penalty(policy.weights.liquid, reg.bounds, reg.samples, reg.beta, options);
    out.value = pg.value;
    collect(pg.gradient);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

namespace {

SupportMatrix record_support(const flocking::Trajectory& t, const flocking::TrajectoryRecord& r, int k) {
  return SupportMatrix(t.params.support, r.support, k);
}

std::size_t term_count(const flocking::Trajectory& t) {
  std::size_t n = 0;
  for (const auto& r : t.records) n += static_cast<std::size_t>(r.expert.size());
  return n;
}

/// Sum of squared control errors over one trajectory, untaped.
double trajectory_sse(const Policy& policy, const flocking::Trajectory& t) {
  const auto& c = policy.config;
  Matrix state = initial_state(c, t.agents());
  double sse = 0.0;
  for (const auto& r : t.records) {
    const auto out = policy_forward(c, policy.weights, record_support(t, r, c.filter_length), state, r.features);
    sse += (out.controls - r.expert).squaredNorm();
    state = out.state;
  }
  return sse;
}

struct TrajectoryGradient {
  double sse = 0.0;
  Gradients grads;
};

/// Sum of squared control errors over one trajectory and its gradient (BPTT).
TrajectoryGradient trajectory_gradient(const Policy& policy, const flocking::Trajectory& t) {
  using namespace ops;
  const auto& c = policy.config;
  Tape tape;
  std::vector<Var> leaves;
  const auto weights = policy.weights.map<Var>(c.kind, [&](const Matrix& m) {
    leaves.push_back(tape.leaf(m));
    return leaves.back();
  });
  std::vector<std::string> names;
  Policy shape = policy;
  shape.visit([&](const std::string& name, Matrix&) { names.push_back(name); });
  if (names.size() != leaves.size()) throw std::logic_error("policy tensor enumeration mismatch");

  Var state = tape.constant(initial_state(c, t.agents()));
  Var total = tape.constant(Matrix::Zero(1, 1));
  for (const auto& r : t.records) {
    const auto out = policy_forward(c, weights, record_support(t, r, c.filter_length), state, r.features);
    const Var diff = add_const(out.controls, -r.expert);
    total = add(total, sum(mul(diff, diff)));
    state = out.state;
  }
  TrajectoryGradient out;
  out.sse = total.value()(0, 0);
  tape.backward(total);
  for (std::size_t i = 0; i < names.size(); ++i) out.grads[names[i]] = tape.grad(leaves[i]);
  return out;
}

}  // namespace

double sequence_mse(const Policy& policy, const Trajectories& batch) {
  std::vector<double> sse(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { sse[i] = trajectory_sse(policy, *batch[i]); });
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += sse[i];
    count += term_count(*batch[i]);
  }
  if (count == 0) throw std::invalid_argument("imitation loss: empty batch");
  return total / static_cast<double>(count);
}

LossValue imitation_loss(const Policy& policy, const Trajectories& batch, const Regularizer& reg) {
  LossValue v;
  v.mse = sequence_mse(policy, batch);
  for (const auto* t : batch) v.count += term_count(*t);
  if (reg.enabled) v.penalty = policy_penalty(policy, reg).value;
  return v;
}

LossGradient imitation_gradient(const Policy& policy, const Trajectories& batch, const Regularizer& reg) {
  std::vector<TrajectoryGradient> parts(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) { parts[i] = trajectory_gradient(policy, *batch[i]); });

  LossGradient out;
  for (const auto* t : batch) out.loss.count += term_count(*t);
  if (out.loss.count == 0) throw std::invalid_argument("imitation loss: empty batch");
  const double scale = 1.0 / static_cast<double>(out.loss.count);
  for (auto& part : parts) {  // fixed reduction order
    out.loss.mse += part.sse * scale;
    for (auto& [name, g] : part.grads) {
      auto it = out.gradients.find(name);
      if (it == out.gradients.end()) {
        out.gradients.emplace(name, g * scale);
      } else {
        it->second += g * scale;
      }
    }
  }
  if (reg.enabled) {
    const auto pen = policy_penalty(policy, reg);
    out.loss.penalty = pen.value;
    for (const auto& [name, g] : pen.gradient) out.gradients.at(name) += g;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

void PolicyController::reset(const flocking::World& world) { state_ = initial_state(policy_.config, world.size()); }

Matrix PolicyController::act(const flocking::World& world, const Matrix& features, const SupportMatrix& support) {
  if (static_cast<std::size_t>(state_.rows()) != world.size()) reset(world);
  auto out = policy_forward(policy_.config, policy_.weights, support, state_, features);
  state_ = std::move(out.state);
  return out.controls;
}

std::size_t dagger_round(const Policy& policy, Dataset& dataset, const DaggerOptions& options) {
  std::vector<const DatasetEntry*> sources;
  for (const auto& e : dataset.entries)
    if (e.split == Split::Train && e.origin == Origin::Expert && !e.trajectory.records.empty()) sources.push_back(&e);
  if (sources.empty()) throw std::invalid_argument("dagger: no expert training trajectories to start from");
  const std::size_t count = options.rollouts < 0 ? sources.size() : static_cast<std::size_t>(options.rollouts);

  std::vector<flocking::Trajectory> produced(count);
  parallel_for(count, [&](std::size_t i) {
    const auto& src = sources[i % sources.size()]->trajectory;
    PolicyController controller(policy);
    const double duration = static_cast<double>(src.records.size()) * src.params.dt;
    auto traj = flocking::rollout(controller, src.initial_world(), duration, flocking::mix_seed(options.seed, i));
    if (traj.diverged) {
      std::ostringstream msg;
      msg << "dagger: rollout " << i << " from trajectory seed " << src.seed << " diverged at tick "
          << traj.records.size();
      throw std::runtime_error(msg.str());
    }
    produced[i] = std::move(traj);
  });
  for (auto& t : produced) dataset.entries.push_back({std::move(t), Split::Train, Origin::Dagger});
  return count;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

json to_json(const TrainConfig& c) {
  return {{"policy", to_json(c.policy)},
          {"epochs", c.epochs},
          {"dagger_every", c.dagger_every},
          {"dagger_rollouts", c.dagger_rollouts},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"beta", c.beta},
          {"regularize", c.regularize},
          {"support_samples", c.support_samples},
          {"clip", c.clip},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  if (j.contains("policy")) c.policy = policy_config_from_json(j.at("policy"));
  c.epochs = j.value("epochs", c.epochs);
  c.dagger_every = j.value("dagger_every", c.dagger_every);
  c.dagger_rollouts = j.value("dagger_rollouts", c.dagger_rollouts);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.beta = j.value("beta", c.beta);
  c.regularize = j.value("regularize", c.regularize);
  c.support_samples = j.value("support_samples", c.support_samples);
  c.clip = j.value("clip", c.clip);
  c.seed = j.value("seed", c.seed);
  return c;
}

json to_json(const EpochMetrics& m) {
  const auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  return {{"epoch", m.epoch},
          {"train_mse", num(m.train_mse)},
          {"val_mse", num(m.val_mse)},
          {"penalty", num(m.penalty)},
          {"margins", m.margins},
          {"clipped", m.clipped},
          {"train_trajectories", m.train_trajectories},
          {"dagger_added", m.dagger_added}};
}

namespace {

void check_train_config(const TrainConfig& c) {
  if (c.epochs < 0) throw std::invalid_argument("train: epochs must be >= 0");
  if (c.dagger_every < 0) throw std::invalid_argument("train: dagger_every must be >= 0");
  if (c.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (!(c.lr > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (!(c.beta > 0.0)) throw std::invalid_argument("train: beta must be positive");
  if (!(c.clip > 0.0)) throw std::invalid_argument("train: clip limit must be positive");
  if (c.support_samples < 1) throw std::invalid_argument("train: need at least one support sample");
}

bool finite_params(Policy& p) {
  bool ok = true;
  p.visit([&](const std::string&, Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

}  // namespace

TrainResult train(const TrainConfig& config, Dataset& dataset, const EpochCallback& on_epoch, const LogCallback& log) {
  return train(config, make_random_policy(config.policy, flocking::mix_seed(config.seed, 0x5eed)), dataset, on_epoch,
               log);
}

TrainResult train(const TrainConfig& config, const Policy& initial, Dataset& dataset, const EpochCallback& on_epoch,
                  const LogCallback& log) {
  check_train_config(config);
  TrainResult result;
  result.policy = initial;
  result.policy.config = config.policy;
  if (config.epochs == 0) return result;

  const auto trajectories = [&](Split s) {
    Trajectories out;
    for (const auto* e : dataset.select(s)) out.push_back(&e->trajectory);
    return out;
  };
  const Trajectories initial_train = trajectories(Split::Train);
  if (initial_train.empty()) throw std::invalid_argument("train: dataset has no training trajectories");

  Regularizer reg = make_regularizer(config.policy, initial_train, config.beta,
                                     static_cast<std::size_t>(config.support_samples));
  reg.enabled = config.regularize;

  AdamState adam;
  adam.lr = config.lr;
  std::mt19937_64 rng(flocking::mix_seed(config.seed, 0x747261696eULL));

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch;
    // Pointers into dataset.entries are refreshed each epoch because DAGGER appends.
    const Trajectories train_set = trajectories(Split::Train);
    m.train_trajectories = train_set.size();
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);

    double sse = 0.0;
    std::size_t terms = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      Trajectories batch;
      for (std::size_t k = start; k < std::min(order.size(), start + static_cast<std::size_t>(config.batch_size)); ++k)
        batch.push_back(train_set[order[k]]);
      auto step = imitation_gradient(result.policy, batch, reg);
      if (!std::isfinite(step.loss.total())) {
        result.aborted = true;
        result.message = "non-finite loss at epoch " + std::to_string(epoch);
        return result;
      }
      const double norm = clip_gradients(step.gradients, config.clip);
      if (norm > config.clip) {
        ++m.clipped;
        if (log) {
          std::ostringstream msg;
          msg << "epoch " << epoch << ": gradient clipped (max |g| = " << norm << ")";
          log(msg.str());
        }
      }
      Policy candidate = result.policy;
      try {
        adam_update(adam, candidate, step.gradients);
      } catch (const std::domain_error& e) {
        result.aborted = true;
        result.message = std::string(e.what()) + " at epoch " + std::to_string(epoch);
        return result;
      }
      if (!finite_params(candidate)) {
        result.aborted = true;
        result.message = "non-finite parameters after update at epoch " + std::to_string(epoch);
        return result;
      }
      result.policy = std::move(candidate);
      sse += step.loss.mse * static_cast<double>(step.loss.count);
      terms += step.loss.count;
    }
    m.train_mse = sse / static_cast<double>(terms);
    const Trajectories val_set = trajectories(Split::Val);
    m.val_mse = val_set.empty() ? std::numeric_limits<double>::quiet_NaN() : sequence_mse(result.policy, val_set);
    m.penalty = policy_penalty(result.policy, reg).value;
    m.margins = stability_report(result.policy, reg.bounds, reg.samples).margins();

    if (config.dagger_every > 0 && epoch % config.dagger_every == 0 && epoch < config.epochs) {
      m.dagger_added = dagger_round(result.policy, dataset,
                                    {config.dagger_rollouts, flocking::mix_seed(config.seed, static_cast<std::uint64_t>(epoch))});
      if (log) log("epoch " + std::to_string(epoch) + ": DAGGER added " + std::to_string(m.dagger_added) + " trajectories");
    }
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

}  // namespace lgc
