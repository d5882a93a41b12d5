#pragma once

#include "lgc/dataset.hpp"
#include "lgc/flocking.hpp"
#include "lgc/models.hpp"
#include "lgc/stability.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace lgc {

using Gradients = std::map<std::string, Matrix>;

/// Flocking defaults: F = 50, K = 2, F' = G' = 4 and the fixed feature scales.
PolicyConfig flocking_policy_config(ModelKind kind);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::map<std::string, Matrix> m;
  std::map<std::string, Matrix> v;
};

struct NamedTensor {
  std::string name;
  Matrix* value = nullptr;
};

/// One bias-corrected Adam step. Every tensor needs a gradient of the same
/// shape; non-finite gradients are rejected with the tensor name.
void adam_update(AdamState& state, const std::vector<NamedTensor>& params, const Gradients& grads);
void adam_update(AdamState& state, Policy& policy, const Gradients& grads);

/// Scales all gradients so that max |g| <= limit. Returns the norm before clipping.
double clip_gradients(Gradients& grads, double limit);

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Supports and bounds used by the stability regularizer.
struct Regularizer {
  bool enabled = true;
  double beta = 10.0;
  SupportBounds bounds;
  std::vector<SupportMatrix> samples;
};

/// Picks up to `count` supports spread over the trajectories (deterministic).
std::vector<SupportMatrix> sample_supports(const std::vector<const flocking::Trajectory*>& trajectories,
                                           int filter_length, std::size_t count);
Regularizer make_regularizer(const PolicyConfig& config, const std::vector<const flocking::Trajectory*>& trajectories,
                             double beta, std::size_t samples = 8);

/// Π and its gradient for the policy's core.
PenaltyGradient<Gradients> policy_penalty(const Policy& policy, const Regularizer& reg);

struct LossValue {
  double mse = 0.0;      // mean over agents, ticks, control dims and trajectories
  double penalty = 0.0;  // Π
  std::size_t count = 0;  // number of squared terms in the mean
  double total() const { return mse + penalty; }
};

/// Forward-only loss over a batch of trajectories (policy driven by the
/// recorded features, hidden state carried across ticks).
LossValue imitation_loss(const Policy& policy, const std::vector<const flocking::Trajectory*>& batch,
                         const Regularizer& reg);
double sequence_mse(const Policy& policy, const std::vector<const flocking::Trajectory*>& batch);

struct LossGradient {
  LossValue loss;
  Gradients gradients;
};

/// Loss and its gradient by backpropagation through every tick of every
/// trajectory in the batch.
LossGradient imitation_gradient(const Policy& policy, const std::vector<const flocking::Trajectory*>& batch,
                                const Regularizer& reg);

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

/// Runs the policy as a decentralized controller, carrying the hidden state.
class PolicyController : public flocking::Controller {
 public:
  explicit PolicyController(Policy policy) : policy_(std::move(policy)) {}

  void reset(const flocking::World& world) override;
  Matrix act(const flocking::World& world, const Matrix& features, const SupportMatrix& support) override;

 private:
  Policy policy_;
  Matrix state_;
};

struct DaggerOptions {
  int rollouts = -1;  // -1: one per expert-generated training trajectory
  std::uint64_t seed = 0;
};

/// Rolls the learned policy out from the training initial conditions, labels
/// every visited state with the expert and appends the trajectories to the
/// training split. Returns the number of trajectories added.
std::size_t dagger_round(const Policy& policy, Dataset& dataset, const DaggerOptions& options);

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainConfig {
  PolicyConfig policy = flocking_policy_config(ModelKind::Cfgc);
  int epochs = 120;
  int dagger_every = 20;  // 0 disables DAGGER
  int dagger_rollouts = -1;
  int batch_size = 1;     // trajectories per update
  double lr = 1e-3;
  double beta = 10.0;
  bool regularize = true;
  int support_samples = 8;
  double clip = 10.0;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochMetrics {
  int epoch = 0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double penalty = 0.0;
  std::map<std::string, double> margins;
  int clipped = 0;
  std::size_t train_trajectories = 0;
  std::size_t dagger_added = 0;
};

nlohmann::json to_json(const EpochMetrics& m);

struct TrainResult {
  Policy policy;
  std::vector<EpochMetrics> metrics;
  bool aborted = false;
  std::string message;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;
using LogCallback = std::function<void(const std::string&)>;

/// Full imitation-learning loop. `dataset` grows through DAGGER. On a
/// non-finite loss the result carries the last good weights and aborted=true.
TrainResult train(const TrainConfig& config, Dataset& dataset, const EpochCallback& on_epoch = {},
                  const LogCallback& log = {});
TrainResult train(const TrainConfig& config, const Policy& initial, Dataset& dataset,
                  const EpochCallback& on_epoch = {}, const LogCallback& log = {});

}  // namespace lgc
