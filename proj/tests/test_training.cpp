#include "oracles.hpp"

#include "lgc/dataset.hpp"
#include "lgc/io.hpp"
#include "lgc/training.hpp"

#include <doctest.h>

#include <set>
#include <sstream>

using lgc::Matrix;
namespace fl = lgc::flocking;

namespace {

lgc::PolicyConfig tiny_config(lgc::ModelKind kind) {
  auto c = lgc::flocking_policy_config(kind);
  c.hidden = 5;
  c.state_features = 3;
  c.shared_state = 2;
  c.shared_input = 2;
  return c;
}

lgc::Dataset tiny_dataset(int trajectories, double duration, std::uint64_t seed) {
  lgc::DatasetConfig dc;
  dc.trajectories = trajectories;
  dc.duration = duration;
  dc.seed = seed;
  dc.scenario.team_sizes = {3, 4};
  return lgc::generate_dataset(dc);
}

std::vector<const fl::Trajectory*> all(const lgc::Dataset& d) {
  std::vector<const fl::Trajectory*> out;
  for (const auto& e : d.entries) out.push_back(&e.trajectory);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

TEST_CASE("adam update rules") {
  Matrix w = Matrix::Constant(1, 1, 2.0);
  lgc::AdamState adam;
  adam_update(adam, {{"w", &w}}, {{"w", Matrix::Zero(1, 1)}});
  CHECK(w(0, 0) == 2.0);

  lgc::AdamState first;
  Matrix x = Matrix::Constant(1, 1, 2.0);
  adam_update(first, {{"x", &x}}, {{"x", Matrix::Ones(1, 1)}});
  CHECK(2.0 - x(0, 0) == doctest::Approx(1e-3).epsilon(1e-6));
  const double after_one = x(0, 0);
  adam_update(first, {{"x", &x}}, {{"x", Matrix::Ones(1, 1)}});
  CHECK(x(0, 0) < after_one);
  CHECK(first.step == 2);
}

TEST_CASE("adam rejects bad gradients") {
  Matrix w = Matrix::Ones(2, 2);
  lgc::AdamState adam;
  CHECK_THROWS_AS(adam_update(adam, {{"w", &w}}, {{"w", Matrix::Ones(2, 3)}}), lgc::DimensionError);
  CHECK_THROWS_AS(adam_update(adam, {{"w", &w}}, {}), std::invalid_argument);
  Matrix bad = Matrix::Ones(2, 2);
  bad(1, 1) = std::nan("");
  try {
    adam_update(adam, {{"core.leak", &w}}, {{"core.leak", bad}});
    FAIL("expected an error");
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()).find("core.leak") != std::string::npos);
  }
  CHECK(w == Matrix::Ones(2, 2));
  CHECK(adam.step == 0);
}

TEST_CASE("gradient clipping uses the global max norm") {
  lgc::Gradients g{{"a", Matrix::Constant(1, 2, 4.0)}, {"b", Matrix::Constant(1, 1, -20.0)}};
  CHECK(lgc::clip_gradients(g, 10.0) == 20.0);
  CHECK(g.at("b")(0, 0) == doctest::Approx(-10.0));
  CHECK(g.at("a")(0, 0) == doctest::Approx(2.0));
  lgc::Gradients small{{"a", Matrix::Constant(1, 1, 3.0)}};
  lgc::clip_gradients(small, 10.0);
  CHECK(small.at("a")(0, 0) == 3.0);
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

TEST_CASE("imitation loss examples") {
  auto d = tiny_dataset(2, 0.2, 3);
  const auto c = tiny_config(lgc::ModelKind::Cfgc);
  const auto zero = lgc::make_zero_policy(c);
  lgc::Regularizer off;
  off.enabled = false;

  // zero policy outputs zero controls; label everything (-1, 0)
  for (auto& e : d.entries)
    for (auto& r : e.trajectory.records) {
      r.expert.col(0).setConstant(-1.0);
      r.expert.col(1).setZero();
    }
  const auto batch = all(d);
  CHECK(lgc::imitation_loss(zero, batch, off).mse == doctest::Approx(0.5));

  for (auto& e : d.entries)
    for (auto& r : e.trajectory.records) r.expert.setZero();
  auto reg = lgc::make_regularizer(c, batch, 10.0, 4);
  auto certified = lgc::make_random_policy(c, 4);
  for (auto& layer : certified.weights.readout.layers) layer.weight.setZero();
  for (auto& t : certified.weights.liquid.coupling) t = 0.5 * Matrix::Identity(3, 3);
  const auto loss = lgc::imitation_loss(certified, batch, reg);
  CHECK(loss.mse == 0.0);
  CHECK(loss.penalty < 1e-3);
  CHECK(loss.total() >= 0.0);
  CHECK_THROWS(lgc::imitation_loss(certified, {}, off));
}

TEST_CASE("regularizer uses normalized Laplacian bounds") {
  const auto d = tiny_dataset(3, 0.5, 5);
  const auto reg = lgc::make_regularizer(tiny_config(lgc::ModelKind::Lgtc), all(d), 10.0, 8);
  CHECK(reg.samples.size() == 8);
  CHECK(reg.bounds.s_bar >= 2.0);
  CHECK(reg.bounds.filter_length == 2);
  CHECK(reg.beta == 10.0);
}

TEST_CASE("loss gradients agree with central differences") {
  const auto d = tiny_dataset(2, 0.15, 7);
  const auto batch = all(d);
  for (auto kind : {lgc::ModelKind::Ggnn, lgc::ModelKind::Lgtc, lgc::ModelKind::Cfgc}) {
    CAPTURE(lgc::to_string(kind));
    auto c = tiny_config(kind);
    c.solver_steps = 2;
    auto policy = lgc::make_random_policy(c, 11);
    // Larger core weights so every path carries signal; distinct leak entries
    // keep max|b| away from a tie.
    oracle::Rng rng(12);
    policy.visit([&](const std::string& name, Matrix& m) {
      if (name == "core.leak") {
        m = rng.matrix(m.rows(), m.cols(), 0.5, 1.5);
      } else if (name.rfind("core.", 0) == 0) {
        m = rng.matrix(m.rows(), m.cols(), -0.4, 0.4);
      }
    });
    auto reg = lgc::make_regularizer(c, batch, 10.0, 3);
    const auto analytic = lgc::imitation_gradient(policy, batch, reg);
    CHECK(analytic.loss.mse == doctest::Approx(lgc::imitation_loss(policy, batch, reg).mse).epsilon(1e-12));

    double worst = 0.0;
    std::string worst_name;
    const double h = 1e-6;
    auto probe = policy;
    probe.visit([&](const std::string& name, Matrix& m) {
      Matrix fd(m.rows(), m.cols());
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        const double x = m.data()[i];
        m.data()[i] = x + h;
        const double up = lgc::imitation_loss(probe, batch, reg).total();
        m.data()[i] = x - h;
        const double down = lgc::imitation_loss(probe, batch, reg).total();
        m.data()[i] = x;
        fd.data()[i] = (up - down) / (2 * h);
      }
      const double err = (analytic.gradients.at(name) - fd).cwiseAbs().maxCoeff() /
                         std::max(1e-2, fd.cwiseAbs().maxCoeff());
      if (err > worst) {
        worst = err;
        worst_name = name;
      }
    });
    CAPTURE(worst_name);
    CHECK(worst < 1e-5);
  }
}

// ---------------------------------------------------------------------------
// DAGGER and the training loop
// ---------------------------------------------------------------------------

TEST_CASE("dagger round appends expert-labelled rollouts") {
  auto d = tiny_dataset(5, 0.3, 9);
  const auto before = d.entries;
  const std::size_t train_before = d.count(lgc::Split::Train);
  const auto policy = lgc::make_zero_policy(tiny_config(lgc::ModelKind::Cfgc));
  const auto added = lgc::dagger_round(policy, d, {3, 1});
  CHECK(added == 3);
  CHECK(d.count(lgc::Split::Train) == train_before + 3);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(d.entries[i].split == before[i].split);
    CHECK(d.entries[i].trajectory.final_positions == before[i].trajectory.final_positions);
  }
  for (std::size_t i = before.size(); i < d.entries.size(); ++i) {
    const auto& e = d.entries[i];
    CHECK(e.origin == lgc::Origin::Dagger);
    CHECK(e.split == lgc::Split::Train);
    for (const auto& r : e.trajectory.records) {
      fl::World w;
      w.positions = r.positions;
      w.velocities = r.velocities;
      w.leader = e.trajectory.leader;
      w.target = e.trajectory.target;
      w.params = e.trajectory.params;
      CHECK(r.expert == fl::expert_controls(w));
      CHECK(r.applied.isZero());  // zero policy drives nothing
    }
  }
  CHECK(lgc::dagger_round(policy, d, {-1, 2}) == train_before);
}

TEST_CASE("zero epochs returns the initial weights") {
  auto d = tiny_dataset(4, 0.2, 1);
  lgc::TrainConfig tc;
  tc.policy = tiny_config(lgc::ModelKind::Cfgc);
  tc.epochs = 0;
  const auto init = lgc::make_random_policy(tc.policy, 3);
  const auto r = lgc::train(tc, init, d);
  CHECK(r.metrics.empty());
  CHECK(r.policy.weights.encoder.layers[0].weight == init.weights.encoder.layers[0].weight);
}

TEST_CASE("training is deterministic and grows the data with DAGGER") {
  lgc::TrainConfig tc;
  tc.policy = tiny_config(lgc::ModelKind::Cfgc);
  tc.epochs = 4;
  tc.dagger_every = 2;
  tc.seed = 5;
  auto d1 = tiny_dataset(6, 0.25, 2);
  auto d2 = tiny_dataset(6, 0.25, 2);
  const auto r1 = lgc::train(tc, d1);
  const auto r2 = lgc::train(tc, d2);
  REQUIRE(r1.metrics.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(lgc::to_json(r1.metrics[i]).dump() == lgc::to_json(r2.metrics[i]).dump());
  }
  CHECK(r1.metrics[1].dagger_added > 0);
  CHECK(r1.metrics[3].dagger_added == 0);  // no round after the last epoch
  CHECK(r1.metrics[2].train_trajectories == r1.metrics[1].train_trajectories + r1.metrics[1].dagger_added);
}

TEST_CASE("closed-form model overfits a single record") {
  auto d = tiny_dataset(1, 0.05, 4);
  d.entries[0].split = lgc::Split::Train;
  lgc::TrainConfig tc;
  tc.policy = tiny_config(lgc::ModelKind::Cfgc);
  tc.policy.hidden = 16;
  tc.epochs = 50;
  tc.dagger_every = 0;
  tc.lr = 1e-2;
  const auto r = lgc::train(tc, d);
  REQUIRE(r.metrics.size() == 50);
  CHECK(r.metrics.back().train_mse < 0.5 * r.metrics.front().train_mse);
}

// ---------------------------------------------------------------------------
// Dataset and serialization
// ---------------------------------------------------------------------------

TEST_CASE("split proportions") {
  const auto c = lgc::split_counts(60);
  CHECK(c.train == 42);
  CHECK(c.val == 6);
  CHECK(c.test == 12);
  const auto ten = lgc::split_counts(10);
  CHECK(ten.train == 7);
  CHECK(ten.val == 1);
  CHECK(ten.test == 2);
}

TEST_CASE("generated dataset") {
  lgc::DatasetConfig dc;
  dc.trajectories = 60;
  dc.duration = 0.1;
  dc.seed = 8;
  const auto d = lgc::generate_dataset(dc);
  CHECK(d.entries.size() == 60);
  CHECK(d.count(lgc::Split::Train) == 42);
  CHECK(d.count(lgc::Split::Val) == 6);
  CHECK(d.count(lgc::Split::Test) == 12);
  std::set<std::size_t> sizes;
  for (const auto& e : d.entries) {
    const auto n = e.trajectory.agents();
    sizes.insert(n);
    CHECK(std::set<std::size_t>{4, 6, 10, 12, 15}.count(n) == 1);
    CHECK(e.trajectory.records.size() == 2);
    CHECK(e.trajectory.records.front().velocities.cwiseAbs().maxCoeff() <= 2.0);
  }
  CHECK(sizes.size() > 1);
}

TEST_CASE("dataset jsonl round trip is exact and reproducible") {
  const auto d = tiny_dataset(3, 0.2, 6);
  std::ostringstream a, b;
  lgc::write_dataset(a, d);
  lgc::write_dataset(b, tiny_dataset(3, 0.2, 6));
  CHECK(a.str() == b.str());
  std::istringstream in(a.str());
  const auto back = lgc::read_dataset(in);
  REQUIRE(back.entries.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& x = d.entries[i].trajectory;
    const auto& y = back.entries[i].trajectory;
    CHECK(back.entries[i].split == d.entries[i].split);
    CHECK(x.seed == y.seed);
    CHECK(x.records.size() == y.records.size());
    CHECK(x.records.back().features == y.records.back().features);
    CHECK(x.records.back().support == y.records.back().support);
    CHECK(x.final_velocities == y.final_velocities);
  }
  CHECK(back.config.seed == 6);
  std::ostringstream c;
  lgc::write_dataset(c, back);
  CHECK(c.str() == a.str());

  std::istringstream bad("{\"format\":\"other\"}\n");
  CHECK_THROWS(lgc::read_dataset(bad));
}

TEST_CASE("checkpoint round trip") {
  for (auto kind : {lgc::ModelKind::Ggnn, lgc::ModelKind::Lgtc, lgc::ModelKind::Cfgc}) {
    auto c = tiny_config(kind);
    c.cf_horizon = 0.7;
    const auto p = lgc::make_random_policy(c, 2);
    const auto doc = lgc::checkpoint_to_json(p, {{"note", "x"}});
    CHECK(doc.at("kind") == lgc::to_string(kind));
    CHECK(doc.at("hyperparameters").at("t_cf") == 0.7);
    auto back = lgc::checkpoint_from_json(nlohmann::json::parse(doc.dump()));
    auto orig = p;
    std::vector<Matrix> a, b;
    orig.visit([&](const std::string&, Matrix& m) { a.push_back(m); });
    back.visit([&](const std::string&, Matrix& m) { b.push_back(m); });
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    auto broken = doc;
    broken["tensors"].erase(broken["tensors"].begin());
    CHECK_THROWS(lgc::checkpoint_from_json(broken));
  }
}
