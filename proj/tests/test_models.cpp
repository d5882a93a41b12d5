#include "gradcheck.hpp"
#include "oracles.hpp"

#include "lgc/models.hpp"
#include "lgc/stability.hpp"

#include <doctest.h>

#include <cmath>
#include <numeric>

using lgc::Matrix;
using lgc::SupportKind;

namespace {

lgc::SupportMatrix random_support(oracle::Rng& rng, std::size_t n, int k) {
  return lgc::build_support(rng.graph(n), SupportKind::NormalizedLaplacian, k);
}

lgc::CommMasks full(Eigen::Index f, Eigen::Index g) {
  return lgc::CommMasks::full(static_cast<std::size_t>(f), static_cast<std::size_t>(g));
}

Matrix permutation(oracle::Rng& rng, Eigen::Index n) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng.engine);
  Matrix p = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) p(i, idx[static_cast<std::size_t>(i)]) = 1.0;
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// GGNN
// ---------------------------------------------------------------------------

TEST_CASE("ggnn zero parameters give zero state") {
  oracle::Rng rng(1);
  const auto s = random_support(rng, 4, 2);
  const auto p = lgc::zero_ggnn(3, 2, 2);
  const Matrix out = lgc::ggnn_step(p, s, rng.matrix(4, 3), rng.matrix(4, 2), full(3, 2));
  CHECK(out.isZero());
}

TEST_CASE("ggnn bias only gives a constant state") {
  oracle::Rng rng(2);
  const auto s = random_support(rng, 4, 2);
  auto p = lgc::zero_ggnn(3, 2, 2);
  p.bias.setConstant(std::atanh(0.5));
  const Matrix out = lgc::ggnn_step(p, s, rng.matrix(4, 3), rng.matrix(4, 2), full(3, 2));
  CHECK(oracle::rel_err(out, Matrix::Constant(4, 3, 0.5)) < 1e-14);
}

TEST_CASE("ggnn matches the scalar oracle") {
  oracle::Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.integer(2, 6), f = rng.integer(1, 4), g = rng.integer(1, 3), k = rng.integer(0, 3);
    const auto s = random_support(rng, static_cast<std::size_t>(n), k);
    const auto p = oracle::random_ggnn(rng, f, g, k, 1.0);
    const Matrix x = rng.matrix(n, f), u = rng.matrix(n, g);
    CHECK(oracle::rel_err(lgc::ggnn_step(p, s, x, u, full(f, g)), oracle::ggnn(p, s.matrix(), x, u)) < 1e-12);
  }
}

TEST_CASE("ggnn domain checks") {
  oracle::Rng rng(4);
  const auto s = random_support(rng, 3, 1);
  const auto p = oracle::random_ggnn(rng, 2, 2, 1, 0.5);
  const Matrix x = Matrix::Constant(3, 2, 1.5);
  const Matrix u = rng.matrix(3, 2);
  CHECK_THROWS_AS(lgc::ggnn_step(p, s, x, u, full(2, 2)), std::domain_error);
  const Matrix lenient = lgc::ggnn_step(p, s, x, u, full(2, 2), lgc::DomainCheck::Lenient);
  const Matrix clamped = lgc::ggnn_step(p, s, Matrix(Matrix::Constant(3, 2, 1.0)), u, full(2, 2));
  CHECK(oracle::rel_err(lenient, clamped) < 1e-15);
}

TEST_CASE("ggnn gate entries respect the gate bound") {
  oracle::Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.integer(2, 6), f = rng.integer(1, 4), g = rng.integer(1, 3), k = rng.integer(0, 2);
    const auto s = random_support(rng, static_cast<std::size_t>(n), k);
    const auto p = oracle::random_ggnn(rng, f, g, k, 1.0);
    const auto bounds = lgc::SupportBounds::measured({s});
    const double bound = lgc::gate_bound(p, bounds);
    const auto gates = lgc::ggnn_gates(p, s, Matrix(rng.matrix(n, f)), Matrix(rng.matrix(n, g)), full(f, g));
    CHECK(gates.forget.cwiseAbs().maxCoeff() <= bound + 1e-12);
  }
}

TEST_CASE("ggnn shape errors") {
  oracle::Rng rng(6);
  const auto s = random_support(rng, 3, 1);
  const auto p = lgc::zero_ggnn(2, 2, 1);
  CHECK_THROWS_AS(lgc::ggnn_step(p, s, Matrix(Matrix::Zero(3, 3)), Matrix(Matrix::Zero(3, 2)), full(2, 2)),
                  lgc::DimensionError);
  CHECK_THROWS_AS(lgc::ggnn_step(p, s, Matrix(Matrix::Zero(4, 2)), Matrix(Matrix::Zero(4, 2)), full(2, 2)),
                  lgc::DimensionError);
  auto bad = p;
  bad.state.pop_back();
  CHECK_THROWS_AS(lgc::validate(bad), lgc::DimensionError);
}

// ---------------------------------------------------------------------------
// LGTC
// ---------------------------------------------------------------------------

TEST_CASE("lgtc vector field zero cases") {
  oracle::Rng rng(7);
  const auto s = random_support(rng, 4, 2);
  auto p = lgc::zero_liquid(3, 2, 2);
  const Matrix x = rng.matrix(4, 3), u = rng.matrix(4, 2);
  CHECK(lgc::lgtc_vector_field(p, s, x, u, full(3, 2)).isZero());
  p.leak.setOnes();
  CHECK(oracle::rel_err(lgc::lgtc_vector_field(p, s, x, u, full(3, 2)), -x) < 1e-15);
}

TEST_CASE("lgtc vector field matches the scalar oracle") {
  oracle::Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.integer(2, 6), f = rng.integer(1, 4), g = rng.integer(1, 3), k = rng.integer(1, 3);
    const auto s = random_support(rng, static_cast<std::size_t>(n), k);
    const auto p = oracle::random_liquid(rng, f, g, k, 1.0);
    const Matrix x = rng.matrix(n, f), u = rng.matrix(n, g);
    CHECK(oracle::rel_err(lgc::lgtc_vector_field(p, s, x, u, full(f, g)), oracle::lgtc_field(p, s.matrix(), x, u)) <
          1e-12);
  }
}

TEST_CASE("hybrid step examples") {
  oracle::Rng rng(9);
  const auto s = random_support(rng, 3, 1);
  auto p = lgc::zero_liquid(2, 2, 1);
  const Matrix x = Matrix::Constant(3, 2, 0.5), u = rng.matrix(3, 2);
  CHECK(lgc::lgtc_hybrid_step(p, s, x, u, 0.1, full(2, 2)) == x);
  p.leak.setOnes();
  CHECK(oracle::rel_err(lgc::lgtc_hybrid_step(p, s, x, u, 0.1, full(2, 2)), Matrix::Constant(3, 2, 0.5 / 1.1)) <
        1e-15);
  CHECK_THROWS_AS(lgc::lgtc_hybrid_step(p, s, x, u, 0.0, full(2, 2)), std::invalid_argument);
}

TEST_CASE("hybrid step is consistent with the vector field") {
  oracle::Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const auto s = random_support(rng, 4, 2);
    const auto p = oracle::random_liquid(rng, 3, 2, 2, 0.8);
    const Matrix x = rng.matrix(4, 3, -0.9, 0.9), u = rng.matrix(4, 2);
    const double delta = 1e-6;
    const Matrix slope = (lgc::lgtc_hybrid_step(p, s, x, u, delta, full(3, 2)) - x) / delta;
    CHECK(oracle::rel_err(slope, lgc::lgtc_vector_field(p, s, x, u, full(3, 2))) < 1e-4);
  }
}

TEST_CASE("integration limits") {
  oracle::Rng rng(11);
  const auto s = random_support(rng, 4, 2);
  const auto p = oracle::random_liquid(rng, 3, 2, 2, 0.5);
  const Matrix x = rng.matrix(4, 3), u = rng.matrix(4, 2);
  CHECK(lgc::lgtc_integrate(p, s, x, u, 0.3, 1, full(3, 2)) == lgc::lgtc_hybrid_step(p, s, x, u, 0.3, full(3, 2)));
  CHECK(lgc::lgtc_integrate(lgc::zero_liquid(3, 2, 2), s, x, u, 1.0, 10, full(3, 2)) == x);
  CHECK_THROWS(lgc::lgtc_integrate(p, s, x, u, 1.0, 0, full(3, 2)));
}

TEST_CASE("doubling solver steps converges") {
  oracle::Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = random_support(rng, 4, 2);
    const auto p = oracle::random_liquid(rng, 3, 2, 2, 0.5);
    const Matrix x = rng.matrix(4, 3), u = rng.matrix(4, 2);
    const Matrix a = lgc::lgtc_integrate(p, s, x, u, 1.0, 200, full(3, 2));
    const Matrix b = lgc::lgtc_integrate(p, s, x, u, 1.0, 400, full(3, 2));
    const Matrix c = lgc::lgtc_integrate(p, s, x, u, 1.0, 800, full(3, 2));
    // first-order global error halves with the step
    CHECK((b - c).cwiseAbs().maxCoeff() <= 0.6 * (a - b).cwiseAbs().maxCoeff() + 1e-12);
    CHECK((a - b).cwiseAbs().maxCoeff() < 5e-2);
  }
}

TEST_CASE("lemma 1 boundedness with psd coupling") {
  oracle::Rng rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.integer(2, 5), f = rng.integer(1, 4), g = rng.integer(1, 3);
    const auto s = random_support(rng, static_cast<std::size_t>(n), 2);
    auto p = oracle::random_liquid(rng, f, g, 2, 1.0);
    // Coupling c·I on every tap: Σ_k c (I ⊗ S^k) is PSD for the normalized Laplacian.
    for (auto& a : p.coupling) a = Matrix::Identity(f, f) * rng.uniform(0.0, 0.5);
    REQUIRE(lgc::coupling_psd_margin(p, {s}) >= -1e-12);
    Matrix x = rng.matrix(n, f);
    for (int step = 0; step < 200; ++step) {
      x = lgc::lgtc_integrate(p, s, x, Matrix(rng.matrix(n, g)), 0.05, 1, full(f, g));
      CHECK(x.cwiseAbs().maxCoeff() <= 1.0 + 1e-6);
    }
  }
}

// ---------------------------------------------------------------------------
// Closed form
// ---------------------------------------------------------------------------

TEST_CASE("closed-form step zero parameters") {
  oracle::Rng rng(14);
  const auto s = random_support(rng, 4, 2);
  const auto p = lgc::zero_liquid(3, 2, 2);
  const Matrix x = rng.matrix(4, 3), u = rng.matrix(4, 2);
  const double factor = 0.5 / (1.0 + std::exp(-std::acos(-1.0)));
  CHECK(factor == doctest::Approx(0.479289).epsilon(1e-6));
  CHECK(oracle::rel_err(lgc::cfgc_step(p, {}, s, x, u, full(3, 2)), factor * x) < 1e-14);
}

TEST_CASE("closed-form step matches the scalar oracle") {
  oracle::Rng rng(15);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.integer(2, 6), f = rng.integer(1, 4), g = rng.integer(1, 3), k = rng.integer(1, 3);
    const auto s = random_support(rng, static_cast<std::size_t>(n), k);
    const auto p = oracle::random_liquid(rng, f, g, k, 1.0);
    const Matrix x = rng.matrix(n, f), u = rng.matrix(n, g);
    const lgc::CfgcSettings st{1e-6, rng.uniform(0.1, 2.0)};
    CHECK(oracle::rel_err(lgc::cfgc_step(p, st, s, x, u, full(f, g)),
                          oracle::cfgc(p, st.epsilon, st.horizon, s.matrix(), x, u)) < 1e-12);
  }
}

TEST_CASE("closed-form step forgets the state for a long horizon") {
  oracle::Rng rng(16);
  const auto s = random_support(rng, 3, 1);
  auto p = lgc::zero_liquid(2, 2, 1);
  p.input[0] = rng.matrix(2, 2);
  p.time_input[0] = rng.matrix(2, 2);
  p.leak.setOnes();
  const Matrix u = rng.matrix(3, 2);
  const Matrix drive = lgc::ops::tanh(Matrix(u * p.input[0] + s.matrix() * u * p.input[1]));
  const Matrix mix = lgc::ops::logistic(Matrix(2.0 * lgc::ops::relu(Matrix(u * p.time_input[0]))));
  const Matrix limit = (Matrix::Ones(3, 2) - mix).cwiseProduct(drive);
  for (const Matrix& x : {drive, Matrix(rng.matrix(3, 2))}) {
    CHECK(oracle::rel_err(lgc::cfgc_step(p, {1e-6, 60.0}, s, x, u, full(2, 2)), limit) < 1e-12);
  }
}

TEST_CASE("closed-form step stays in the unit box") {
  oracle::Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = rng.integer(2, 5), f = rng.integer(1, 4), g = rng.integer(1, 3);
    const auto s = random_support(rng, static_cast<std::size_t>(n), 2);
    const auto p = oracle::random_liquid(rng, f, g, 2, 3.0);
    const Matrix out = lgc::cfgc_step(p, {1e-6, rng.uniform(0.1, 3.0)}, s, Matrix(rng.matrix(n, f)),
                                      Matrix(rng.matrix(n, g)), full(f, g));
    CHECK(out.cwiseAbs().maxCoeff() <= 1.0);
  }
}

TEST_CASE("closed-form step handles a zero state without a singularity") {
  oracle::Rng rng(18);
  const auto s = random_support(rng, 3, 2);
  const auto p = oracle::random_liquid(rng, 2, 2, 2, 1.0);
  const Matrix out = lgc::cfgc_step(p, {}, s, Matrix(Matrix::Zero(3, 2)), Matrix(rng.matrix(3, 2)), full(2, 2));
  CHECK(out.allFinite());
  CHECK_THROWS(lgc::cfgc_step(p, {0.0, 1.0}, s, Matrix(Matrix::Zero(3, 2)), Matrix(rng.matrix(3, 2)), full(2, 2)));
}

TEST_CASE("exact closed form") {
  oracle::Rng rng(19);
  const auto s = random_support(rng, 3, 2);
  const Matrix x = rng.matrix(3, 2), u = rng.matrix(3, 2);
  const auto zero = lgc::zero_liquid(2, 2, 2);
  CHECK(oracle::rel_err(lgc::closed_form_exact(zero, s, x, u, 1.0), 0.5 * x) < 1e-12);

  auto p = oracle::random_liquid(rng, 2, 2, 2, 0.5);
  const Matrix drive = lgc::ops::tanh(oracle::filter(s.matrix(), u, p.input));
  const Matrix f_sigma = lgc::ops::relu(lgc::ops::add_row(oracle::filter(s.matrix(), u, p.time_input), p.input_bias)) +
                         lgc::ops::relu(lgc::ops::add_row(oracle::filter(s.matrix(), x, p.time_state), p.state_bias));
  const Matrix mix = lgc::ops::logistic(Matrix(2.0 * f_sigma));
  const Matrix at_zero = x.cwiseProduct(mix) + (Matrix::Ones(3, 2) - mix).cwiseProduct(drive);
  CHECK(oracle::rel_err(lgc::closed_form_exact(p, s, x, u, 0.0), at_zero) < 1e-12);

  // Large state bias saturates the mix and the input branch drops out.
  auto sat = lgc::zero_liquid(2, 2, 2);
  sat.state_bias.setConstant(40.0);
  CHECK(oracle::rel_err(lgc::closed_form_exact(sat, s, x, u, 0.05), std::exp(-2.0) * x) < 1e-12);
}

// ---------------------------------------------------------------------------
// Shared properties
// ---------------------------------------------------------------------------

TEST_CASE("cores are permutation equivariant") {
  oracle::Rng rng(20);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = rng.integer(3, 6);
    const auto g = rng.graph(static_cast<std::size_t>(n));
    const auto s = lgc::build_support(g, SupportKind::NormalizedLaplacian, 2);
    const Matrix perm = permutation(rng, n);
    const lgc::SupportMatrix sp(SupportKind::NormalizedLaplacian, perm * s.matrix() * perm.transpose(), 2);
    const Matrix x = rng.matrix(n, 4, -0.9, 0.9), u = rng.matrix(n, 3);
    const lgc::CommMasks masks{lgc::CommMask::leading(4, 2), lgc::CommMask::leading(3, 1)};

    const auto gg = oracle::random_ggnn(rng, 4, 3, 2, 0.7);
    CHECK(oracle::rel_err(lgc::ggnn_step(gg, sp, Matrix(perm * x), Matrix(perm * u), full(4, 3)),
                          perm * lgc::ggnn_step(gg, s, x, u, full(4, 3))) < 1e-12);
    const auto lq = oracle::random_liquid(rng, 4, 3, 2, 0.7);
    CHECK(oracle::rel_err(lgc::lgtc_integrate(lq, sp, Matrix(perm * x), Matrix(perm * u), 1.0, 6, masks),
                          perm * lgc::lgtc_integrate(lq, s, x, u, 1.0, 6, masks)) < 1e-12);
    CHECK(oracle::rel_err(lgc::cfgc_step(lq, {}, sp, Matrix(perm * x), Matrix(perm * u), masks),
                          perm * lgc::cfgc_step(lq, {}, s, x, u, masks)) < 1e-12);
  }
}

TEST_CASE("core gradients agree with central differences") {
  oracle::Rng rng(21);
  const auto s = random_support(rng, 3, 2);
  const Matrix x = rng.matrix(3, 3, -0.8, 0.8), u = rng.matrix(3, 2);
  const lgc::CommMasks masks{lgc::CommMask::leading(3, 2), lgc::CommMask::leading(2, 1)};

  SUBCASE("ggnn") {
    const auto p = oracle::random_ggnn(rng, 3, 2, 2, 0.5);
    std::vector<Matrix> inputs;
    p.visit([&](const std::string&, const Matrix& m) { inputs.push_back(m); });
    const gradcheck::Build f = [&](lgc::Tape& tape, const std::vector<lgc::Var>& leaves) {
      std::size_t i = 0;
      const auto w = p.map<lgc::Var>([&](const Matrix&) { return leaves[i++]; });
      const lgc::Var y = lgc::ggnn_step(w, s, tape.constant(x), tape.constant(u), full(3, 2));
      return lgc::ops::sum(lgc::ops::mul(y, y));
    };
    CHECK(gradcheck::max_error(f, inputs) < 1e-6);
  }
  SUBCASE("liquid") {
    const auto p = oracle::random_liquid(rng, 3, 2, 2, 0.5);
    std::vector<Matrix> inputs;
    p.visit([&](const std::string&, const Matrix& m) { inputs.push_back(m); });
    for (bool closed : {false, true}) {
      const gradcheck::Build f = [&](lgc::Tape& tape, const std::vector<lgc::Var>& leaves) {
        std::size_t i = 0;
        const auto w = p.map<lgc::Var>([&](const Matrix&) { return leaves[i++]; });
        const lgc::Var y = closed ? lgc::cfgc_step(w, {}, s, tape.constant(x), tape.constant(u), masks)
                                  : lgc::lgtc_integrate(w, s, tape.constant(x), tape.constant(u), 1.0, 6, masks);
        return lgc::ops::sum(lgc::ops::mul(y, y));
      };
      CHECK(gradcheck::max_error(f, inputs) < 1e-6);
    }
  }
}

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

TEST_CASE("zero policy outputs zero controls") {
  oracle::Rng rng(22);
  const auto s = random_support(rng, 4, 2);
  for (auto kind : {lgc::ModelKind::Ggnn, lgc::ModelKind::Lgtc, lgc::ModelKind::Cfgc}) {
    lgc::PolicyConfig c;
    c.kind = kind;
    const auto policy = lgc::make_zero_policy(c);
    const Matrix state = lgc::initial_state(c, 4);
    const auto out = lgc::policy_forward(c, policy.weights, s, state, rng.matrix(4, 10));
    CHECK(out.controls.isZero());
    CHECK(out.state.isZero());
  }
}

TEST_CASE("encoder output is capped") {
  oracle::Rng rng(23);
  lgc::PolicyConfig c;
  const auto policy = lgc::make_random_policy(c, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    const Matrix raw = rng.matrix(3, 10, -1e3, 1e3);
    const Matrix enc = lgc::mlp_forward(policy.weights.encoder, lgc::scale_features(c, raw));
    CHECK(enc.cwiseAbs().maxCoeff() <= 1.0);
  }
}

TEST_CASE("controls are saturated for random weights") {
  oracle::Rng rng(24);
  for (auto kind : {lgc::ModelKind::Ggnn, lgc::ModelKind::Lgtc, lgc::ModelKind::Cfgc}) {
    lgc::PolicyConfig c;
    c.kind = kind;
    c.state_features = 8;
    c.hidden = 16;
    auto policy = lgc::make_random_policy(c, 99);
    policy.weights.readout.layers.back().weight *= 1e3;
    const auto s = random_support(rng, 5, 2);
    Matrix state = lgc::initial_state(c, 5);
    for (int t = 0; t < 20; ++t) {
      const auto out = lgc::policy_forward(c, policy.weights, s, state, rng.matrix(5, 10, -5, 5));
      CHECK(out.controls.cwiseAbs().maxCoeff() <= 5.0);
      state = out.state;
    }
  }
}

TEST_CASE("policy parameter naming and counts") {
  lgc::PolicyConfig c;
  auto policy = lgc::make_random_policy(c, 1);
  std::vector<std::string> names;
  policy.visit([&](const std::string& name, Matrix&) { names.push_back(name); });
  CHECK(names.front() == "encoder.0.weight");
  CHECK(std::find(names.begin(), names.end(), "core.coupling.1") != names.end());
  CHECK(names.back() == "readout.2.bias");
  // encoder 10·128+128 + 128·128+128, readout 50·128+128 + 128·128+128 + 128·2+2,
  // core 3·(K+1) taps of 128x50 or 50x50 plus K coupling taps and three biases.
  const std::size_t dense = 10 * 128 + 128 + 128 * 128 + 128 + 50 * 128 + 128 + 128 * 128 + 128 + 128 * 2 + 2;
  const std::size_t core = 3 * 50 * 50 + 3 * 128 * 50 * 2 + 2 * 50 * 50 + 3 * 50;
  CHECK(policy.parameter_count() == dense + core);
  CHECK(lgc::model_kind_from_string("cfgc") == lgc::ModelKind::Cfgc);
  CHECK_THROWS(lgc::model_kind_from_string("lstm"));
}

TEST_CASE("random policy is deterministic in the seed") {
  lgc::PolicyConfig c;
  c.hidden = 8;
  c.state_features = 6;
  auto a = lgc::make_random_policy(c, 3), b = lgc::make_random_policy(c, 3), d = lgc::make_random_policy(c, 4);
  CHECK(a.weights.encoder.layers[0].weight == b.weights.encoder.layers[0].weight);
  CHECK(a.weights.encoder.layers[0].weight != d.weights.encoder.layers[0].weight);
}
