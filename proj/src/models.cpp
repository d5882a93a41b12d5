#include "lgc/models.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace lgc {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Ggnn: return "ggnn";
    case ModelKind::Lgtc: return "lgtc";
    case ModelKind::Cfgc: return "cfgc";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "ggnn") return ModelKind::Ggnn;
  if (name == "lgtc") return ModelKind::Lgtc;
  if (name == "cfgc") return ModelKind::Cfgc;
  throw std::invalid_argument("unknown model kind: " + name);
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  if (name == "relu") return Activation::Relu;
  if (name == "tanh") return Activation::Tanh;
  if (name == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation: " + name);
}

namespace {

std::vector<Matrix> zero_taps(std::size_t count, std::size_t rows, std::size_t cols) {
  return std::vector<Matrix>(count, Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
}

Matrix zero_row(std::size_t cols) { return Matrix::Zero(1, static_cast<Eigen::Index>(cols)); }

void check_taps(const std::vector<Matrix>& taps, std::size_t count, Eigen::Index rows, Eigen::Index cols,
                const char* what) {
  if (taps.size() != count) throw DimensionError(std::string(what) + ": wrong number of taps");
  for (const auto& t : taps) {
    if (t.rows() != rows || t.cols() != cols) throw DimensionError(std::string(what) + ": tap shape mismatch");
  }
}

void check_bias(const Matrix& b, Eigen::Index cols, const char* what) {
  if (b.rows() != 1 || b.cols() != cols) throw DimensionError(std::string(what) + ": bias must be 1 x F");
}

}  // namespace

GgnnParams zero_ggnn(std::size_t f, std::size_t g, int k) {
  const auto taps = static_cast<std::size_t>(k) + 1;
  return {zero_taps(taps, f, f), zero_taps(taps, g, f), zero_taps(taps, f, f), zero_taps(taps, g, f),
          zero_taps(taps, f, f), zero_taps(taps, g, f), zero_row(f),           zero_row(f),
          zero_row(f)};
}

LgtcParams zero_liquid(std::size_t f, std::size_t g, int k) {
  const auto taps = static_cast<std::size_t>(k) + 1;
  return {zero_taps(taps, f, f), zero_taps(taps, g, f), zero_taps(taps, g, f), zero_taps(taps - 1, f, f),
          zero_row(f),           zero_row(f),           zero_row(f)};
}

void validate(const GgnnParams& p) {
  if (p.state.empty() || p.input.empty()) throw DimensionError("ggnn: empty filter bank");
  const auto taps = p.state.size();
  const Eigen::Index f = p.bias.cols();
  const Eigen::Index g = p.input.front().rows();
  check_taps(p.state, taps, f, f, "ggnn state");
  check_taps(p.forget_state, taps, f, f, "ggnn forget_state");
  check_taps(p.gate_state, taps, f, f, "ggnn gate_state");
  check_taps(p.input, taps, g, f, "ggnn input");
  check_taps(p.forget_input, taps, g, f, "ggnn forget_input");
  check_taps(p.gate_input, taps, g, f, "ggnn gate_input");
  check_bias(p.bias, f, "ggnn");
  check_bias(p.forget_bias, f, "ggnn");
  check_bias(p.gate_bias, f, "ggnn");
}

void validate(const LgtcParams& p) {
  if (p.time_state.empty() || p.input.empty()) throw DimensionError("liquid: empty filter bank");
  const auto taps = p.time_state.size();
  const Eigen::Index f = p.leak.cols();
  const Eigen::Index g = p.input.front().rows();
  check_taps(p.time_state, taps, f, f, "liquid time_state");
  check_taps(p.time_input, taps, g, f, "liquid time_input");
  check_taps(p.input, taps, g, f, "liquid input");
  check_taps(p.coupling, taps - 1, f, f, "liquid coupling");
  check_bias(p.leak, f, "liquid");
  check_bias(p.state_bias, f, "liquid");
  check_bias(p.input_bias, f, "liquid");
}

bool leak_nonnegative(const LgtcParams& p) { return (p.leak.array() >= 0.0).all(); }

namespace detail {

bool outside_unit_box(const Matrix& m) { return m.size() > 0 && m.cwiseAbs().maxCoeff() > 1.0; }

void check_unit_box(const Matrix& m, const char* what) {
  if (outside_unit_box(m)) {
    std::ostringstream msg;
    msg << what << ": values must lie in [-1, 1] (max |v| = " << m.cwiseAbs().maxCoeff() << ")";
    throw std::domain_error(msg.str());
  }
}

void warn(const std::string& message) { std::cerr << "[lgc] warning: " << message << '\n'; }

}  // namespace detail

GraphSignal closed_form_exact(const LgtcParams& w, const SupportMatrix& s, const GraphSignal& x0,
                              const GraphSignal& u, double horizon, const ClosedFormOptions& options) {
  validate(w);
  if (horizon < 0.0) throw std::invalid_argument("closed_form_exact: horizon must be >= 0");
  const auto n = static_cast<Eigen::Index>(s.size());
  const Eigen::Index f = w.leak.cols();
  const auto masks = CommMasks::full(static_cast<std::size_t>(f), static_cast<std::size_t>(w.input.front().rows()));
  detail::check_signal(s, x0, static_cast<std::size_t>(f), "closed_form_exact state");
  detail::check_signal(s, u, masks.input.size(), "closed_form_exact input");

  const Matrix state_op = filter_kronecker(s, w.time_state, masks.state, 0);
  const Matrix coupling_op = w.coupling.empty() ? Matrix::Zero(n * f, n * f)
                                                : filter_kronecker(s, w.coupling, masks.state, 1);

  const Matrix f_sigma = ops::relu(ops::add_row(filter(s, u, w.time_input, masks.input), w.input_bias)) +
                         ops::relu(ops::add_row(filter(s, x0, w.time_state, masks.state), w.state_bias));
  const Vector mix = vectorize(ops::logistic(2.0 * f_sigma));
  const Vector drive = vectorize(ops::tanh(filter(s, u, w.input, masks.input)));
  const Vector leak = vectorize(Matrix(w.leak.replicate(n, 1)));
  const Vector x0v = vectorize(x0);

  Vector xt = x0v;
  for (int it = 0; it < options.max_iterations; ++it) {
    const Matrix xt_m = unvectorize(xt, n, f);
    const Matrix state_arg = ops::add_row(filter(s, xt_m, w.time_state, masks.state), w.state_bias);
    const Vector active = vectorize((state_arg.array() > 0.0).cast<double>().matrix());
    const Vector f_x = vectorize(ops::relu(state_arg));

    Matrix f_i = coupling_op - active.cwiseProduct(xt).asDiagonal() * state_op;
    Matrix rate = f_i;
    rate.diagonal() += leak + f_x;
    const Matrix propagator = (-rate * horizon).exp();

    const Vector next = propagator * mix.cwiseProduct(x0v) + (Vector::Ones(mix.size()) - mix).cwiseProduct(drive);
    const double change = (next - xt).cwiseAbs().maxCoeff();
    xt = next;
    if (change <= options.tolerance) return unvectorize(xt, n, f);
  }
  throw std::runtime_error("closed_form_exact: fixed-point iteration did not converge");
}

CommMasks PolicyConfig::masks() const {
  const auto f = static_cast<std::size_t>(state_features);
  const auto g = static_cast<std::size_t>(encoded_features());
  if (kind == ModelKind::Ggnn) return CommMasks::full(f, g);
  return {CommMask::leading(f, static_cast<std::size_t>(shared_state)),
          CommMask::leading(g, static_cast<std::size_t>(shared_input))};
}

std::size_t Policy::parameter_count() {
  std::size_t total = 0;
  visit([&](const std::string&, Matrix& t) { total += static_cast<std::size_t>(t.size()); });
  return total;
}

namespace {

Mlp zero_mlp(const std::vector<int>& dims, Activation hidden, Activation last) {
  Mlp mlp;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    mlp.layers.push_back({Matrix::Zero(dims[l], dims[l + 1]), Matrix::Zero(1, dims[l + 1]),
                          l + 2 == dims.size() ? last : hidden});
  }
  return mlp;
}

void check_config(const PolicyConfig& c) {
  if (c.raw_features <= 0 || c.hidden <= 0 || c.state_features <= 0 || c.controls <= 0) {
    throw std::invalid_argument("policy config: dimensions must be positive");
  }
  if (c.filter_length < 0) throw std::invalid_argument("policy config: K must be >= 0");
  if (c.shared_state < 0 || c.shared_input < 0) throw std::invalid_argument("policy config: negative shared count");
  if (!(c.u_max > 0.0)) throw std::invalid_argument("policy config: u_max must be positive");
  if (c.solver_steps <= 0) throw std::invalid_argument("policy config: solver steps must be positive");
  if (!c.input_scale.empty() && static_cast<int>(c.input_scale.size()) != c.raw_features) {
    throw std::invalid_argument("policy config: input_scale length must equal raw feature count");
  }
}

}  // namespace

Policy make_zero_policy(const PolicyConfig& config) {
  check_config(config);
  Policy p;
  p.config = config;
  p.weights.encoder = zero_mlp({config.raw_features, config.hidden, config.hidden}, Activation::Relu, Activation::Tanh);
  p.weights.readout = zero_mlp({config.state_features, config.hidden, config.hidden, config.controls},
                               Activation::Relu, Activation::Identity);
  const auto f = static_cast<std::size_t>(config.state_features);
  const auto g = static_cast<std::size_t>(config.encoded_features());
  if (config.kind == ModelKind::Ggnn) {
    p.weights.ggnn = zero_ggnn(f, g, config.filter_length);
  } else {
    p.weights.liquid = zero_liquid(f, g, config.filter_length);
  }
  return p;
}

Policy make_random_policy(const PolicyConfig& config, std::uint64_t seed) {
  Policy p = make_zero_policy(config);
  std::mt19937_64 rng(seed);
  const auto uniform = [&](Matrix& m, double limit) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  };
  const auto glorot = [&](Mlp& mlp) {
    for (auto& layer : mlp.layers) {
      uniform(layer.weight, std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols())));
    }
  };
  glorot(p.weights.encoder);
  glorot(p.weights.readout);

  constexpr double kCoreScale = 1e-3;
  const double input_scale = 1.0 / std::sqrt(static_cast<double>(config.encoded_features()));
  if (config.kind == ModelKind::Ggnn) {
    auto& w = p.weights.ggnn;
    for (auto* bank : {&w.state, &w.forget_state, &w.gate_state}) {
      for (auto& t : *bank) uniform(t, kCoreScale);
    }
    for (auto* bank : {&w.input, &w.forget_input, &w.gate_input}) {
      for (auto& t : *bank) uniform(t, kCoreScale);
    }
  } else {
    auto& w = p.weights.liquid;
    for (auto& t : w.time_state) uniform(t, kCoreScale);
    for (auto& t : w.coupling) uniform(t, kCoreScale);
    for (auto& t : w.time_input) uniform(t, input_scale);
    for (auto& t : w.input) uniform(t, input_scale);
    w.leak.setConstant(1.0);
    w.state_bias.setConstant(0.5);
  }
  return p;
}

GraphSignal initial_state(const PolicyConfig& config, std::size_t agents) {
  return Matrix::Zero(static_cast<Eigen::Index>(agents), config.state_features);
}

Matrix scale_features(const PolicyConfig& config, const Matrix& raw) {
  Matrix out = raw;
  if (!config.input_scale.empty()) {
    if (static_cast<Eigen::Index>(config.input_scale.size()) != raw.cols()) {
      throw DimensionError("scale_features: scale length mismatch");
    }
    for (Eigen::Index c = 0; c < raw.cols(); ++c) out.col(c) *= config.input_scale[static_cast<std::size_t>(c)];
  }
  return out.cwiseMax(-1.0).cwiseMin(1.0);
}

}  // namespace lgc
