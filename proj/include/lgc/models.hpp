#pragma once

#include "lgc/autodiff.hpp"
#include "lgc/graph.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace lgc {

enum class ModelKind { Ggnn, Lgtc, Cfgc };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

/// Communicated subsets for the state (F') and input (G') features.
struct CommMasks {
  CommMask state;
  CommMask input;

  static CommMasks full(std::size_t state_features, std::size_t input_features) {
    return {CommMask::all(state_features), CommMask::all(input_features)};
  }
};

/// Visits a list of tensors as "<prefix>.<index>".
template <class T, class Fn>
void visit_taps(const std::string& prefix, std::vector<T>& taps, Fn& fn) {
  for (std::size_t k = 0; k < taps.size(); ++k) fn(prefix + "." + std::to_string(k), taps[k]);
}

template <class T, class Fn>
void visit_taps(const std::string& prefix, const std::vector<T>& taps, Fn& fn) {
  for (std::size_t k = 0; k < taps.size(); ++k) fn(prefix + "." + std::to_string(k), taps[k]);
}

template <class U, class T, class Fn>
std::vector<U> map_taps(const std::vector<T>& taps, Fn& fn) {
  std::vector<U> out;
  out.reserve(taps.size());
  for (const auto& t : taps) out.push_back(fn(t));
  return out;
}

// ---------------------------------------------------------------------------
// Gated graph recurrent layer
// ---------------------------------------------------------------------------

/// Filter banks hold K+1 taps. Biases are 1 x F rows broadcast over agents.
template <class T>
struct GgnnWeights {
  std::vector<T> state;             // A: state filter
  std::vector<T> input;             // B: input filter
  std::vector<T> forget_state;      // Â: state gate, state path
  std::vector<T> forget_input;      // B̂: state gate, input path
  std::vector<T> gate_state;        // Ã: input gate, state path
  std::vector<T> gate_input;        // B̃: input gate, input path
  T bias;                           // b
  T forget_bias;                    // b̂
  T gate_bias;                      // b̃

  template <class Fn>
  void visit(Fn&& fn) {
    visit_taps("state", state, fn);
    visit_taps("input", input, fn);
    visit_taps("forget_state", forget_state, fn);
    visit_taps("forget_input", forget_input, fn);
    visit_taps("gate_state", gate_state, fn);
    visit_taps("gate_input", gate_input, fn);
    fn("bias", bias);
    fn("forget_bias", forget_bias);
    fn("gate_bias", gate_bias);
  }

  template <class Fn>
  void visit(Fn&& fn) const {
    const_cast<GgnnWeights*>(this)->visit([&](const std::string& name, T& t) { fn(name, static_cast<const T&>(t)); });
  }

  template <class U, class Fn>
  GgnnWeights<U> map(Fn&& fn) const {
    return {map_taps<U>(state, fn),        map_taps<U>(input, fn),     map_taps<U>(forget_state, fn),
            map_taps<U>(forget_input, fn), map_taps<U>(gate_state, fn), map_taps<U>(gate_input, fn),
            fn(bias),                      fn(forget_bias),             fn(gate_bias)};
  }
};

using GgnnParams = GgnnWeights<Matrix>;

// ---------------------------------------------------------------------------
// Liquid graph time-constant layer (shared by the ODE and closed-form cores)
// ---------------------------------------------------------------------------

/// time_state / time_input / input hold K+1 taps; coupling holds taps for
/// k = 1..K only (there is no k = 0 coupling term).
template <class T>
struct LiquidWeights {
  std::vector<T> time_state;   // Â: state branch of the liquid time constant
  std::vector<T> time_input;   // B̂: input branch of the liquid time constant
  std::vector<T> input;        // B: driving input filter
  std::vector<T> coupling;     // A_1..A_K: graph coupling of the state
  T leak;                      // b, expected >= 0
  T state_bias;                // b_x
  T input_bias;                // b_u

  template <class Fn>
  void visit(Fn&& fn) {
    visit_taps("time_state", time_state, fn);
    visit_taps("time_input", time_input, fn);
    visit_taps("input", input, fn);
    visit_taps("coupling", coupling, fn);
    fn("leak", leak);
    fn("state_bias", state_bias);
    fn("input_bias", input_bias);
  }

  template <class Fn>
  void visit(Fn&& fn) const {
    const_cast<LiquidWeights*>(this)->visit([&](const std::string& name, T& t) { fn(name, static_cast<const T&>(t)); });
  }

  template <class U, class Fn>
  LiquidWeights<U> map(Fn&& fn) const {
    return {map_taps<U>(time_state, fn), map_taps<U>(time_input, fn), map_taps<U>(input, fn),
            map_taps<U>(coupling, fn),   fn(leak),                    fn(state_bias),
            fn(input_bias)};
  }
};

using LgtcParams = LiquidWeights<Matrix>;

struct CfgcSettings {
  double epsilon = 1e-6;
  double horizon = 1.0;  // t in the closed-form gate
};

struct CfgcParams {
  LiquidWeights<Matrix> weights;
  CfgcSettings settings;
};

/// Shape helpers; all weights zero.
GgnnParams zero_ggnn(std::size_t state_features, std::size_t input_features, int filter_length);
LgtcParams zero_liquid(std::size_t state_features, std::size_t input_features, int filter_length);

/// Throws DimensionError when taps, biases, or signals disagree.
void validate(const GgnnParams& p);
void validate(const LgtcParams& p);

/// True when every entry of the leak b is >= 0 (boundedness precondition).
bool leak_nonnegative(const LgtcParams& p);

// ---------------------------------------------------------------------------
// Generic forward code
// ---------------------------------------------------------------------------

enum class DomainCheck { Strict, Lenient };

namespace detail {

void check_unit_box(const Matrix& m, const char* what);
bool outside_unit_box(const Matrix& m);
void warn(const std::string& message);

template <class T>
void check_signal(const SupportMatrix& support, const T& x, std::size_t features, const char* what) {
  const Matrix& v = ops::value(x);
  if (static_cast<std::size_t>(v.rows()) != support.size() || static_cast<std::size_t>(v.cols()) != features) {
    throw DimensionError(std::string(what) + ": signal shape does not match model");
  }
}

}  // namespace detail

/// sum_t [I x_local, S^(first_tap+t) x_shared] H_t over the given taps.
template <class T>
T filter(const SupportMatrix& support, const T& x, const std::vector<T>& taps, const CommMask& mask,
         int first_tap = 0) {
  using namespace ops;
  const Matrix& xv = value(x);
  if (taps.empty()) throw DimensionError("filter: no taps");
  if (first_tap + static_cast<int>(taps.size()) - 1 > support.filter_length()) {
    throw DimensionError("filter: taps exceed support filter length");
  }
  if (mask.size() != static_cast<std::size_t>(xv.cols())) throw DimensionError("filter: mask length mismatch");
  for (const auto& t : taps) {
    if (value(t).rows() != xv.cols()) throw DimensionError("filter: tap rows must equal feature count");
  }
  const bool full = mask.is_full();
  T shared = full ? x : mul_const(x, mask.column_mask(static_cast<std::size_t>(xv.rows())));
  T local = full ? x : sub(x, shared);

  T shifted = shared;
  for (int k = 1; k < first_tap; ++k) shifted = matmul_const(support.matrix(), shifted);

  T out = x;
  for (std::size_t t = 0; t < taps.size(); ++t) {
    const int k = first_tap + static_cast<int>(t);
    T term = x;
    if (k == 0) {
      term = matmul(x, taps[t]);
    } else {
      shifted = matmul_const(support.matrix(), shifted);
      term = matmul(full ? shifted : add(shifted, local), taps[t]);
    }
    out = (t == 0) ? term : add(out, term);
  }
  return out;
}

template <class T>
struct GgnnGates {
  T forget;  // q̂, multiplies the state filter
  T input;   // q̃, multiplies the input filter
};

template <class T>
GgnnGates<T> ggnn_gates(const GgnnWeights<T>& w, const SupportMatrix& s, const T& x, const T& u,
                        const CommMasks& m) {
  using namespace ops;
  return {logistic(add_row(add(filter(s, x, w.forget_state, m.state), filter(s, u, w.forget_input, m.input)),
                           w.forget_bias)),
          logistic(add_row(add(filter(s, x, w.gate_state, m.state), filter(s, u, w.gate_input, m.input)),
                           w.gate_bias))};
}

/// x+ = tanh(q̂ ∘ A_S(x) + q̃ ∘ B_S(u) + b)
template <class T>
T ggnn_step(const GgnnWeights<T>& w, const SupportMatrix& s, const T& x, const T& u, const CommMasks& m,
            DomainCheck check = DomainCheck::Strict) {
  using namespace ops;
  const auto features = static_cast<std::size_t>(value(w.bias).cols());
  const auto inputs = static_cast<std::size_t>(value(w.input.front()).rows());
  detail::check_signal(s, x, features, "ggnn_step state");
  detail::check_signal(s, u, inputs, "ggnn_step input");
  T xin = x;
  T uin = u;
  if (detail::outside_unit_box(value(x)) || detail::outside_unit_box(value(u))) {
    if (check == DomainCheck::Strict) {
      detail::check_unit_box(value(x), "ggnn_step state");
      detail::check_unit_box(value(u), "ggnn_step input");
    }
    detail::warn("ggnn_step: clamping state/input into [-1, 1]");
    xin = clamp(x, -1.0, 1.0);
    uin = clamp(u, -1.0, 1.0);
  }
  const auto gates = ggnn_gates(w, s, xin, uin, m);
  return tanh(add_row(add(mul(gates.forget, filter(s, xin, w.state, m.state)),
                          mul(gates.input, filter(s, uin, w.input, m.input))),
                      w.bias));
}

/// Input-only terms of the liquid core; constant while u and S are frozen.
template <class T>
struct LiquidInput {
  T input_branch;  // ρ(B̂_S(u) + b_u)
  T drive;         // tanh(B_S(u))
};

template <class T>
LiquidInput<T> liquid_input(const LiquidWeights<T>& w, const SupportMatrix& s, const T& u, const CommMasks& m) {
  using namespace ops;
  const auto inputs = static_cast<std::size_t>(value(w.input.front()).rows());
  detail::check_signal(s, u, inputs, "liquid input");
  return {relu(add_row(filter(s, u, w.time_input, m.input), w.input_bias)), tanh(filter(s, u, w.input, m.input))};
}

template <class T>
struct LiquidTerms {
  T f;         // ρ(Â_S(x) + b_x) + ρ(B̂_S(u) + b_u)
  T coupling;  // sum_{k>=1} S^k x A_k
};

template <class T>
LiquidTerms<T> liquid_terms(const LiquidWeights<T>& w, const SupportMatrix& s, const T& x, const LiquidInput<T>& in,
                            const CommMasks& m) {
  using namespace ops;
  const auto features = static_cast<std::size_t>(value(w.leak).cols());
  detail::check_signal(s, x, features, "liquid state");
  T state_branch = relu(add_row(filter(s, x, w.time_state, m.state), w.state_bias));
  T coupling = w.coupling.empty() ? scale(x, 0.0) : filter(s, x, w.coupling, m.state, 1);
  return {add(state_branch, in.input_branch), coupling};
}

/// dx/dt = -(b + f) ∘ x - sum_{k>=1} S^k x A_k + f ∘ tanh(B_S(u))
template <class T>
T lgtc_vector_field(const LiquidWeights<T>& w, const SupportMatrix& s, const T& x, const T& u,
                    const CommMasks& m) {
  using namespace ops;
  const auto in = liquid_input(w, s, u, m);
  const auto t = liquid_terms(w, s, x, in, m);
  T decay = mul(add_row(t.f, w.leak), x);
  return sub(sub(mul(t.f, in.drive), decay), t.coupling);
}

template <class T>
T lgtc_hybrid_step(const LiquidWeights<T>& w, const SupportMatrix& s, const T& x, const LiquidInput<T>& in,
                   double delta, const CommMasks& m) {
  using namespace ops;
  if (!(delta > 0.0)) throw std::invalid_argument("lgtc_hybrid_step: step size must be positive");
  const auto t = liquid_terms(w, s, x, in, m);
  T numerator = add(x, scale(sub(mul(t.f, in.drive), t.coupling), delta));
  T denominator = add_scalar(scale(add_row(t.f, w.leak), delta), 1.0);
  return mul(numerator, reciprocal(denominator));
}

/// Semi-implicit step: (x + Δ(-coupling + f ∘ tanh(B_S(u)))) / (1 + Δ(b + f)).
template <class T>
T lgtc_hybrid_step(const LiquidWeights<T>& w, const SupportMatrix& s, const T& x, const T& u, double delta,
                   const CommMasks& m) {
  return lgtc_hybrid_step(w, s, x, liquid_input(w, s, u, m), delta, m);
}

/// n hybrid steps of size horizon / n with S and u frozen.
template <class T>
T lgtc_integrate(const LiquidWeights<T>& w, const SupportMatrix& s, const T& x0, const T& u, double horizon,
                 int steps, const CommMasks& m) {
  if (steps <= 0) throw std::invalid_argument("lgtc_integrate: step count must be positive");
  if (!(horizon > 0.0)) throw std::invalid_argument("lgtc_integrate: horizon must be positive");
  const double delta = horizon / steps;
  const auto in = liquid_input(w, s, u, m);
  T x = x0;
  for (int i = 0; i < steps; ++i) x = lgtc_hybrid_step(w, s, x, in, delta, m);
  return x;
}

/// Agent-local closed-form step:
///   f_i = -Dρ ∘ Â_S(x) + (sum_{k>=1} S^k x A_k) / (x + ε sign(x))
///   x+  = (x ∘ σ(-(b + f_x + f_i) t + π) - σ_u) ∘ σ(2 f_σ) + σ_u
template <class T>
T cfgc_step(const LiquidWeights<T>& w, const CfgcSettings& settings, const SupportMatrix& s, const T& x,
            const T& u, const CommMasks& m) {
  using namespace ops;
  if (!(settings.epsilon > 0.0)) throw std::invalid_argument("cfgc_step: epsilon must be positive");
  if (!(settings.horizon > 0.0)) throw std::invalid_argument("cfgc_step: horizon must be positive");
  const auto features = static_cast<std::size_t>(value(w.leak).cols());
  const auto inputs = static_cast<std::size_t>(value(w.input.front()).rows());
  detail::check_signal(s, x, features, "cfgc state");
  detail::check_signal(s, u, inputs, "cfgc input");

  T pre_state = filter(s, x, w.time_state, m.state);
  T state_arg = add_row(pre_state, w.state_bias);
  T f_x = relu(state_arg);
  T f_sigma = add(relu(add_row(filter(s, u, w.time_input, m.input), w.input_bias)), f_x);

  const Matrix active = (value(state_arg).array() > 0.0).template cast<double>().matrix();
  const Matrix& xv = value(x);
  const Matrix guard = xv.unaryExpr([&](double v) { return v >= 0.0 ? settings.epsilon : -settings.epsilon; });

  T f_i = scale(mul_const(pre_state, active), -1.0);
  if (!w.coupling.empty()) {
    T coupling = filter(s, x, w.coupling, m.state, 1);
    f_i = add(f_i, mul(coupling, reciprocal(add_const(x, guard))));
  }

  T rate = add(add_row(f_x, w.leak), f_i);
  T decay = logistic(add_scalar(scale(rate, -settings.horizon), std::numbers::pi));
  T drive = tanh(filter(s, u, w.input, m.input));
  T mix = logistic(scale(f_sigma, 2.0));
  return add(mul(sub(mul(x, decay), drive), mix), drive);
}

/// Implicit closed-form trajectory value x(T), resolved by fixed-point
/// iteration on x(T) with NF x NF Kronecker operators. Verification only.
struct ClosedFormOptions {
  int max_iterations = 50;
  double tolerance = 1e-10;
};

GraphSignal closed_form_exact(const LgtcParams& w, const SupportMatrix& s, const GraphSignal& x0,
                              const GraphSignal& u, double horizon, const ClosedFormOptions& options = {});

// ---------------------------------------------------------------------------
// Dense layers and the control policy
// ---------------------------------------------------------------------------

enum class Activation { Relu, Tanh, Identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

template <class T>
struct MlpWeights {
  struct Layer {
    T weight;  // in x out
    T bias;    // 1 x out
    Activation activation = Activation::Identity;
  };
  std::vector<Layer> layers;

  template <class Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      fn(prefix + "." + std::to_string(l) + ".weight", layers[l].weight);
      fn(prefix + "." + std::to_string(l) + ".bias", layers[l].bias);
    }
  }

  template <class U, class Fn>
  MlpWeights<U> map(Fn&& fn) const {
    MlpWeights<U> out;
    for (const auto& l : layers) out.layers.push_back({fn(l.weight), fn(l.bias), l.activation});
    return out;
  }
};

using Mlp = MlpWeights<Matrix>;

template <class T>
T mlp_forward(const MlpWeights<T>& mlp, const T& input) {
  using namespace ops;
  T h = input;
  for (const auto& layer : mlp.layers) {
    if (value(h).cols() != value(layer.weight).rows()) throw DimensionError("mlp: layer dimensions do not chain");
    h = add_row(matmul(h, layer.weight), layer.bias);
    switch (layer.activation) {
      case Activation::Relu: h = relu(h); break;
      case Activation::Tanh: h = tanh(h); break;
      case Activation::Identity: break;
    }
  }
  return h;
}

struct PolicyConfig {
  ModelKind kind = ModelKind::Cfgc;
  int raw_features = 10;
  int hidden = 128;
  int state_features = 50;  // F
  int filter_length = 2;    // K
  int shared_state = 4;     // F'
  int shared_input = 4;     // G'
  int controls = 2;
  double u_max = 5.0;
  double epsilon = 1e-6;
  double cf_horizon = 1.0;   // t in the closed-form gate
  double ode_horizon = 1.0;  // integration time per control tick (LGTC)
  int solver_steps = 6;      // hybrid steps per control tick (LGTC)
  std::vector<double> input_scale;  // per raw feature; empty means 1

  int encoded_features() const { return hidden; }
  CommMasks masks() const;
};

template <class T>
struct PolicyWeights {
  MlpWeights<T> encoder;
  GgnnWeights<T> ggnn;      // populated for ModelKind::Ggnn
  LiquidWeights<T> liquid;  // populated for Lgtc / Cfgc
  MlpWeights<T> readout;

  template <class Fn>
  void visit(ModelKind kind, Fn&& fn) {
    encoder.visit("encoder", fn);
    if (kind == ModelKind::Ggnn) {
      ggnn.visit([&](const std::string& name, T& t) { fn("core." + name, t); });
    } else {
      liquid.visit([&](const std::string& name, T& t) { fn("core." + name, t); });
    }
    readout.visit("readout", fn);
  }

  template <class U, class Fn>
  PolicyWeights<U> map(ModelKind kind, Fn&& fn) const {
    PolicyWeights<U> out;
    out.encoder = encoder.template map<U>(fn);
    if (kind == ModelKind::Ggnn) {
      out.ggnn = ggnn.template map<U>(fn);
    } else {
      out.liquid = liquid.template map<U>(fn);
    }
    out.readout = readout.template map<U>(fn);
    return out;
  }
};

struct Policy {
  PolicyConfig config;
  PolicyWeights<Matrix> weights;

  /// Calls fn(name, Matrix&) for every trainable tensor in a fixed order.
  template <class Fn>
  void visit(Fn&& fn) {
    weights.visit(config.kind, fn);
  }
  std::size_t parameter_count();
};

Policy make_zero_policy(const PolicyConfig& config);
/// Glorot-uniform dense layers; small core weights with a positive leak so
/// the freshly initialised core satisfies the stability margins.
Policy make_random_policy(const PolicyConfig& config, std::uint64_t seed);

/// Initial hidden state: zeros (interior of the state box).
GraphSignal initial_state(const PolicyConfig& config, std::size_t agents);

/// Scales raw features per column and clamps into [-1, 1].
Matrix scale_features(const PolicyConfig& config, const Matrix& raw);

template <class T>
T core_step(const PolicyConfig& c, const PolicyWeights<T>& w, const SupportMatrix& s, const T& x, const T& u,
            const CommMasks& m) {
  switch (c.kind) {
    case ModelKind::Ggnn:
      return ggnn_step(w.ggnn, s, x, u, m, DomainCheck::Lenient);
    case ModelKind::Lgtc:
      return lgtc_integrate(w.liquid, s, x, u, c.ode_horizon, c.solver_steps, m);
    case ModelKind::Cfgc:
      return cfgc_step(w.liquid, CfgcSettings{c.epsilon, c.cf_horizon}, s, x, u, m);
  }
  throw std::logic_error("unknown model kind");
}

template <class T>
struct PolicyOutput {
  T controls;
  T state;
};

/// encoder (tanh-capped) -> recurrent graph core -> readout -> saturation.
template <class T>
PolicyOutput<T> policy_forward(const PolicyConfig& c, const PolicyWeights<T>& w, const SupportMatrix& s,
                               const T& state, const Matrix& raw_features) {
  using namespace ops;
  if (raw_features.cols() != c.raw_features) throw DimensionError("policy: unexpected raw feature count");
  if (static_cast<std::size_t>(raw_features.rows()) != s.size()) throw DimensionError("policy: agent count mismatch");
  T features = constant_like(state, scale_features(c, raw_features));
  T encoded = mlp_forward(w.encoder, features);
  T next = core_step(c, w, s, state, encoded, c.masks());
  T controls = clamp(mlp_forward(w.readout, next), -c.u_max, c.u_max);
  return {controls, next};
}

}  // namespace lgc
