#include "lgc/stability.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace lgc {

double inf_norm(const Matrix& m) {
  if (m.size() == 0) throw std::invalid_argument("inf_norm: empty matrix");
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

double concat_inf_norm(const std::vector<Matrix>& blocks) {
  if (blocks.empty()) throw std::invalid_argument("concat_inf_norm: no blocks");
  Vector rows = Vector::Zero(blocks.front().rows());
  for (const auto& b : blocks) {
    if (b.size() == 0) throw std::invalid_argument("concat_inf_norm: empty block");
    if (b.rows() != rows.size()) throw DimensionError("concat_inf_norm: blocks must share a row count");
    rows += b.cwiseAbs().rowwise().sum();
  }
  return rows.maxCoeff();
}

double log_norm_inf(const Matrix& m) {
  if (m.size() == 0) throw std::invalid_argument("log_norm_inf: empty matrix");
  if (m.rows() != m.cols()) throw DimensionError("log_norm_inf: matrix must be square");
  const Vector rows = m.cwiseAbs().rowwise().sum() - m.diagonal().cwiseAbs() + m.diagonal();
  return rows.maxCoeff();
}

double stack_norm(const std::vector<Matrix>& taps) {
  double best = 0.0;
  for (const auto& t : taps) {
    if (t.size() > 0) best = std::max(best, t.cwiseAbs().colwise().sum().maxCoeff());
  }
  return best;
}

double stack_transpose_norm(const std::vector<Matrix>& taps) {
  if (taps.empty()) return 0.0;
  return concat_inf_norm(taps);
}

double bias_norm(const Matrix& bias) { return bias.size() == 0 ? 0.0 : bias.cwiseAbs().maxCoeff(); }

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// Adds scale * d(stack_norm)/d(taps) into grads.
void add_stack_norm_grad(const std::vector<Matrix>& taps, double scale, std::vector<Matrix>& grads) {
  double best = -1.0;
  std::size_t best_tap = 0;
  Eigen::Index best_col = 0;
  for (std::size_t k = 0; k < taps.size(); ++k) {
    if (taps[k].size() == 0) continue;
    Eigen::Index col = 0;
    const double v = taps[k].cwiseAbs().colwise().sum().maxCoeff(&col);
    if (v > best) {
      best = v;
      best_tap = k;
      best_col = col;
    }
  }
  if (best <= 0.0) return;
  grads[best_tap].col(best_col) += scale * taps[best_tap].col(best_col).unaryExpr(&sign);
}

void add_stack_transpose_norm_grad(const std::vector<Matrix>& taps, double scale, std::vector<Matrix>& grads) {
  if (taps.empty()) return;
  Vector rows = Vector::Zero(taps.front().rows());
  for (const auto& t : taps) rows += t.cwiseAbs().rowwise().sum();
  Eigen::Index row = 0;
  if (rows.maxCoeff(&row) <= 0.0) return;
  for (std::size_t k = 0; k < taps.size(); ++k) grads[k].row(row) += scale * taps[k].row(row).unaryExpr(&sign);
}

void add_bias_norm_grad(const Matrix& bias, double scale, Matrix& grad) {
  if (bias.size() == 0) return;
  Eigen::Index r = 0;
  Eigen::Index c = 0;
  if (bias.cwiseAbs().maxCoeff(&r, &c) <= 0.0) return;
  grad(r, c) += scale * sign(bias(r, c));
}

double power_sum(double base, int from, int to) {
  double total = 0.0;
  for (int k = from; k <= to; ++k) total += std::pow(base, k);
  return total;
}

std::vector<Matrix> slice(const std::vector<Matrix>& taps, std::size_t from, std::size_t to) {
  if (from > to || to > taps.size()) return {};
  return {taps.begin() + static_cast<std::ptrdiff_t>(from), taps.begin() + static_cast<std::ptrdiff_t>(to)};
}

CommMask resolve_mask(const ContractionOptions& options, std::size_t features) {
  if (options.state_mask.size() == 0) return CommMask::all(features);
  if (options.state_mask.size() != features) throw DimensionError("contraction: state mask length mismatch");
  return options.state_mask;
}

Matrix coupling_operator(const LgtcParams& p, const SupportMatrix& s, const ContractionOptions& options) {
  const auto f = static_cast<std::size_t>(p.leak.cols());
  const std::size_t side = s.size() * f;
  if (side > options.max_kron_side) {
    throw std::length_error("Kronecker materialization of " + std::to_string(side) + " rows exceeds the cap of " +
                            std::to_string(options.max_kron_side) + "; sample smaller graphs");
  }
  if (p.coupling.empty()) return Matrix::Zero(static_cast<Eigen::Index>(side), static_cast<Eigen::Index>(side));
  return filter_kronecker(s, p.coupling, resolve_mask(options, f), 1);
}

struct LogNormArg {
  double value = std::numeric_limits<double>::infinity();
  std::size_t sample = 0;
  Eigen::Index row = 0;
  Matrix op;
};

LogNormArg min_coupling_log_norm(const LgtcParams& p, const std::vector<SupportMatrix>& samples,
                                 const ContractionOptions& options) {
  if (samples.empty()) throw std::invalid_argument("coupling log-norm needs at least one sample support");
  LogNormArg best;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    Matrix op = coupling_operator(p, samples[s], options);
    const Vector rows = op.cwiseAbs().rowwise().sum() - op.diagonal().cwiseAbs() + op.diagonal();
    Eigen::Index row = 0;
    const double v = rows.maxCoeff(&row);
    if (v < best.value) best = {v, s, row, std::move(op)};
  }
  return best;
}

}  // namespace

SupportBounds SupportBounds::from_norms(int filter_length, double s_bar, double s_tilde) {
  SupportBounds b;
  b.filter_length = filter_length;
  b.s_bar = s_bar;
  b.s_tilde = s_tilde;
  b.bar_0k = power_sum(s_bar, 0, filter_length);
  b.tilde_1k = filter_length >= 1 ? s_tilde : 0.0;
  b.bar_1km1 = power_sum(s_bar, 1, filter_length - 1);
  b.tilde_1km1 = filter_length >= 2 ? s_tilde : 0.0;
  b.validate();
  return b;
}

SupportBounds SupportBounds::normalized_laplacian(int filter_length, const std::vector<SupportMatrix>& samples) {
  // 2 bounds the spectrum, not the row sums: a hub of degree d with leaf
  // neighbours has row sum 1 + sqrt(d). Raise s_bar when a sample needs it.
  double s_bar = 2.0;
  double s_tilde = samples.empty() ? 0.0 : std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    const double norm = inf_norm(s.matrix());
    s_bar = std::max(s_bar, norm);
    s_tilde = std::min(s_tilde, norm);
  }
  return from_norms(filter_length, s_bar, s_tilde);
}

SupportBounds SupportBounds::measured(const std::vector<SupportMatrix>& samples) {
  if (samples.empty()) throw std::invalid_argument("SupportBounds::measured: no samples");
  const int k = samples.front().filter_length();
  SupportBounds b;
  b.filter_length = k;
  b.s_tilde = std::numeric_limits<double>::infinity();
  b.tilde_1k = k >= 1 ? std::numeric_limits<double>::infinity() : 0.0;
  b.tilde_1km1 = k >= 2 ? std::numeric_limits<double>::infinity() : 0.0;
  for (const auto& s : samples) {
    if (s.filter_length() != k) throw std::invalid_argument("SupportBounds::measured: mixed filter lengths");
    const auto& pw = s.powers();
    const double norm = inf_norm(s.matrix());
    b.s_bar = std::max(b.s_bar, norm);
    b.s_tilde = std::min(b.s_tilde, norm);
    b.bar_0k = std::max(b.bar_0k, concat_inf_norm(pw));
    if (k >= 1) b.tilde_1k = std::min(b.tilde_1k, concat_inf_norm(slice(pw, 1, static_cast<std::size_t>(k) + 1)));
    if (k >= 2) {
      const auto mid = slice(pw, 1, static_cast<std::size_t>(k));
      b.bar_1km1 = std::max(b.bar_1km1, concat_inf_norm(mid));
      b.tilde_1km1 = std::min(b.tilde_1km1, concat_inf_norm(mid));
    }
  }
  b.validate();
  return b;
}

void SupportBounds::validate() const {
  if (filter_length < 0) throw std::invalid_argument("support bounds: negative filter length");
  if (s_tilde < 0.0 || s_tilde > s_bar) throw std::invalid_argument("support bounds: need 0 <= s_tilde <= s_bar");
}

double gate_bound(const GgnnParams& p, const SupportBounds& bounds) {
  const double arg = bounds.bar_0k * (stack_norm(p.forget_state) + stack_norm(p.forget_input)) +
                     bias_norm(p.forget_bias);
  return 1.0 / (1.0 + std::exp(-arg));
}

double ggnn_delta_iss_margin(const GgnnParams& p, const SupportBounds& bounds) {
  const double s = bounds.bar_0k;
  const double a = stack_norm(p.state);
  const double b = stack_norm(p.input);
  return gate_bound(p, bounds) * s * a + 0.25 * s * s * stack_norm(p.forget_state) * a +
         0.25 * s * s * stack_norm(p.gate_state) * b;
}

double lgtc_rate(const LgtcParams& p, const SupportBounds& bounds) {
  return bias_norm(p.leak) + stack_norm(p.coupling) * bounds.tilde_1k + bias_norm(p.state_bias) -
         stack_transpose_norm(p.time_state) * bounds.bar_0k;
}

ContractionMargins lgtc_contraction_rate(const LgtcParams& p, const SupportBounds& bounds,
                                         const std::vector<SupportMatrix>& samples,
                                         const ContractionOptions& options) {
  validate(p);
  ContractionMargins m;
  m.rate = lgtc_rate(p, bounds);
  m.leak = p.leak.minCoeff();
  m.coupling_log_norm = min_coupling_log_norm(p, samples, options).value;
  return m;
}

LipschitzConstants lgtc_lipschitz(const LgtcParams& p, const SupportBounds& bounds) {
  const double s = bounds.bar_0k;
  const double state_gate = stack_norm(p.time_state);
  const double input_gate = stack_norm(p.time_input);
  const double biases = bias_norm(p.state_bias) + bias_norm(p.input_bias);
  const double f_bound = state_gate * s + input_gate * s + biases;

  LipschitzConstants l;
  l.input = (2.0 * input_gate + f_bound * stack_norm(p.input)) * s;

  const int k = static_cast<int>(p.time_state.size()) - 1;
  const auto upto = static_cast<std::size_t>(std::max(k, 1));
  // B_{1,K-1}, Â_{1,K-1}, B̂_{1,K-1} use taps 1..K-1; A_{1,K-1} uses coupling taps 1..K-1.
  const double input_mid = stack_norm(slice(p.input, 1, upto));
  const double state_gate_mid = stack_norm(slice(p.time_state, 1, upto));
  const double input_gate_mid = stack_norm(slice(p.time_input, 1, upto));
  const double coupling_mid = stack_norm(slice(p.coupling, 0, upto - 1));
  const double binom = 0.5 * static_cast<double>(k + 1) * static_cast<double>(k);
  l.support = binom * ((f_bound * input_mid + 2.0 * state_gate_mid + 2.0 * input_gate_mid) * bounds.bar_1km1 -
                       bounds.tilde_1km1 * coupling_mid);
  return l;
}

double coupling_psd_margin(const LgtcParams& p, const std::vector<SupportMatrix>& samples,
                           const ContractionOptions& options) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    const Matrix op = coupling_operator(p, s, options);
    const Matrix sym = 0.5 * (op + op.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym, Eigen::EigenvaluesOnly);
    best = std::min(best, eig.eigenvalues().minCoeff());
  }
  return best;
}

double softplus(double z, double beta) {
  const double t = beta * z;
  return (std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)))) / beta;
}

namespace {

double softplus_slope(double z, double beta) {
  const double t = beta * z;
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

}  // namespace

double stability_penalty(const std::vector<double>& conditions, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("stability penalty: beta must be positive");
  double total = 0.0;
  for (double p : conditions) total += softplus(p, beta);
  return total;
}

std::vector<double> ggnn_conditions(const GgnnParams& p, const SupportBounds& bounds) {
  return {ggnn_delta_iss_margin(p, bounds) - 1.0};
}

std::vector<double> liquid_conditions(const LgtcParams& p, const SupportBounds& bounds,
                                      const std::vector<SupportMatrix>& samples, const ContractionOptions& options) {
  const auto m = lgtc_contraction_rate(p, bounds, samples, options);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(p.leak.size()) + 2);
  out.push_back(-m.rate);
  for (Eigen::Index f = 0; f < p.leak.size(); ++f) out.push_back(-p.leak(0, f));
  out.push_back(-m.coupling_log_norm);
  return out;
}

PenaltyGradient<GgnnParams> ggnn_penalty(const GgnnParams& p, const SupportBounds& bounds, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("stability penalty: beta must be positive");
  validate(p);
  const double s = bounds.bar_0k;
  const double a = stack_norm(p.state);
  const double b = stack_norm(p.input);
  const double a_hat = stack_norm(p.forget_state);
  const double a_tilde = stack_norm(p.gate_state);
  const double q = gate_bound(p, bounds);
  const double dq = q * (1.0 - q);
  const double a_delta = q * s * a + 0.25 * s * s * a_hat * a + 0.25 * s * s * a_tilde * b;

  PenaltyGradient<GgnnParams> out;
  out.value = softplus(a_delta - 1.0, beta);
  const double w = softplus_slope(a_delta - 1.0, beta);
  out.gradient = p.map<Matrix>([](const Matrix& m) { Matrix z = Matrix::Zero(m.rows(), m.cols()); return z; });

  add_stack_norm_grad(p.state, w * (q * s + 0.25 * s * s * a_hat), out.gradient.state);
  add_stack_norm_grad(p.forget_state, w * (dq * s * s * a + 0.25 * s * s * a), out.gradient.forget_state);
  add_stack_norm_grad(p.forget_input, w * dq * s * s * a, out.gradient.forget_input);
  add_bias_norm_grad(p.forget_bias, w * dq * s * a, out.gradient.forget_bias);
  add_stack_norm_grad(p.gate_state, w * 0.25 * s * s * b, out.gradient.gate_state);
  add_stack_norm_grad(p.input, w * 0.25 * s * s * a_tilde, out.gradient.input);
  return out;
}

PenaltyGradient<LgtcParams> liquid_penalty(const LgtcParams& p, const SupportBounds& bounds,
                                           const std::vector<SupportMatrix>& samples, double beta,
                                           const ContractionOptions& options) {
  if (!(beta > 0.0)) throw std::invalid_argument("stability penalty: beta must be positive");
  validate(p);
  const double c = lgtc_rate(p, bounds);
  const auto arg = min_coupling_log_norm(p, samples, options);

  PenaltyGradient<LgtcParams> out;
  out.gradient = p.map<Matrix>([](const Matrix& m) { Matrix z = Matrix::Zero(m.rows(), m.cols()); return z; });
  auto& g = out.gradient;

  // -c
  out.value += softplus(-c, beta);
  const double wc = -softplus_slope(-c, beta);
  add_bias_norm_grad(p.leak, wc, g.leak);
  add_stack_norm_grad(p.coupling, wc * bounds.tilde_1k, g.coupling);
  add_bias_norm_grad(p.state_bias, wc, g.state_bias);
  add_stack_transpose_norm_grad(p.time_state, -wc * bounds.bar_0k, g.time_state);

  // -b, elementwise
  for (Eigen::Index f = 0; f < p.leak.size(); ++f) {
    out.value += softplus(-p.leak(0, f), beta);
    g.leak(0, f) -= softplus_slope(-p.leak(0, f), beta);
  }

  // -μ_∞(sum_k A_k^T ⊗ S^k) at the minimising sample and its argmax row
  out.value += softplus(-arg.value, beta);
  const double wm = -softplus_slope(-arg.value, beta);
  if (!p.coupling.empty()) {
    const SupportMatrix& s = samples[arg.sample];
    const auto n = static_cast<Eigen::Index>(s.size());
    const CommMask mask = resolve_mask(options, static_cast<std::size_t>(p.leak.cols()));
    const Eigen::Index row = arg.row;
    const Eigen::Index f_star = row / n;
    const Eigen::Index i_star = row % n;
    Vector weight = arg.op.row(row).transpose().unaryExpr(&sign);
    weight(row) = 1.0;
    const Matrix identity = Matrix::Identity(n, n);
    for (std::size_t t = 0; t < p.coupling.size(); ++t) {
      const int k = static_cast<int>(t) + 1;
      for (Eigen::Index gi = 0; gi < p.coupling[t].rows(); ++gi) {
        const Matrix& shift = mask[static_cast<std::size_t>(gi)] ? s.power(k) : identity;
        g.coupling[t](gi, f_star) += wm * weight.segment(gi * n, n).dot(shift.row(i_star).transpose());
      }
    }
  }
  return out;
}

Matrix empirical_jacobian(const VectorField& field, const Matrix& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("empirical_jacobian: step must be positive");
  const Vector base = vectorize(x);
  const auto n = base.size();
  Matrix jac;
  for (Eigen::Index j = 0; j < n; ++j) {
    Vector plus = base;
    Vector minus = base;
    plus(j) += h;
    minus(j) -= h;
    const Vector fp = vectorize(field(unvectorize(plus, x.rows(), x.cols())));
    const Vector fm = vectorize(field(unvectorize(minus, x.rows(), x.cols())));
    if (!fp.allFinite() || !fm.allFinite()) throw std::runtime_error("empirical_jacobian: non-finite field value");
    if (j == 0) jac.resize(fp.size(), n);
    jac.col(j) = (fp - fm) / (2.0 * h);
  }
  return jac;
}

std::map<std::string, double> StabilityReport::margins() const {
  if (kind == ModelKind::Ggnn) return {{"one_minus_a_delta", 1.0 - a_delta}};
  return {{"contraction_rate", contraction.rate},
          {"leak_min", contraction.leak},
          {"coupling_log_norm", contraction.coupling_log_norm}};
}

double StabilityReport::worst_margin() const {
  double worst = std::numeric_limits<double>::infinity();
  for (const auto& [name, v] : margins()) worst = std::min(worst, v);
  return worst;
}

nlohmann::json to_json(const StabilityReport& r) {
  nlohmann::json j;
  j["kind"] = to_string(r.kind);
  j["bounds"] = {{"filter_length", r.bounds.filter_length}, {"s_bar", r.bounds.s_bar},
                 {"s_tilde", r.bounds.s_tilde},             {"s_bar_0K", r.bounds.bar_0k},
                 {"s_tilde_1K", r.bounds.tilde_1k},         {"s_bar_1Km1", r.bounds.bar_1km1},
                 {"s_tilde_1Km1", r.bounds.tilde_1km1}};
  if (r.kind == ModelKind::Ggnn) {
    j["a_delta"] = r.a_delta;
    j["gate_bound"] = r.gate_bound;
  } else {
    j["c"] = r.contraction.rate;
    j["leak_min"] = r.contraction.leak;
    j["coupling_log_norm"] = r.contraction.coupling_log_norm;
    j["coupling_psd_min_eigenvalue"] = r.coupling_psd;
    j["l_u"] = r.lipschitz.input;
    j["l_S"] = r.lipschitz.support;
  }
  j["margins"] = r.margins();
  j["certified"] = r.certified;
  return j;
}

std::string format_table(const StabilityReport& r) {
  std::ostringstream out;
  out << std::left << std::setw(28) << "model" << to_string(r.kind) << '\n';
  const auto row = [&](const std::string& name, double v) {
    out << std::left << std::setw(28) << name << std::setprecision(6) << v << '\n';
  };
  if (r.kind == ModelKind::Ggnn) {
    row("A_delta", r.a_delta);
    row("gate bound", r.gate_bound);
  } else {
    row("contraction rate c", r.contraction.rate);
    row("min leak b", r.contraction.leak);
    row("coupling log-norm", r.contraction.coupling_log_norm);
    row("coupling PSD min eig", r.coupling_psd);
    row("l_u", r.lipschitz.input);
    row("l_S", r.lipschitz.support);
  }
  for (const auto& [name, v] : r.margins()) {
    out << std::left << std::setw(28) << ("margin " + name) << std::setprecision(6) << v
        << (v >= 0.0 ? "  ok" : "  FAIL") << '\n';
  }
  out << std::left << std::setw(28) << "certified" << (r.certified ? "yes" : "no") << '\n';
  return out.str();
}

StabilityReport stability_report(const Policy& policy, const SupportBounds& bounds,
                                 const std::vector<SupportMatrix>& samples) {
  StabilityReport r;
  r.kind = policy.config.kind;
  r.bounds = bounds;
  if (r.kind == ModelKind::Ggnn) {
    r.a_delta = ggnn_delta_iss_margin(policy.weights.ggnn, bounds);
    r.gate_bound = gate_bound(policy.weights.ggnn, bounds);
    r.certified = r.a_delta <= 1.0;
    return r;
  }
  ContractionOptions options;
  options.state_mask = policy.config.masks().state;
  r.contraction = lgtc_contraction_rate(policy.weights.liquid, bounds, samples, options);
  r.lipschitz = lgtc_lipschitz(policy.weights.liquid, bounds);
  r.coupling_psd = coupling_psd_margin(policy.weights.liquid, samples, options);
  r.certified = r.contraction.certified();
  return r;
}

}  // namespace lgc
