#pragma once

#include "lgc/graph.hpp"
#include "lgc/models.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace lgc {

/// Induced ∞-norm: max absolute row sum.
double inf_norm(const Matrix& m);
/// ∞-norm of the horizontal concatenation [M_0, M_1, ...] (rows joined).
double concat_inf_norm(const std::vector<Matrix>& blocks);
/// μ_∞(M) = max_i (m_ii + sum_{j != i} |m_ij|).
double log_norm_inf(const Matrix& m);

/// ||[H_0, ..., H_K]^T||_∞ = max_k ||H_k^T||_∞ (largest absolute column sum).
double stack_norm(const std::vector<Matrix>& taps);
/// ||[H_0, ..., H_K]||_∞, the transposed stack (largest row sum across taps).
double stack_transpose_norm(const std::vector<Matrix>& taps);
/// max_f |b_f| for a bias row.
double bias_norm(const Matrix& bias);

/// Admissible-support bounds over a family of graphs.
struct SupportBounds {
  int filter_length = 0;
  double s_bar = 0.0;         // upper bound on ||S||_∞
  double s_tilde = 0.0;       // lower bound on ||S||_∞
  double bar_0k = 0.0;        // ||S̄_{0,K}||_∞ = ||S̄_{I,K}||_∞
  double tilde_1k = 0.0;      // ||S̃_{1,K}||_∞
  double bar_1km1 = 0.0;      // ||S̄_{1,K-1}||_∞
  double tilde_1km1 = 0.0;    // ||S̃_{1,K-1}||_∞

  /// Upper concatenation norms from s_bar (sum of s_bar^k); lower ones
  /// from s_tilde, which bounds the first block of each concatenation.
  static SupportBounds from_norms(int filter_length, double s_bar, double s_tilde);
  /// Normalized Laplacian family: s_bar = 2 (or the largest sample norm if
  /// that is bigger), s_tilde measured on samples.
  static SupportBounds normalized_laplacian(int filter_length, const std::vector<SupportMatrix>& samples);
  /// Every quantity measured on the given supports (max for bars, min for tildes).
  static SupportBounds measured(const std::vector<SupportMatrix>& samples);

  void validate() const;
};

/// σ_q̂: bound on every entry of the GGNN state gate on the unit box.
double gate_bound(const GgnnParams& p, const SupportBounds& bounds);
/// A_δ of the GGNN incremental ISS condition; certified when <= 1.
double ggnn_delta_iss_margin(const GgnnParams& p, const SupportBounds& bounds);

struct ContractionMargins {
  double rate = 0.0;             // c
  double leak = 0.0;             // min_f b_f
  double coupling_log_norm = 0.0;  // min over samples of μ_∞(sum_k A_k^T ⊗ S^k)

  bool certified() const { return rate >= 0.0 && leak >= 0.0 && coupling_log_norm >= 0.0; }
};

struct ContractionOptions {
  CommMask state_mask;         // empty means full communication
  std::size_t max_kron_side = 2500;
};

/// c of the LGTC contraction condition and the three condition margins.
ContractionMargins lgtc_contraction_rate(const LgtcParams& p, const SupportBounds& bounds,
                                         const std::vector<SupportMatrix>& samples,
                                         const ContractionOptions& options = {});
double lgtc_rate(const LgtcParams& p, const SupportBounds& bounds);

struct LipschitzConstants {
  double input = 0.0;    // l_u
  double support = 0.0;  // l_S
};

LipschitzConstants lgtc_lipschitz(const LgtcParams& p, const SupportBounds& bounds);

/// Smallest eigenvalue of the symmetric part of sum_k A_k^T ⊗ S^k (k >= 1),
/// minimised over samples. Nonnegative means the coupling is PSD.
double coupling_psd_margin(const LgtcParams& p, const std::vector<SupportMatrix>& samples,
                           const ContractionOptions& options = {});

/// Softplus_β(z) = log(1 + e^{βz}) / β.
double softplus(double z, double beta);
/// Π = sum_i Softplus_β(p_i).
double stability_penalty(const std::vector<double>& conditions, double beta);

/// Penalty vectors: GGNN uses [A_δ - 1]; liquid cores use [-c, -b, -μ_∞].
std::vector<double> ggnn_conditions(const GgnnParams& p, const SupportBounds& bounds);
std::vector<double> liquid_conditions(const LgtcParams& p, const SupportBounds& bounds,
                                      const std::vector<SupportMatrix>& samples,
                                      const ContractionOptions& options = {});

template <class W>
struct PenaltyGradient {
  double value = 0.0;
  W gradient;
};

/// Π and its (sub)gradient with respect to every core tensor.
PenaltyGradient<GgnnParams> ggnn_penalty(const GgnnParams& p, const SupportBounds& bounds, double beta);
PenaltyGradient<LgtcParams> liquid_penalty(const LgtcParams& p, const SupportBounds& bounds,
                                           const std::vector<SupportMatrix>& samples, double beta,
                                           const ContractionOptions& options = {});

using VectorField = std::function<Matrix(const Matrix&)>;

/// Central finite-difference Jacobian of the vectorized field (NF x NF).
Matrix empirical_jacobian(const VectorField& field, const Matrix& x, double h);

struct StabilityReport {
  ModelKind kind = ModelKind::Cfgc;
  SupportBounds bounds;
  // GGNN
  double a_delta = 0.0;
  double gate_bound = 0.0;
  // LGTC / CfGC
  ContractionMargins contraction;
  LipschitzConstants lipschitz;
  double coupling_psd = 0.0;
  bool certified = false;

  /// Named condition margins; certified iff all are >= 0.
  std::map<std::string, double> margins() const;
  double worst_margin() const;
};

nlohmann::json to_json(const StabilityReport& report);
std::string format_table(const StabilityReport& report);

StabilityReport stability_report(const Policy& policy, const SupportBounds& bounds,
                                 const std::vector<SupportMatrix>& samples);

}  // namespace lgc
