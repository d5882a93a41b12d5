#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace lgc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Rows are agents, columns are features. Column-major storage makes the
/// Eigen memory layout coincide with the column-stacking vectorization.
using GraphSignal = Matrix;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Edge {
  std::size_t i = 0;
  std::size_t j = 0;
  double weight = 1.0;
};

/// Undirected weighted graph without self loops.
class Graph {
 public:
  explicit Graph(std::size_t n_agents);

  void add_edge(std::size_t i, std::size_t j, double weight = 1.0);

  std::size_t size() const { return n_; }
  const std::vector<Edge>& edges() const { return edges_; }
  bool has_edge(std::size_t i, std::size_t j) const;

  /// Dense symmetric adjacency matrix A with A(i,j) = w_ij.
  Matrix adjacency() const;

  nlohmann::json to_json() const;
  static Graph from_json(const nlohmann::json& doc);

 private:
  std::size_t n_;
  std::vector<Edge> edges_;
};

enum class SupportKind { Adjacency, Laplacian, NormalizedLaplacian };

std::string to_string(SupportKind kind);
SupportKind support_kind_from_string(const std::string& name);

/// Graph shift operator together with its powers S^0 .. S^K.
class SupportMatrix {
 public:
  SupportMatrix(SupportKind kind, Matrix shift, int filter_length);

  SupportKind kind() const { return kind_; }
  int filter_length() const { return static_cast<int>(powers_.size()) - 1; }
  std::size_t size() const { return static_cast<std::size_t>(shift_.rows()); }
  const Matrix& matrix() const { return shift_; }
  const Matrix& power(int k) const;
  const std::vector<Matrix>& powers() const { return powers_; }

 private:
  SupportKind kind_;
  Matrix shift_;
  std::vector<Matrix> powers_;
};

SupportMatrix build_support(const Graph& graph, SupportKind kind, int filter_length);

GraphSignal apply_shift(const SupportMatrix& support, const GraphSignal& x);

/// Selects which feature columns of a signal are exchanged with neighbours.
/// Columns outside the mask are filtered with the identity instead of S^k.
class CommMask {
 public:
  CommMask() = default;
  explicit CommMask(std::vector<bool> communicated) : bits_(std::move(communicated)) {}

  static CommMask all(std::size_t features) { return CommMask(std::vector<bool>(features, true)); }
  static CommMask none(std::size_t features) { return CommMask(std::vector<bool>(features, false)); }
  /// First `shared` features communicated, the rest kept local.
  static CommMask leading(std::size_t features, std::size_t shared);

  std::size_t size() const { return bits_.size(); }
  bool operator[](std::size_t f) const { return bits_[f]; }
  bool is_full() const;
  std::size_t count() const;

  /// N x F matrix of 0/1 with column f set to 1 when feature f is communicated.
  Matrix column_mask(std::size_t rows) const;

 private:
  std::vector<bool> bits_;
};

/// Weight stack H_0 .. H_K of a graph filter, each tap G_in x G_out.
template <class T>
struct BasicFilterBank {
  std::vector<T> taps;

  int filter_length() const { return static_cast<int>(taps.size()) - 1; }
};

using FilterBank = BasicFilterBank<Matrix>;

FilterBank make_filter_bank(std::vector<Matrix> taps);

/// sum_k S^k x H_k
GraphSignal graph_filter(const SupportMatrix& support, const GraphSignal& x, const FilterBank& bank);

/// sum_k [I x_local, S^k x_shared] H_k, with shared columns selected by `mask`.
GraphSignal reduced_graph_filter(const SupportMatrix& support, const GraphSignal& x,
                                 const FilterBank& bank, const CommMask& mask);

/// Kronecker form of a (possibly reduced) filter restricted to taps
/// first_tap..K: the NF x NF matrix M with M * x_| = (filter(x))_|.
/// With a full mask this is sum_k H_k^T (x) S^k.
Matrix filter_kronecker(const SupportMatrix& support, const std::vector<Matrix>& taps,
                        const CommMask& mask, int first_tap = 0);

/// Column-stacking vectorization X_|.
Vector vectorize(const Matrix& x);
Matrix unvectorize(const Vector& v, Eigen::Index rows, Eigen::Index cols);

}  // namespace lgc
