#pragma once

#include "lgc/graph.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace lgc {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

enum class OpKind {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  MatMul,
  Scale,
  AddScalar,
  AddRow,
  Relu,
  Tanh,
  Logistic,
  Reciprocal,
  Softplus,
  Clamp,
  Sum,
  Custom,
};

/// Backward rule of a Custom node: maps the upstream gradient of the node
/// to one gradient per input, in input order.
using CustomBackward = std::function<std::vector<Matrix>(const Matrix& upstream)>;

/// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
/// order, so reverse insertion order is a reverse topological order.
class Tape {
 public:
  Var leaf(Matrix value);
  Var constant(Matrix value);

  Var record(OpKind op, std::vector<std::size_t> inputs, Matrix value, double a = 0.0, double b = 0.0);
  Var custom(std::vector<Var> inputs, Matrix value, CustomBackward backward);

  /// Seeds d(root)/d(root) = 1 and propagates. root must be 1x1.
  void backward(Var root);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient accumulated for v by the last backward(); zeros if unreached.
  Matrix grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

 private:
  struct Node {
    OpKind op = OpKind::Constant;
    std::vector<std::size_t> inputs;
    Matrix value;
    Matrix grad;
    double a = 0.0;
    double b = 0.0;
    bool needs_grad = false;
    CustomBackward custom;
  };

  void accumulate(std::size_t id, const Matrix& g);

  std::vector<Node> nodes_;
};

/// Elementary operations, overloaded for plain matrices and taped values so
/// that model code is written once and evaluated either way.
namespace ops {

inline const Matrix& value(const Matrix& m) { return m; }
inline const Matrix& value(const Var& v) { return v.value(); }

inline Matrix constant_like(const Matrix&, Matrix m) { return m; }
Var constant_like(const Var& like, Matrix m);

inline Matrix add(const Matrix& a, const Matrix& b) { return a + b; }
inline Matrix sub(const Matrix& a, const Matrix& b) { return a - b; }
inline Matrix mul(const Matrix& a, const Matrix& b) { return a.cwiseProduct(b); }
inline Matrix matmul(const Matrix& a, const Matrix& b) { return a * b; }
inline Matrix scale(const Matrix& a, double s) { return a * s; }
inline Matrix add_scalar(const Matrix& a, double s) { return a.array() + s; }
inline Matrix add_row(const Matrix& a, const Matrix& row) { return a.rowwise() + row.row(0); }
inline Matrix relu(const Matrix& a) { return a.cwiseMax(0.0); }
inline Matrix tanh(const Matrix& a) { return a.array().tanh(); }
Matrix logistic(const Matrix& a);
inline Matrix reciprocal(const Matrix& a) { return a.cwiseInverse(); }
Matrix softplus(const Matrix& a, double beta);
inline Matrix clamp(const Matrix& a, double lo, double hi) { return a.cwiseMax(lo).cwiseMin(hi); }
inline Matrix sum(const Matrix& a) { return Matrix::Constant(1, 1, a.sum()); }

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var add_row(const Var& a, const Var& row);
Var relu(const Var& a);
Var tanh(const Var& a);
Var logistic(const Var& a);
Var reciprocal(const Var& a);
Var softplus(const Var& a, double beta);
Var clamp(const Var& a, double lo, double hi);
Var sum(const Var& a);

// Mixed forms with a constant left or right operand.
inline Matrix matmul_const(const Matrix& c, const Matrix& x) { return c * x; }
Var matmul_const(const Matrix& c, const Var& x);
inline Matrix mul_const(const Matrix& x, const Matrix& c) { return x.cwiseProduct(c); }
Var mul_const(const Var& x, const Matrix& c);
inline Matrix add_const(const Matrix& x, const Matrix& c) { return x + c; }
Var add_const(const Var& x, const Matrix& c);

template <class T>
T mean(const T& a) {
  return scale(sum(a), 1.0 / static_cast<double>(value(a).size()));
}

}  // namespace ops
}  // namespace lgc
