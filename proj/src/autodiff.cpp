#include "lgc/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace lgc {

const Matrix& Var::value() const {
  if (tape == nullptr) throw std::logic_error("Var is not attached to a tape");
  return tape->value(*this);
}

Var Tape::leaf(Matrix value) {
  Node n;
  n.op = OpKind::Leaf;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.op = OpKind::Constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(OpKind op, std::vector<std::size_t> inputs, Matrix value, double a, double b) {
  Node n;
  n.op = op;
  n.a = a;
  n.b = b;
  for (auto id : inputs) n.needs_grad = n.needs_grad || nodes_.at(id).needs_grad;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Tape::custom(std::vector<Var> inputs, Matrix value, CustomBackward backward) {
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (v.tape != this) throw std::invalid_argument("custom op input from another tape");
    ids.push_back(v.id);
  }
  Var out = record(OpKind::Custom, std::move(ids), std::move(value));
  nodes_.back().custom = std::move(backward);
  return out;
}

void Tape::accumulate(std::size_t id, const Matrix& g) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (root.tape != this) throw std::invalid_argument("backward: root from another tape");
  if (value(root).size() != 1) throw std::invalid_argument("backward: root must be a scalar");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  accumulate(root.id, Matrix::Ones(1, 1));

  for (std::size_t idx = root.id + 1; idx-- > 0;) {
    Node& n = nodes_[idx];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    const Matrix g = n.grad;
    const auto& in = n.inputs;
    const auto input = [&](std::size_t k) -> const Matrix& { return nodes_[in[k]].value; };

    switch (n.op) {
      case OpKind::Leaf:
      case OpKind::Constant:
        break;
      case OpKind::Add:
        accumulate(in[0], g);
        accumulate(in[1], g);
        break;
      case OpKind::Sub:
        accumulate(in[0], g);
        accumulate(in[1], -g);
        break;
      case OpKind::Mul:
        accumulate(in[0], g.cwiseProduct(input(1)));
        accumulate(in[1], g.cwiseProduct(input(0)));
        break;
      case OpKind::MatMul:
        if (nodes_[in[0]].needs_grad) accumulate(in[0], g * input(1).transpose());
        if (nodes_[in[1]].needs_grad) accumulate(in[1], input(0).transpose() * g);
        break;
      case OpKind::Scale:
        accumulate(in[0], g * n.a);
        break;
      case OpKind::AddScalar:
        accumulate(in[0], g);
        break;
      case OpKind::AddRow:
        accumulate(in[0], g);
        accumulate(in[1], g.colwise().sum());
        break;
      case OpKind::Relu:
        accumulate(in[0], g.cwiseProduct((input(0).array() > 0.0).cast<double>().matrix()));
        break;
      case OpKind::Tanh:
        accumulate(in[0], g.cwiseProduct((1.0 - n.value.array().square()).matrix()));
        break;
      case OpKind::Logistic:
        accumulate(in[0], g.cwiseProduct((n.value.array() * (1.0 - n.value.array())).matrix()));
        break;
      case OpKind::Reciprocal:
        accumulate(in[0], -g.cwiseProduct(n.value.cwiseProduct(n.value)));
        break;
      case OpKind::Softplus:
        accumulate(in[0], g.cwiseProduct(ops::logistic(input(0) * n.a)));
        break;
      case OpKind::Clamp: {
        const auto& x = input(0).array();
        accumulate(in[0], g.cwiseProduct(((x > n.a) && (x < n.b)).cast<double>().matrix()));
        break;
      }
      case OpKind::Sum:
        accumulate(in[0], Matrix::Constant(input(0).rows(), input(0).cols(), g(0, 0)));
        break;
      case OpKind::Custom: {
        auto grads = n.custom(g);
        if (grads.size() != in.size()) throw std::logic_error("custom backward arity mismatch");
        for (std::size_t k = 0; k < in.size(); ++k) accumulate(in[k], grads[k]);
        break;
      }
    }
  }
}

namespace ops {

namespace {

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape == nullptr || a.tape != b.tape) throw std::invalid_argument("operands on different tapes");
  return *a.tape;
}

void same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError(std::string(what) + ": shape mismatch");
}

}  // namespace

Matrix logistic(const Matrix& a) {
  return a.unaryExpr([](double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  });
}

Matrix softplus(const Matrix& a, double beta) {
  return a.unaryExpr([beta](double z) {
    const double t = beta * z;
    // log(1 + e^t) = max(t, 0) + log1p(e^{-|t|})
    return (std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)))) / beta;
  });
}

Var constant_like(const Var& like, Matrix m) { return like.tape->constant(std::move(m)); }

Var add(const Var& a, const Var& b) {
  same_shape(a.value(), b.value(), "add");
  return tape_of(a, b).record(OpKind::Add, {a.id, b.id}, a.value() + b.value());
}

Var sub(const Var& a, const Var& b) {
  same_shape(a.value(), b.value(), "sub");
  return tape_of(a, b).record(OpKind::Sub, {a.id, b.id}, a.value() - b.value());
}

Var mul(const Var& a, const Var& b) {
  same_shape(a.value(), b.value(), "mul");
  return tape_of(a, b).record(OpKind::Mul, {a.id, b.id}, a.value().cwiseProduct(b.value()));
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  return tape_of(a, b).record(OpKind::MatMul, {a.id, b.id}, a.value() * b.value());
}

Var scale(const Var& a, double s) { return a.tape->record(OpKind::Scale, {a.id}, a.value() * s, s); }

Var add_scalar(const Var& a, double s) {
  return a.tape->record(OpKind::AddScalar, {a.id}, (a.value().array() + s).matrix(), s);
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError("add_row: bias must be 1 x cols");
  return tape_of(a, row).record(OpKind::AddRow, {a.id, row.id}, add_row(a.value(), row.value()));
}

Var relu(const Var& a) { return a.tape->record(OpKind::Relu, {a.id}, relu(a.value())); }
Var tanh(const Var& a) { return a.tape->record(OpKind::Tanh, {a.id}, tanh(a.value())); }
Var logistic(const Var& a) { return a.tape->record(OpKind::Logistic, {a.id}, logistic(a.value())); }
Var reciprocal(const Var& a) { return a.tape->record(OpKind::Reciprocal, {a.id}, reciprocal(a.value())); }

Var softplus(const Var& a, double beta) {
  return a.tape->record(OpKind::Softplus, {a.id}, softplus(a.value(), beta), beta);
}

Var clamp(const Var& a, double lo, double hi) {
  return a.tape->record(OpKind::Clamp, {a.id}, clamp(a.value(), lo, hi), lo, hi);
}

Var sum(const Var& a) { return a.tape->record(OpKind::Sum, {a.id}, sum(a.value())); }

Var matmul_const(const Matrix& c, const Var& x) { return matmul(x.tape->constant(c), x); }
Var mul_const(const Var& x, const Matrix& c) { return mul(x, x.tape->constant(c)); }
Var add_const(const Var& x, const Matrix& c) { return add(x, x.tape->constant(c)); }

}  // namespace ops
}  // namespace lgc
