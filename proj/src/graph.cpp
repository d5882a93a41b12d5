#include "lgc/graph.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

namespace lgc {

Graph::Graph(std::size_t n_agents) : n_(n_agents) {
  if (n_agents == 0) throw std::invalid_argument("graph needs at least one agent");
}

void Graph::add_edge(std::size_t i, std::size_t j, double weight) {
  if (i >= n_ || j >= n_) throw std::out_of_range("edge endpoint out of range");
  if (i == j) throw std::invalid_argument("self loops are not allowed");
  if (!(weight > 0.0) || !std::isfinite(weight)) {
    throw std::invalid_argument("edge weights must be positive and finite");
  }
  if (i > j) std::swap(i, j);
  for (auto& e : edges_) {
    if (e.i == i && e.j == j) {
      e.weight = weight;
      return;
    }
  }
  edges_.push_back({i, j, weight});
}

bool Graph::has_edge(std::size_t i, std::size_t j) const {
  if (i > j) std::swap(i, j);
  return std::any_of(edges_.begin(), edges_.end(),
                     [&](const Edge& e) { return e.i == i && e.j == j; });
}

Matrix Graph::adjacency() const {
  Matrix a = Matrix::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
  for (const auto& e : edges_) {
    a(e.i, e.j) = e.weight;
    a(e.j, e.i) = e.weight;
  }
  return a;
}

nlohmann::json Graph::to_json() const {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : edges_) edges.push_back({e.i, e.j, e.weight});
  return {{"n", n_}, {"edges", edges}};
}

Graph Graph::from_json(const nlohmann::json& doc) {
  const auto n = doc.at("n").get<long long>();
  if (n <= 0) throw std::invalid_argument("graph document: n must be positive");
  Graph g(static_cast<std::size_t>(n));
  for (const auto& e : doc.at("edges")) {
    if (!e.is_array() || e.size() != 3) {
      throw std::invalid_argument("graph document: edges must be [i, j, w] triples");
    }
    const auto i = e[0].get<long long>();
    const auto j = e[1].get<long long>();
    const double w = e[2].get<double>();
    if (i < 0 || j < 0) throw std::out_of_range("graph document: negative vertex index");
    if (w < 0.0) throw std::invalid_argument("graph document: negative edge weight");
    if (w == 0.0) continue;
    g.add_edge(static_cast<std::size_t>(i), static_cast<std::size_t>(j), w);
  }
  return g;
}

std::string to_string(SupportKind kind) {
  switch (kind) {
    case SupportKind::Adjacency: return "adjacency";
    case SupportKind::Laplacian: return "laplacian";
    case SupportKind::NormalizedLaplacian: return "normalized_laplacian";
  }
  return "unknown";
}

SupportKind support_kind_from_string(const std::string& name) {
  if (name == "adjacency") return SupportKind::Adjacency;
  if (name == "laplacian") return SupportKind::Laplacian;
  if (name == "normalized_laplacian") return SupportKind::NormalizedLaplacian;
  throw std::invalid_argument("unknown support kind: " + name);
}

SupportMatrix::SupportMatrix(SupportKind kind, Matrix shift, int filter_length)
    : kind_(kind), shift_(std::move(shift)) {
  if (filter_length < 0) throw std::invalid_argument("filter length K must be >= 0");
  if (shift_.rows() != shift_.cols()) throw DimensionError("support matrix must be square");
  powers_.reserve(static_cast<std::size_t>(filter_length) + 1);
  powers_.push_back(Matrix::Identity(shift_.rows(), shift_.cols()));
  for (int k = 1; k <= filter_length; ++k) powers_.push_back(powers_.back() * shift_);
}

const Matrix& SupportMatrix::power(int k) const {
  if (k < 0 || k > filter_length()) throw std::out_of_range("support power out of range");
  return powers_[static_cast<std::size_t>(k)];
}

SupportMatrix build_support(const Graph& graph, SupportKind kind, int filter_length) {
  if (filter_length < 0) throw std::invalid_argument("filter length K must be >= 0");
  for (const auto& e : graph.edges()) {
    if (e.weight < 0.0) throw std::invalid_argument("negative edge weight");
  }
  const Matrix a = graph.adjacency();
  if (kind == SupportKind::Adjacency) return SupportMatrix(kind, a, filter_length);

  const Vector degree = a.rowwise().sum();
  Matrix laplacian = -a;
  laplacian.diagonal() += degree;
  if (kind == SupportKind::Laplacian) return SupportMatrix(kind, laplacian, filter_length);

  // D^{-1/2} (D - A) D^{-1/2}; isolated nodes keep a zero row and column.
  Vector inv_sqrt = Vector::Zero(degree.size());
  for (Eigen::Index i = 0; i < degree.size(); ++i) {
    if (degree(i) > 0.0) inv_sqrt(i) = 1.0 / std::sqrt(degree(i));
  }
  Matrix normalized = inv_sqrt.asDiagonal() * laplacian * inv_sqrt.asDiagonal();
  return SupportMatrix(kind, normalized, filter_length);
}

GraphSignal apply_shift(const SupportMatrix& support, const GraphSignal& x) {
  if (static_cast<std::size_t>(x.rows()) != support.size()) {
    throw DimensionError("apply_shift: signal rows do not match support size");
  }
  return support.matrix() * x;
}

CommMask CommMask::leading(std::size_t features, std::size_t shared) {
  std::vector<bool> bits(features, false);
  for (std::size_t f = 0; f < std::min(features, shared); ++f) bits[f] = true;
  return CommMask(std::move(bits));
}

bool CommMask::is_full() const {
  return std::all_of(bits_.begin(), bits_.end(), [](bool b) { return b; });
}

std::size_t CommMask::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), true));
}

Matrix CommMask::column_mask(std::size_t rows) const {
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(bits_.size()));
  for (std::size_t f = 0; f < bits_.size(); ++f) {
    m.col(static_cast<Eigen::Index>(f)).setConstant(bits_[f] ? 1.0 : 0.0);
  }
  return m;
}

FilterBank make_filter_bank(std::vector<Matrix> taps) {
  if (taps.empty()) throw std::invalid_argument("filter bank needs at least one tap");
  for (const auto& t : taps) {
    if (t.rows() != taps.front().rows() || t.cols() != taps.front().cols()) {
      throw DimensionError("filter bank taps must share a shape");
    }
  }
  return FilterBank{std::move(taps)};
}

namespace {

void check_filter(const SupportMatrix& support, const GraphSignal& x, const FilterBank& bank) {
  if (static_cast<std::size_t>(x.rows()) != support.size()) {
    throw DimensionError("graph filter: signal rows do not match support size");
  }
  if (bank.filter_length() != support.filter_length()) {
    throw DimensionError("graph filter: bank must have K+1 taps");
  }
  for (const auto& t : bank.taps) {
    if (t.rows() != x.cols()) throw DimensionError("graph filter: tap rows must equal feature count");
    if (t.cols() != bank.taps.front().cols()) throw DimensionError("graph filter: ragged taps");
  }
}

}  // namespace

GraphSignal graph_filter(const SupportMatrix& support, const GraphSignal& x, const FilterBank& bank) {
  check_filter(support, x, bank);
  GraphSignal out = x * bank.taps[0];
  GraphSignal shifted = x;
  for (std::size_t k = 1; k < bank.taps.size(); ++k) {
    shifted = support.matrix() * shifted;  // one more 1-hop exchange
    out += shifted * bank.taps[k];
  }
  return out;
}

GraphSignal reduced_graph_filter(const SupportMatrix& support, const GraphSignal& x,
                                 const FilterBank& bank, const CommMask& mask) {
  check_filter(support, x, bank);
  if (mask.size() != static_cast<std::size_t>(x.cols())) {
    throw DimensionError("reduced graph filter: mask length must equal feature count");
  }
  const Matrix keep = mask.column_mask(static_cast<std::size_t>(x.rows()));
  const GraphSignal shared = x.cwiseProduct(keep);
  const GraphSignal local = x - shared;

  GraphSignal out = x * bank.taps[0];
  GraphSignal shifted = shared;
  for (std::size_t k = 1; k < bank.taps.size(); ++k) {
    shifted = support.matrix() * shifted;
    out += (shifted + local) * bank.taps[k];
  }
  return out;
}

Matrix filter_kronecker(const SupportMatrix& support, const std::vector<Matrix>& taps,
                        const CommMask& mask, int first_tap) {
  if (taps.empty()) throw std::invalid_argument("filter_kronecker: no taps");
  const Eigen::Index n = static_cast<Eigen::Index>(support.size());
  const Eigen::Index g_in = taps.front().rows();
  const Eigen::Index f_out = taps.front().cols();
  if (mask.size() != static_cast<std::size_t>(g_in)) {
    throw DimensionError("filter_kronecker: mask length must equal tap rows");
  }
  if (first_tap < 0 || first_tap + static_cast<int>(taps.size()) - 1 > support.filter_length()) {
    throw DimensionError("filter_kronecker: taps exceed support filter length");
  }
  const Matrix identity = Matrix::Identity(n, n);
  Matrix out = Matrix::Zero(n * f_out, n * g_in);
  for (std::size_t t = 0; t < taps.size(); ++t) {
    const int k = first_tap + static_cast<int>(t);
    const Matrix& h = taps[t];
    if (h.rows() != g_in || h.cols() != f_out) throw DimensionError("filter_kronecker: ragged taps");
    for (Eigen::Index g = 0; g < g_in; ++g) {
      const Matrix& shift = (k == 0 || mask[static_cast<std::size_t>(g)]) ? support.power(k) : identity;
      for (Eigen::Index f = 0; f < f_out; ++f) {
        if (h(g, f) == 0.0) continue;
        out.block(f * n, g * n, n, n) += h(g, f) * shift;
      }
    }
  }
  return out;
}

Vector vectorize(const Matrix& x) {
  return Eigen::Map<const Vector>(x.data(), x.size());
}

Matrix unvectorize(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) throw DimensionError("unvectorize: size mismatch");
  return Eigen::Map<const Matrix>(v.data(), rows, cols);
}

}  // namespace lgc
