#include "ocl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>
#include <utility>

namespace ocl {

using detail::Node;
using detail::NodePtr;

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

NodePtr make_leaf(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_to_string(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

Tensor make_result(Shape shape, std::vector<Scalar> values, std::vector<NodePtr> parents,
                   const char* op, detail::BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->op = op;
  n->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(fn);
  }
  return Tensor(std::move(n));
}

void accumulate(std::vector<Scalar>* dst, std::size_t i, Scalar v) {
  if (dst) (*dst)[i] += v;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor() : node_(make_leaf({0}, {}, false)) {}

Tensor::Tensor(NodePtr node) : node_(std::move(node)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
  return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(make_leaf(std::move(shape), std::vector<Scalar>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<Scalar>> rows,
                      bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<Scalar> v;
  v.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    v.insert(v.end(), row.begin(), row.end());
  }
  return from({r, c}, std::move(v), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<Scalar> values, bool requires_grad) {
  return from({values.size()}, std::vector<Scalar>(values), requires_grad);
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.empty()) return 1;
  return s.size() == 1 ? 1 : s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.empty()) return 1;
  return s.back();
}

std::span<const Scalar> Tensor::data() const { return node_->value; }
std::span<Scalar> Tensor::mutable_data() { return node_->value; }

Scalar Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_to_string(shape()));
  }
  return node_->value[0];
}

Scalar Tensor::at(std::size_t i) const { return node_->value.at(i); }
Scalar Tensor::at(std::size_t r, std::size_t c) const { return node_->value.at(r * cols() + c); }

bool Tensor::requires_grad() const { return node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const Scalar> Tensor::grad() const { return node_->grad; }
void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }
bool Tensor::is_leaf() const { return node_->parents.empty(); }
const char* Tensor::op_name() const { return node_->op; }

Tensor Tensor::detach() const { return Tensor(make_leaf(shape(), node_->value, false)); }

void Tensor::release_graph() {
  node_->parents.clear();
  node_->backward = nullptr;
}

RowMask RowMask::broadcast(const ColumnMask& mask, std::size_t rows) {
  RowMask m(rows, mask.size());
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(mask.begin(), mask.end(), m.bits.begin() + static_cast<std::ptrdiff_t>(r * mask.size()));
  }
  return m;
}

// ---- Tape ------------------------------------------------------------------

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.requires_grad()) return tape;
  std::unordered_map<const Node*, bool> visited;
  // Iterative post-order DFS: a node is emitted once all parents are emitted.
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited[root.node().get()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const NodePtr& p = node->parents[next++];
      if (p->requires_grad && !visited[p.get()]) {
        visited[p.get()] = true;
        stack.emplace_back(p, 0);
      }
    } else {
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

std::ptrdiff_t Tape::position(const Tensor& t) const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i] == t.node()) return static_cast<std::ptrdiff_t>(i);
  }
  return -1;
}

void Tape::backward() const {
  if (nodes_.empty()) return;
  std::unordered_map<const Node*, std::size_t> index;
  index.reserve(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) index[nodes_[i].get()] = i;

  std::vector<std::vector<Scalar>> pass(nodes_.size());
  pass.back().assign(nodes_.back()->value.size(), 1.0);

  std::vector<std::vector<Scalar>*> parent_grads;
  for (std::size_t k = nodes_.size(); k-- > 0;) {
    const Node& node = *nodes_[k];
    if (pass[k].empty()) continue;
    if (node.backward) {
      parent_grads.assign(node.parents.size(), nullptr);
      for (std::size_t p = 0; p < node.parents.size(); ++p) {
        const Node* parent = node.parents[p].get();
        if (!parent->requires_grad) continue;
        auto& g = pass[index.at(parent)];
        if (g.empty()) g.assign(parent->value.size(), 0.0);
        parent_grads[p] = &g;
      }
      node.backward(node, pass[k], parent_grads);
    }
    auto& acc = nodes_[k]->grad;
    if (acc.empty()) {
      acc = pass[k];
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += pass[k][i];
    }
  }
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward on a tensor that is not connected to any differentiable input");
  }
  Tape::record(loss).backward();
}

// ---- operations -------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_to_string(a.shape()) +
                         " x " + shape_to_string(b.shape()));
  }
  std::vector<Scalar> out(m * n, 0.0);
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    Scalar* row = out.data() + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const Scalar aik = A[i * k + kk];
      if (aik == 0.0) continue;
      const Scalar* brow = B.data() + kk * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aik * brow[j];
    }
  }
  return make_result(
      {m, n}, std::move(out), {a.node(), b.node()}, "matmul",
      [m, k, n](const Node& self, std::span<const Scalar> g, std::span<std::vector<Scalar>*> pg) {
        const auto& A = self.parents[0]->value;
        const auto& B = self.parents[1]->value;
        if (pg[0]) {
          auto& ga = *pg[0];
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) {
              Scalar acc = 0.0;
              for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * B[kk * n + j];
              ga[i * k + kk] += acc;
            }
          }
        }
        if (pg[1]) {
          auto& gb = *pg[1];
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t kk = 0; kk < k; ++kk) {
              const Scalar aik = A[i * k + kk];
              if (aik == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j) gb[kk * n + j] += aik * g[i * n + j];
            }
          }
        }
      });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<Scalar> out(r * c);
  const auto A = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
  return make_result({c, r}, std::move(out), {a.node()}, "transpose",
                     [r, c](const Node&, std::span<const Scalar> g, std::span<std::vector<Scalar>*> pg) {
                       auto& ga = *pg[0];
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<Scalar> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, "add",
                     [](const Node&, std::span<const Scalar> g, std::span<std::vector<Scalar>*> pg) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         accumulate(pg[0], i, g[i]);
                         accumulate(pg[1], i, g[i]);
                       }
                     });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<Scalar> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, "sub",
                     [](const Node&, std::span<const Scalar> g, std::span<std::vector<Scalar>*> pg) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         accumulate(pg[0], i, g[i]);
                         accumulate(pg[1], i, -g[i]);
                       }
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<Scalar> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(a.shape(), std::move(out), {a.node(), b.node()}, "mul",
                     [](const Node& self, std::span<const Scalar> g, std::span<std::vector<Scalar>*> pg) {
                       const auto& A = self.parents[0]->value;
                       const auto& B = self.parents[1]->value;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         accumulate(pg[0], i, g[i] * B[i]);
                         accumulate(pg[1], i, g[i] * A[i]);
                       }
                     });
}

Tensor scale(const Tensor& a, Scalar s) {
  std::vector<Scalar> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_result(a.shape(), std::move(out), {a.node()}, "scale",
                     [s](const Node&, std::span<const Scalar> g, std::span<std::vector<Scalar>*> pg) {
                       for (std::size_t i = 0; i < g.size(); ++i) (*pg[0])[i] += g[i] * s;
                     });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_matrix(x, "add_bias");
  const std::size_t n = x.rows(), m = x.cols();
  if (bias.numel() != m) {
    throw DimensionError("add_bias: bias of shape " + shape_to_string(bias.shape()) +
                         " for input " + shape_to_string(x.shape()));
  }
  std::vector<Scalar> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x.data()[i * m + j] + bias.data()[j];
  return make_result({n, m}, std::move(out), {x.node(), bias.node()}, "add_bias",
                     [n, m](const Node&, std::span<const Scalar> g, std::span<std::vector<Scalar>*> pg) {
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t j = 0; j < m; ++j) {
                           accumulate(pg[0], i * m + j, g[i * m + j]);
                           accumulate(pg[1], j, g[i * m + j]);
                         }
                       }
                     });
}

Tensor relu(const Tensor& x) {
  std::vector<Scalar> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  // Subgradient at 0 is 0.
  return make_result(x.shape(), std::move(out), {x.node()}, "relu",
                     [](const Node& self, std::span<const Scalar> g, std::span<std::vector<Scalar>*> pg) {
                       const auto& X = self.parents[0]->value;
                       for (std::size_t i = 0; i < g.size(); ++i)
                         if (X[i] > 0.0) (*pg[0])[i] += g[i];
                     });
}

Tensor l2_normalize(const Tensor& x, Scalar eps) {
  if (!(eps > 0.0)) throw ContractError("l2_normalize: eps must be positive");
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<Scalar> out(n * d);
  std::vector<Scalar> denom(n);
  const auto X = x.data();
  for (std::size_t i = 0; i < n; ++i) {
    Scalar ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += X[i * d + j] * X[i * d + j];
    denom[i] = std::max(std::sqrt(ss), eps);
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = X[i * d + j] / denom[i];
  }
  return make_result(
      x.shape(), std::move(out), {x.node()}, "l2_normalize",
      [n, d, eps, denom = std::move(denom)](const Node& self, std::span<const Scalar> g,
                                            std::span<std::vector<Scalar>*> pg) {
        const auto& Y = self.value;
        auto& gx = *pg[0];
        for (std::size_t i = 0; i < n; ++i) {
          const Scalar* y = Y.data() + i * d;
          const Scalar* gi = g.data() + i * d;
          if (denom[i] > eps) {
            Scalar dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += y[j] * gi[j];
            for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += (gi[j] - y[j] * dot) / denom[i];
          } else {
            for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += gi[j] / eps;
          }
        }
      });
}

Tensor log_sum_exp(const Tensor& x, const ColumnMask& mask) {
  if (mask.size() != x.cols()) {
    throw DimensionError("log_sum_exp: mask of length " + std::to_string(mask.size()) +
                         " for input " + shape_to_string(x.shape()));
  }
  return log_sum_exp(x, RowMask::broadcast(mask, x.rows()));
}

Tensor log_sum_exp(const Tensor& x, const RowMask& mask) {
  const std::size_t n = x.rows(), c = x.cols();
  if (mask.rows != n || mask.cols != c) {
    throw DimensionError("log_sum_exp: mask shape does not match input " +
                         shape_to_string(x.shape()));
  }
  const auto X = x.data();
  std::vector<Scalar> out(n);
  std::vector<Scalar> probs(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask(i, j)) continue;
      any = true;
      mx = std::max(mx, X[i * c + j]);
    }
    if (!any) throw InvalidMaskError("log_sum_exp: row " + std::to_string(i) + " has no admissible entry");
    Scalar s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (!mask(i, j)) continue;
      const Scalar e = std::exp(X[i * c + j] - mx);
      probs[i * c + j] = e;
      s += e;
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= s;
    out[i] = mx + std::log(s);
  }
  return make_result({n}, std::move(out), {x.node()}, "log_sum_exp",
                     [n, c, probs = std::move(probs)](const Node&, std::span<const Scalar> g,
                                                      std::span<std::vector<Scalar>*> pg) {
                       auto& gx = *pg[0];
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i] * probs[i * c + j];
                     });
}

Tensor sum(const Tensor& x) {
  Scalar s = 0.0;
  for (auto v : x.data()) s += v;
  return make_result({}, {s}, {x.node()}, "sum",
                     [](const Node&, std::span<const Scalar> g, std::span<std::vector<Scalar>*> pg) {
                       for (auto& v : *pg[0]) v += g[0];
                     });
}

Tensor row_sum(const Tensor& x) {
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<Scalar> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += x.data()[i * c + j];
  return make_result({n}, std::move(out), {x.node()}, "row_sum",
                     [n, c](const Node&, std::span<const Scalar> g, std::span<std::vector<Scalar>*> pg) {
                       auto& gx = *pg[0];
                       for (std::size_t i = 0; i < n; ++i)
                         for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[i];
                     });
}

Tensor select_rows(const Tensor& x, std::span<const std::size_t> indices) {
  require_matrix(x, "select_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<Scalar> out(indices.size() * c);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= r) {
      throw DimensionError("select_rows: index " + std::to_string(indices[k]) + " out of " +
                           std::to_string(r) + " rows");
    }
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(indices[k] * c), c,
                out.begin() + static_cast<std::ptrdiff_t>(k * c));
  }
  return make_result({indices.size(), c}, std::move(out), {x.node()}, "select_rows",
                     [c, idx = std::vector<std::size_t>(indices.begin(), indices.end())](
                         const Node&, std::span<const Scalar> g, std::span<std::vector<Scalar>*> pg) {
                       auto& gx = *pg[0];
                       for (std::size_t k = 0; k < idx.size(); ++k)
                         for (std::size_t j = 0; j < c; ++j) gx[idx[k] * c + j] += g[k * c + j];
                     });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != c) throw DimensionError("concat_rows: column counts disagree");
    offsets.push_back(total);
    total += p.rows();
    parents.push_back(p.node());
  }
  std::vector<Scalar> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_result({total, c}, std::move(out), std::move(parents), "concat_rows",
                     [c, offsets](const Node& self, std::span<const Scalar> g,
                                  std::span<std::vector<Scalar>*> pg) {
                       for (std::size_t p = 0; p < pg.size(); ++p) {
                         if (!pg[p]) continue;
                         const std::size_t len = self.parents[p]->value.size();
                         for (std::size_t i = 0; i < len; ++i) (*pg[p])[i] += g[offsets[p] * c + i];
                       }
                     });
}

}  // namespace ocl
