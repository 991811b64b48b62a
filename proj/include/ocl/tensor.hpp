#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations on tensors that
// require gradients record their parents and a backward closure; calling
// backward() on a scalar result orders the reachable graph topologically
// (see Tape) and accumulates gradients into every reachable node.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ocl {

using Scalar = double;
using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class InvalidMaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Gradient routing for one backward pass. `parent_grads[i]` is null when
// parent i does not take part in differentiation.
using BackwardFn = std::function<void(const Node& self, std::span<const Scalar> grad_out,
                                      std::span<std::vector<Scalar>*> parent_grads)>;

struct Node {
  Shape shape;
  std::vector<Scalar> value;
  std::vector<Scalar> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;
  const char* op = "leaf";
};

}  // namespace detail

class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor ones(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Scalar> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows,
                       bool requires_grad = false);
  static Tensor vector(std::initializer_list<Scalar> values, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;
  // Matrix view: a 1-d tensor is a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const Scalar> data() const;
  // Direct write access; used by optimizers and tests. Does not touch the graph.
  std::span<Scalar> mutable_data();
  Scalar item() const;
  Scalar at(std::size_t i) const;
  Scalar at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const Scalar> grad() const;
  void zero_grad();

  bool is_leaf() const;
  const char* op_name() const;
  // A new leaf holding a copy of the values, outside any graph.
  Tensor detach() const;
  // Drops the links to parents. Forward values stay valid; gradient paths
  // through this tensor are cut.
  void release_graph();

  bool defined() const { return static_cast<bool>(node_); }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  // Internal: used by op implementations.
  explicit Tensor(detail::NodePtr node);
  const detail::NodePtr& node() const { return node_; }

 private:
  detail::NodePtr node_;
};

// Topologically ordered record of the operations reachable from a root.
// Every node appears after all of its (differentiable) parents.
class Tape {
 public:
  static Tape record(const Tensor& root);

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  // Position of a tensor's node in the record, or -1 if not recorded.
  std::ptrdiff_t position(const Tensor& t) const;
  const char* op_at(std::size_t i) const { return nodes_[i]->op; }
  std::span<const detail::NodePtr> nodes() const { return nodes_; }

  // Runs the reverse sweep seeded with d(root)/d(root) = 1 and accumulates
  // into every recorded node's grad.
  void backward() const;

 private:
  std::vector<detail::NodePtr> nodes_;
};

// Populates grad on every reachable tensor that requires grad. Repeated calls
// accumulate. Throws ContractError for a non-scalar loss or one with no path
// to any differentiable tensor.
void backward(const Tensor& loss);

// 1-d mask over columns, or a per-row mask (rows x cols). Nonzero = admissible.
using ColumnMask = std::vector<std::uint8_t>;

struct RowMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  RowMask() = default;
  RowMask(std::size_t r, std::size_t c, bool init = false)
      : rows(r), cols(c), bits(r * c, init ? 1 : 0) {}
  static RowMask broadcast(const ColumnMask& mask, std::size_t rows);
  bool operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool on = true) { bits[r * cols + c] = on ? 1 : 0; }
};

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar s);
// x[n x m] + bias[m] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);
// Each row divided by max(||row||, eps).
Tensor l2_normalize(const Tensor& x, Scalar eps = 1e-8);
// Row-wise log sum_{j admissible} exp(x_ij); excluded entries contribute no
// mass and receive exactly zero gradient.
Tensor log_sum_exp(const Tensor& x, const ColumnMask& mask);
Tensor log_sum_exp(const Tensor& x, const RowMask& mask);
Tensor sum(const Tensor& x);
Tensor row_sum(const Tensor& x);
// Gathers rows by index; indices may repeat.
Tensor select_rows(const Tensor& x, std::span<const std::size_t> indices);
Tensor concat_rows(std::span<const Tensor> parts);

}  // namespace ocl
