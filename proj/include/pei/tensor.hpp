// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace pei {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class AutogradError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OpKind {
  leaf,
  matmul,
  add,
  multiply,
  scale,
  concat,
  slice,
  transpose,
  softmax_rows,
  layer_norm,
  gelu,
  embedding_gather,
  mean,
  sum,
  cross_entropy_from_logits,
  sigmoid,
  binary_cross_entropy,
  bce_with_logits,
};

std::string_view op_name(OpKind kind);
/// Throws std::invalid_argument for tags outside the catalogue.
OpKind op_from_name(std::string_view name);

struct Node;
class GradientBuffers;

using BackwardFn = std::function<void(const Node& self, std::span<const double> grad_out,
                                      GradientBuffers& buffers)>;

struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  OpKind op = OpKind::leaf;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  // Accumulated gradient of a leaf; empty when absent.
  std::vector<double> grad;
  std::uint64_t id = 0;
};

/// Handle to a node of the computation graph. Copies share the node.
class Tensor {
 public:
  Tensor();
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  std::span<const double> data() const { return node_->data; }
  /// Mutable access; only meaningful for leaves (parameters and inputs).
  std::span<double> mutable_data() { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool value);
  bool is_leaf() const { return node_->op == OpKind::leaf; }
  OpKind op() const { return node_->op; }
  std::uint64_t id() const { return node_->id; }

  /// Leaf gradient accumulated via accumulate_gradients(); nullopt before any.
  std::optional<std::span<const double>> grad() const;
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

  /// Same values, no recorded history.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  bool defined() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Gradients of the requires_grad leaves reached by one backward pass,
/// keyed by node id.
class Gradients {
 public:
  const std::vector<double>* find(const Tensor& leaf) const;
  /// Zero vector if the leaf was not reached.
  std::vector<double> of(const Tensor& leaf) const;
  std::size_t size() const { return grads_.size(); }
  auto begin() const { return grads_.begin(); }
  auto end() const { return grads_.end(); }

 private:
  friend class GradientBuffers;
  friend Gradients backward(const Tensor& root);
  std::unordered_map<std::uint64_t, std::vector<double>> grads_;
};

/// Per-backward scratch storage handed to each node's backward function.
class GradientBuffers {
 public:
  /// Zero-initialised on first access.
  std::vector<double>& of(const Node& node);
  bool has(const Node& node) const;
  std::vector<double> take(const Node& node);

 private:
  std::unordered_map<const Node*, std::vector<double>> buffers_;
};

/// Topologically ordered list of the recorded operations behind a root.
struct ComputationRecord {
  std::vector<const Node*> order;  // inputs precede their consumers
  static ComputationRecord of(const Tensor& root);
};

/// Reverse-mode pass from a scalar root; returns gradients for every
/// requires_grad leaf reachable from it. Parameters are not mutated.
Gradients backward(const Tensor& root);

/// Adds each gradient into the matching leaf's grad buffer.
void accumulate_gradients(std::span<Tensor> leaves, const Gradients& grads);

// ---- op catalogue --------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// Same shape, or b a row vector ({n} or {1, n}) broadcast over the rows of a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor multiply(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layer_norm(const Tensor& a, std::size_t axis, double eps = 1e-5);
Tensor gelu(const Tensor& a);
Tensor embedding_gather(const Tensor& table, std::span<const std::size_t> ids);
Tensor mean(const Tensor& a);
Tensor sum(const Tensor& a);
/// Mean cross entropy of rows of logits ({C} or {N, C}) against labels.
Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const std::size_t> labels);
Tensor sigmoid(const Tensor& a);
/// Mean binary cross entropy of probabilities against 0/1 targets.
Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> targets);
Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets);

struct OpAttrs {
  std::size_t axis = 0;
  std::size_t start = 0;
  std::size_t length = 0;
  double eps = 1e-5;
  double factor = 1.0;
  std::vector<std::size_t> indices;  // embedding ids or class labels
  std::vector<double> targets;
};

/// Tag-dispatched entry point over the catalogue above.
Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});
Tensor apply(std::string_view kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

// ---- finite differences ------------------------------------------------

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const ScalarFn& fn, const Tensor& point, double eps = 1e-5);

/// Same measure against a caller-supplied analytic gradient.
double gradient_error(std::span<const double> analytic, const ScalarFn& fn, const Tensor& point,
                      double eps = 1e-5);

/// Central-difference gradient of fn at point (no autograd involved).
std::vector<double> numeric_gradient(const ScalarFn& fn, const Tensor& point, double eps);

}  // namespace pei
