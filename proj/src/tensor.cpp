// SPDX-License-Identifier: Apache-2.0
#include "pei/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <sstream>

namespace pei {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::atomic<std::uint64_t> g_next_id{1};

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> data, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

// Builds an op result; history is kept only when some input needs gradients.
Tensor make_result(OpKind op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Tensor* t : inputs) needs = needs || t->requires_grad();
  auto node = new_node(std::move(shape), std::move(data), needs);
  node->op = op;
  if (needs) {
    for (const Tensor* t : inputs) node->inputs.push_back(t->node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(OpKind op, Shape shape, std::vector<double> data,
                     std::span<const Tensor> inputs, BackwardFn fn) {
  bool needs = false;
  for (const Tensor& t : inputs) needs = needs || t.requires_grad();
  auto node = new_node(std::move(shape), std::move(data), needs);
  node->op = op;
  if (needs) {
    for (const Tensor& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

bool wants(const Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

void require_rank2(const Tensor& t, std::string_view op, std::string_view arg) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": " + std::string(arg) + " must be rank 2, got " +
                     shape_str(t.shape()));
  }
}

bool is_row_vector_for(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2) return false;
  const Shape& s = b.shape();
  if (s.size() == 1) return s[0] == a.shape()[1];
  if (s.size() == 2) return s[0] == 1 && s[1] == a.shape()[1] && a.shape()[0] != 1;
  return false;
}

// View of a shape as (outer, axis extent, inner) around one axis.
struct AxisView {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

std::size_t last_dim(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape().back(); }

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::multiply: return "multiply";
    case OpKind::scale: return "scale";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::transpose: return "transpose";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::layer_norm: return "layer_norm";
    case OpKind::gelu: return "gelu";
    case OpKind::embedding_gather: return "embedding_gather";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
    case OpKind::cross_entropy_from_logits: return "cross_entropy_from_logits";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::binary_cross_entropy: return "binary_cross_entropy";
    case OpKind::bce_with_logits: return "bce_with_logits";
  }
  return "unknown";
}

OpKind op_from_name(std::string_view name) {
  static constexpr OpKind kAll[] = {
      OpKind::matmul,       OpKind::add,        OpKind::multiply,
      OpKind::scale,        OpKind::concat,     OpKind::slice,
      OpKind::transpose,    OpKind::softmax_rows, OpKind::layer_norm,
      OpKind::gelu,         OpKind::embedding_gather, OpKind::mean,
      OpKind::sum,          OpKind::cross_entropy_from_logits, OpKind::sigmoid,
      OpKind::binary_cross_entropy, OpKind::bce_with_logits};
  for (OpKind k : kAll) {
    if (op_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown op tag '" + std::string(name) + "'");
}

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor() : node_(new_node({}, {0.0}, false)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_size(shape) != data.size()) {
    throw ShapeError("Tensor::from: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  return Tensor(new_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(new_node({}, {value}, requires_grad));
}

std::size_t Tensor::rows() const {
  return rank() == 2 ? node_->shape[0] : 1;
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return node_->shape[1];
  if (rank() == 1) return node_->shape[0];
  return 1;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
  }
  return node_->data[0];
}

void Tensor::set_requires_grad(bool value) {
  if (!is_leaf()) throw AutogradError("set_requires_grad: only leaves can change this flag");
  node_->requires_grad = value;
}

std::optional<std::span<const double>> Tensor::grad() const {
  if (node_->grad.empty()) return std::nullopt;
  return std::span<const double>(node_->grad);
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != size()) {
    throw ShapeError("accumulate_grad: gradient has " + std::to_string(g.size()) +
                     " values for tensor " + shape_str(shape()));
  }
  if (node_->grad.empty()) node_->grad.assign(size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) node_->grad[i] += g[i];
}

Tensor Tensor::detach() const { return Tensor(new_node(shape(), node_->data, false)); }

Tensor Tensor::clone() const {
  return Tensor(new_node(shape(), node_->data, node_->requires_grad && is_leaf()));
}

// ---- gradients -------------------------------------------------------------

const std::vector<double>* Gradients::find(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  return it == grads_.end() ? nullptr : &it->second;
}

std::vector<double> Gradients::of(const Tensor& leaf) const {
  if (const auto* g = find(leaf)) return *g;
  return std::vector<double>(leaf.size(), 0.0);
}

std::vector<double>& GradientBuffers::of(const Node& node) {
  auto [it, inserted] = buffers_.try_emplace(&node);
  if (inserted) it->second.assign(node.data.size(), 0.0);
  return it->second;
}

bool GradientBuffers::has(const Node& node) const { return buffers_.count(&node) > 0; }

std::vector<double> GradientBuffers::take(const Node& node) {
  auto it = buffers_.find(&node);
  if (it == buffers_.end()) return {};
  std::vector<double> out = std::move(it->second);
  buffers_.erase(it);
  return out;
}

ComputationRecord ComputationRecord::of(const Tensor& root) {
  ComputationRecord rec;
  if (!root.requires_grad()) return rec;
  std::unordered_map<const Node*, bool> visited;
  // Iterative post-order DFS; (node, next input index).
  std::vector<std::pair<const Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited[root.node().get()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      const Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited[child]) {
        visited[child] = true;
        stack.emplace_back(child, 0);
      }
    } else {
      rec.order.push_back(node);
      stack.pop_back();
    }
  }
  return rec;
}

Gradients backward(const Tensor& root) {
  if (root.size() != 1) {
    throw AutogradError("backward: root must be a scalar, got shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) {
    throw AutogradError("backward: root is detached (no recorded operation requires grad)");
  }
  const ComputationRecord rec = ComputationRecord::of(root);
  GradientBuffers buffers;
  buffers.of(*root.node())[0] = 1.0;
  Gradients out;
  for (auto it = rec.order.rbegin(); it != rec.order.rend(); ++it) {
    const Node& node = **it;
    if (!buffers.has(node)) continue;
    std::vector<double> g = buffers.take(node);
    if (node.op == OpKind::leaf) {
      out.grads_[node.id] = std::move(g);
    } else {
      node.backward(node, g, buffers);
    }
  }
  return out;
}

void accumulate_gradients(std::span<Tensor> leaves, const Gradients& grads) {
  for (Tensor& leaf : leaves) {
    if (const auto* g = grads.find(leaf)) leaf.accumulate_grad(*g);
  }
}

// ---- ops -----------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul", "lhs");
  require_rank2(b, "matmul", "rhs");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner dimensions differ (lhs cols " + std::to_string(k) +
                     " vs rhs rows " + std::to_string(b.shape()[0]) + ")");
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return make_result(OpKind::matmul, {m, n}, std::move(out), {&a, &b},
                     [m, k, n](const Node& self, std::span<const double> g, GradientBuffers& buf) {
                       ConstMap G(g.data(), m, n);
                       const Node& A = *self.inputs[0];
                       const Node& B = *self.inputs[1];
                       if (wants(self, 0)) {
                         MutMap(buf.of(A).data(), m, k).noalias() +=
                             G * ConstMap(B.data.data(), k, n).transpose();
                       }
                       if (wants(self, 1)) {
                         MutMap(buf.of(B).data(), k, n).noalias() +=
                             ConstMap(A.data.data(), m, k).transpose() * G;
                       }
                     });
}

namespace {

enum class Binary { add, multiply };

Tensor binary_op(const Tensor& a, const Tensor& b, Binary kind) {
  const char* name = kind == Binary::add ? "add" : "multiply";
  const OpKind op = kind == Binary::add ? OpKind::add : OpKind::multiply;
  const bool broadcast = a.shape() != b.shape();
  if (broadcast && !is_row_vector_for(a, b)) {
    throw ShapeError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ and rhs is not a row vector of width " +
                     std::to_string(a.cols()));
  }
  const std::size_t n = a.size();
  const std::size_t width = broadcast ? b.size() : n;
  std::vector<double> out(n);
  const double* ad = a.data().data();
  const double* bd = b.data().data();
  for (std::size_t r = 0; width > 0 && r < n; r += width) {
    double* o = out.data() + r;
    const double* x = ad + r;
    const double* y = broadcast ? bd : bd + r;
    if (kind == Binary::add) {
      for (std::size_t j = 0; j < width; ++j) o[j] = x[j] + y[j];
    } else {
      for (std::size_t j = 0; j < width; ++j) o[j] = x[j] * y[j];
    }
  }
  return make_result(op, a.shape(), std::move(out), {&a, &b},
                     [kind, broadcast, n, width](const Node& self, std::span<const double> g,
                                                 GradientBuffers& buf) {
                       const Node& A = *self.inputs[0];
                       const Node& B = *self.inputs[1];
                       if (wants(self, 0)) {
                         double* ga = buf.of(A).data();
                         if (kind == Binary::add) {
                           for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
                         } else {
                           for (std::size_t r = 0; width > 0 && r < n; r += width) {
                             const double* y = broadcast ? B.data.data() : B.data.data() + r;
                             for (std::size_t j = 0; j < width; ++j) ga[r + j] += g[r + j] * y[j];
                           }
                         }
                       }
                       if (wants(self, 1)) {
                         double* gb = buf.of(B).data();
                         for (std::size_t r = 0; width > 0 && r < n; r += width) {
                           double* t = broadcast ? gb : gb + r;
                           if (kind == Binary::add) {
                             for (std::size_t j = 0; j < width; ++j) t[j] += g[r + j];
                           } else {
                             const double* x = A.data.data() + r;
                             for (std::size_t j = 0; j < width; ++j) t[j] += g[r + j] * x[j];
                           }
                         }
                       }
                     });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::add); }

Tensor multiply(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::multiply); }

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= factor;
  return make_result(OpKind::scale, a.shape(), std::move(out), {&a},
                     [factor](const Node& self, std::span<const double> g, GradientBuffers& buf) {
                       auto& ga = buf.of(*self.inputs[0]);
                       for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
                     });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(first.size()));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: inputs differ in rank");
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw ShapeError("concat: dimension " + std::to_string(d) + " differs (" +
                         std::to_string(s[d]) + " vs " + std::to_string(first[d]) + ")");
      }
    }
    out_shape[axis] += s[axis];
  }
  const AxisView ov = axis_view(out_shape, axis);
  std::vector<double> out(shape_size(out_shape));
  std::vector<std::size_t> extents;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t e = p.shape()[axis];
    const auto pd = p.data();
    for (std::size_t o = 0; o < ov.outer; ++o) {
      std::copy_n(pd.begin() + static_cast<std::ptrdiff_t>(o * e * ov.inner), e * ov.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * ov.extent + offset) * ov.inner));
    }
    extents.push_back(e);
    offset += e;
  }
  return make_result_n(OpKind::concat, out_shape, std::move(out), parts,
                       [ov, extents](const Node& self, std::span<const double> g,
                                     GradientBuffers& buf) {
                         std::size_t off = 0;
                         for (std::size_t p = 0; p < extents.size(); ++p) {
                           const std::size_t e = extents[p];
                           if (wants(self, p)) {
                             auto& gp = buf.of(*self.inputs[p]);
                             for (std::size_t o = 0; o < ov.outer; ++o) {
                               const double* src = g.data() + (o * ov.extent + off) * ov.inner;
                               double* dst = gp.data() + o * e * ov.inner;
                               for (std::size_t i = 0; i < e * ov.inner; ++i) dst[i] += src[i];
                             }
                           }
                           off += e;
                         }
                       });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= a.rank()) {
    throw ShapeError("slice: axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(a.rank()));
  }
  if (start + length > a.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") exceeds axis " + std::to_string(axis) +
                     " extent " + std::to_string(a.shape()[axis]));
  }
  const AxisView iv = axis_view(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<double> out(shape_size(out_shape));
  const auto ad = a.data();
  for (std::size_t o = 0; o < iv.outer; ++o) {
    std::copy_n(ad.begin() + static_cast<std::ptrdiff_t>((o * iv.extent + start) * iv.inner),
                length * iv.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * iv.inner));
  }
  return make_result(OpKind::slice, out_shape, std::move(out), {&a},
                     [iv, start, length](const Node& self, std::span<const double> g,
                                         GradientBuffers& buf) {
                       auto& ga = buf.of(*self.inputs[0]);
                       for (std::size_t o = 0; o < iv.outer; ++o) {
                         const double* src = g.data() + o * length * iv.inner;
                         double* dst = ga.data() + (o * iv.extent + start) * iv.inner;
                         for (std::size_t i = 0; i < length * iv.inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose", "input");
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(r * c);
  MutMap(out.data(), c, r) = ConstMap(a.data().data(), r, c).transpose();
  return make_result(OpKind::transpose, {c, r}, std::move(out), {&a},
                     [r, c](const Node& self, std::span<const double> g, GradientBuffers& buf) {
                       MutMap(buf.of(*self.inputs[0]).data(), r, c) +=
                           ConstMap(g.data(), c, r).transpose();
                     });
}

Tensor softmax_rows(const Tensor& a) {
  if (a.rank() == 0 || a.rank() > 2) {
    throw ShapeError("softmax_rows: expected rank 1 or 2, got " + shape_str(a.shape()));
  }
  const std::size_t c = last_dim(a);
  const std::size_t r = a.size() / c;
  std::vector<double> out(a.size());
  const auto ad = a.data();
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = ad.data() + i * c;
    double* y = out.data() + i * c;
    const double mx = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) y[j] /= z;
  }
  return make_result(OpKind::softmax_rows, a.shape(), std::move(out), {&a},
                     [r, c](const Node& self, std::span<const double> g, GradientBuffers& buf) {
                       auto& ga = buf.of(*self.inputs[0]);
                       for (std::size_t i = 0; i < r; ++i) {
                         const double* y = self.data.data() + i * c;
                         const double* gy = g.data() + i * c;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j) dot += gy[j] * y[j];
                         for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[j] * (gy[j] - dot);
                       }
                     });
}

Tensor layer_norm(const Tensor& a, std::size_t axis, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  if (axis >= a.rank()) {
    throw ShapeError("layer_norm: axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(a.shape()));
  }
  const AxisView v = axis_view(a.shape(), axis);
  std::vector<double> out(a.size());
  std::vector<double> inv_std(v.outer * v.inner);
  const auto ad = a.data();
  const double n = static_cast<double>(v.extent);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      double mu = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) mu += ad[base + e * v.inner];
      mu /= n;
      double var = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        const double d = ad[base + e * v.inner] - mu;
        var += d * d;
      }
      var /= n;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[o * v.inner + in] = is;
      for (std::size_t e = 0; e < v.extent; ++e) {
        out[base + e * v.inner] = (ad[base + e * v.inner] - mu) * is;
      }
    }
  }
  return make_result(
      OpKind::layer_norm, a.shape(), std::move(out), {&a},
      [v, inv_std = std::move(inv_std)](const Node& self, std::span<const double> g,
                                        GradientBuffers& buf) {
        auto& ga = buf.of(*self.inputs[0]);
        const double n = static_cast<double>(v.extent);
        for (std::size_t o = 0; o < v.outer; ++o) {
          for (std::size_t in = 0; in < v.inner; ++in) {
            const std::size_t base = o * v.extent * v.inner + in;
            double gm = 0.0, gx = 0.0;
            for (std::size_t e = 0; e < v.extent; ++e) {
              const std::size_t k = base + e * v.inner;
              gm += g[k];
              gx += g[k] * self.data[k];
            }
            gm /= n;
            gx /= n;
            const double is = inv_std[o * v.inner + in];
            for (std::size_t e = 0; e < v.extent; ++e) {
              const std::size_t k = base + e * v.inner;
              ga[k] += is * (g[k] - gm - self.data[k] * gx);
            }
          }
        }
      });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5 * ad[i] * (1.0 + std::erf(ad[i] * std::numbers::sqrt2 / 2.0));
  }
  return make_result(OpKind::gelu, a.shape(), std::move(out), {&a},
                     [](const Node& self, std::span<const double> g, GradientBuffers& buf) {
                       const Node& A = *self.inputs[0];
                       auto& ga = buf.of(A);
                       const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double x = A.data[i];
                         const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
                         const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                         ga[i] += g[i] * (cdf + x * pdf);
                       }
                     });
}

Tensor embedding_gather(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank2(table, "embedding_gather", "table");
  const std::size_t vocab = table.shape()[0], d = table.shape()[1];
  std::vector<double> out(ids.size() * d);
  const auto td = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab) {
      throw std::out_of_range("embedding_gather: id " + std::to_string(ids[i]) +
                              " >= table rows " + std::to_string(vocab));
    }
    std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return make_result(OpKind::embedding_gather, {ids.size(), d}, std::move(out), {&table},
                     [idx = std::move(idx), d](const Node& self, std::span<const double> g,
                                               GradientBuffers& buf) {
                       auto& gt = buf.of(*self.inputs[0]);
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t j = 0; j < d; ++j) gt[idx[i] * d + j] += g[i * d + j];
                       }
                     });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result(OpKind::sum, {}, {s}, {&a},
                     [](const Node& self, std::span<const double> g, GradientBuffers& buf) {
                       auto& ga = buf.of(*self.inputs[0]);
                       for (double& v : ga) v += g[0];
                     });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : a.data()) s += v;
  const double n = static_cast<double>(a.size());
  return make_result(OpKind::mean, {}, {s / n}, {&a},
                     [n](const Node& self, std::span<const double> g, GradientBuffers& buf) {
                       auto& ga = buf.of(*self.inputs[0]);
                       for (double& v : ga) v += g[0] / n;
                     });
}

Tensor cross_entropy_from_logits(const Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() == 0 || logits.rank() > 2) {
    throw ShapeError("cross_entropy_from_logits: expected rank 1 or 2 logits, got " +
                     shape_str(logits.shape()));
  }
  const std::size_t c = last_dim(logits);
  const std::size_t r = logits.size() / c;
  if (labels.size() != r) {
    throw ShapeError("cross_entropy_from_logits: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(r) + " rows");
  }
  std::vector<double> probs(logits.size());
  const auto ld = logits.data();
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (labels[i] >= c) {
      throw std::out_of_range("cross_entropy_from_logits: label " + std::to_string(labels[i]) +
                              " >= classes " + std::to_string(c));
    }
    const double* x = ld.data() + i * c;
    const double mx = *std::max_element(x, x + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (probs[i * c + j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss += -(x[labels[i]] - mx - std::log(z));
  }
  loss /= static_cast<double>(r);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return make_result(OpKind::cross_entropy_from_logits, {}, {loss}, {&logits},
                     [probs = std::move(probs), lab = std::move(lab), r, c](
                         const Node& self, std::span<const double> g, GradientBuffers& buf) {
                       auto& gl = buf.of(*self.inputs[0]);
                       const double s = g[0] / static_cast<double>(r);
                       for (std::size_t i = 0; i < r; ++i) {
                         for (std::size_t j = 0; j < c; ++j) {
                           gl[i * c + j] += s * (probs[i * c + j] - (j == lab[i] ? 1.0 : 0.0));
                         }
                       }
                     });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-ad[i]));
  return make_result(OpKind::sigmoid, a.shape(), std::move(out), {&a},
                     [](const Node& self, std::span<const double> g, GradientBuffers& buf) {
                       auto& ga = buf.of(*self.inputs[0]);
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double y = self.data[i];
                         ga[i] += g[i] * y * (1.0 - y);
                       }
                     });
}

namespace {

void check_targets(const Tensor& t, std::span<const double> targets, std::string_view op) {
  if (targets.size() != t.size()) {
    throw ShapeError(std::string(op) + ": " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(t.size()) + " inputs");
  }
  if (t.size() == 0) throw ShapeError(std::string(op) + ": empty input");
}

constexpr double kProbFloor = 1e-12;

}  // namespace

Tensor binary_cross_entropy(const Tensor& probs, std::span<const double> targets) {
  check_targets(probs, targets, "binary_cross_entropy");
  const auto pd = probs.data();
  const double n = static_cast<double>(probs.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double p = std::clamp(pd[i], kProbFloor, 1.0 - kProbFloor);
    loss -= targets[i] * std::log(p) + (1.0 - targets[i]) * std::log(1.0 - p);
  }
  std::vector<double> y(targets.begin(), targets.end());
  return make_result(OpKind::binary_cross_entropy, {}, {loss / n}, {&probs},
                     [y = std::move(y), n](const Node& self, std::span<const double> g,
                                           GradientBuffers& buf) {
                       const Node& P = *self.inputs[0];
                       auto& gp = buf.of(P);
                       for (std::size_t i = 0; i < y.size(); ++i) {
                         const double p = P.data[i];
                         if (p < kProbFloor || p > 1.0 - kProbFloor) continue;
                         gp[i] += g[0] / n * (p - y[i]) / (p * (1.0 - p));
                       }
                     });
}

Tensor bce_with_logits(const Tensor& logits, std::span<const double> targets) {
  check_targets(logits, targets, "bce_with_logits");
  const auto xd = logits.data();
  const double n = static_cast<double>(logits.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const double x = xd[i];
    loss += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  std::vector<double> y(targets.begin(), targets.end());
  return make_result(OpKind::bce_with_logits, {}, {loss / n}, {&logits},
                     [y = std::move(y), n](const Node& self, std::span<const double> g,
                                           GradientBuffers& buf) {
                       const Node& X = *self.inputs[0];
                       auto& gx = buf.of(X);
                       for (std::size_t i = 0; i < y.size(); ++i) {
                         const double s = 1.0 / (1.0 + std::exp(-X.data[i]));
                         gx[i] += g[0] / n * (s - y[i]);
                       }
                     });
}

// ---- dispatcher ------------------------------------------------------------

Tensor apply(OpKind kind, std::span<const Tensor> in, const OpAttrs& attrs) {
  auto arity = [&](std::size_t n) {
    if (in.size() != n) {
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::matmul: arity(2); return matmul(in[0], in[1]);
    case OpKind::add: arity(2); return add(in[0], in[1]);
    case OpKind::multiply: arity(2); return multiply(in[0], in[1]);
    case OpKind::scale: arity(1); return scale(in[0], attrs.factor);
    case OpKind::concat: return concat(in, attrs.axis);
    case OpKind::slice: arity(1); return slice(in[0], attrs.axis, attrs.start, attrs.length);
    case OpKind::transpose: arity(1); return transpose(in[0]);
    case OpKind::softmax_rows: arity(1); return softmax_rows(in[0]);
    case OpKind::layer_norm: arity(1); return layer_norm(in[0], attrs.axis, attrs.eps);
    case OpKind::gelu: arity(1); return gelu(in[0]);
    case OpKind::embedding_gather: arity(1); return embedding_gather(in[0], attrs.indices);
    case OpKind::mean: arity(1); return mean(in[0]);
    case OpKind::sum: arity(1); return sum(in[0]);
    case OpKind::cross_entropy_from_logits:
      arity(1);
      return cross_entropy_from_logits(in[0], attrs.indices);
    case OpKind::sigmoid: arity(1); return sigmoid(in[0]);
    case OpKind::binary_cross_entropy: arity(1); return binary_cross_entropy(in[0], attrs.targets);
    case OpKind::bce_with_logits: arity(1); return bce_with_logits(in[0], attrs.targets);
    case OpKind::leaf: break;
  }
  throw std::invalid_argument("apply: '" + std::string(op_name(kind)) + "' is not an operation");
}

Tensor apply(std::string_view kind, std::span<const Tensor> inputs, const OpAttrs& attrs) {
  return apply(op_from_name(kind), inputs, attrs);
}

// ---- finite differences ------------------------------------------------

std::vector<double> numeric_gradient(const ScalarFn& fn, const Tensor& point, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("numeric_gradient: eps must be positive");
  std::vector<double> out(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    Tensor plus = point.detach();
    Tensor minus = point.detach();
    plus.mutable_data()[i] += eps;
    minus.mutable_data()[i] -= eps;
    const Tensor fp = fn(plus);
    const Tensor fm = fn(minus);
    if (fp.size() != 1) {
      throw AutogradError("numeric_gradient: function output has shape " + shape_str(fp.shape()));
    }
    out[i] = (fp.item() - fm.item()) / (2.0 * eps);
  }
  return out;
}

double gradient_error(std::span<const double> analytic, const ScalarFn& fn, const Tensor& point,
                      double eps) {
  if (analytic.size() != point.size()) {
    throw ShapeError("gradient_error: analytic gradient size differs from point");
  }
  const std::vector<double> numeric = numeric_gradient(fn, point, eps);
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check(const ScalarFn& fn, const Tensor& point, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  Tensor leaf = point.detach();
  leaf.set_requires_grad(true);
  const Tensor out = fn(leaf);
  if (out.size() != 1) {
    throw AutogradError("grad_check: function output has shape " + shape_str(out.shape()) +
                        ", expected a scalar");
  }
  const Gradients grads = backward(out);
  const std::vector<double> analytic = grads.of(leaf);
  return gradient_error(analytic, fn, point, eps);
}

}  // namespace pei
