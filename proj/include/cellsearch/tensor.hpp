// Copyright 2026 The cellsearch Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace cellsearch {

/// Raised when a caller breaks an operation's documented precondition
/// (shape mismatch, out-of-range label, non-scalar loss, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

#define CELLSEARCH_REQUIRE(cond, msg)                                      \
  do {                                                                     \
    if (!(cond)) {                                                         \
      std::ostringstream cellsearch_require_os_;                           \
      cellsearch_require_os_ << msg;                                       \
      throw ::cellsearch::ContractViolation(cellsearch_require_os_.str()); \
    }                                                                      \
  } while (0)

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

inline std::uint64_t& sequence_counter() {
  thread_local std::uint64_t counter = 0;
  return counter;
}

inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into inputs[i]->grad for every
  // input that requires grad. Input grad buffers are allocated beforehand.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

/// Dense row-major tensor handle. Copies share the underlying node, so a
/// parameter handed to an optimizer and to a module is the same storage.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    const std::size_t n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, v), requires_grad);
  }

  static Tensor from(Shape shape, std::vector<T> values,
                     bool requires_grad = false) {
    CELLSEARCH_REQUIRE(shape_numel(shape) == values.size(),
                       "tensor: shape " << shape_str(shape) << " holds "
                                        << shape_numel(shape)
                                        << " values, got " << values.size());
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    node->seq = ++detail::sequence_counter();
    return Tensor(std::move(node));
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> values() const { return node_->value; }
  /// Direct write access; meant for leaves (parameters, optimizer updates).
  std::span<T> mutable_values() { return node_->value; }
  T item() const {
    CELLSEARCH_REQUIRE(numel() == 1, "item() on tensor of shape "
                                         << shape_str(shape()));
    return node_->value[0];
  }
  T at(std::size_t flat) const { return node_->value.at(flat); }

  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) {
    CELLSEARCH_REQUIRE(is_leaf(), "requires_grad can only be toggled on leaves");
    node_->requires_grad = on;
  }
  bool is_leaf() const { return node_->is_leaf(); }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  /// Detached copy with fresh storage and no history.
  Tensor clone(bool requires_grad = false) const {
    return from(shape(), node_->value, requires_grad);
  }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds the output of a differentiable operation. The graph edge is only
/// recorded when grad mode is on and at least one input requires grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> values,
                      std::vector<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward_fn) {
  Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(values));
  if (!grad_enabled()) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<T>& t) { return t.requires_grad(); });
  if (!any) return out;
  Node<T>& node = out.node();
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (auto& t : inputs) node.inputs.push_back(t.node_ptr());
  node.backward_fn = std::move(backward_fn);
  return out;
}

/// Nodes reachable from a root that take part in gradient propagation, in
/// creation (topological) order.
template <typename T>
class GradGraph {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  static GradGraph collect(const Tensor<T>& root) {
    GradGraph g;
    if (!root.defined() || !root.requires_grad()) return g;
    std::vector<NodePtr> stack{root.node_ptr()};
    std::unordered_set<Node<T>*> seen;
    while (!stack.empty()) {
      NodePtr n = std::move(stack.back());
      stack.pop_back();
      if (!seen.insert(n.get()).second) continue;
      for (auto& in : n->inputs)
        if (in->requires_grad) stack.push_back(in);
      g.order_.push_back(std::move(n));
    }
    std::sort(g.order_.begin(), g.order_.end(),
              [](const NodePtr& a, const NodePtr& b) { return a->seq < b->seq; });
    return g;
  }

  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }
  const std::vector<NodePtr>& order() const { return order_; }

  /// Reverse-topological sweep; each node is visited once. Leaf grads
  /// accumulate. Interior nodes are consumed: their grads, saved state and
  /// input links are released as soon as they have propagated.
  void run() {
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      NodePtr n = std::move(*it);
      if (n->is_leaf()) continue;
      n->ensure_grad();
      for (auto& in : n->inputs)
        if (in->requires_grad) in->ensure_grad();
      n->backward_fn(*n);
      n->backward_fn = nullptr;
      n->inputs.clear();
      n->requires_grad = false;
      std::vector<T>().swap(n->grad);
    }
    order_.clear();
  }

 private:
  std::vector<NodePtr> order_;
};

/// Populates d(loss)/d(leaf) on every requires_grad leaf reachable from loss.
template <typename T>
void backward(const Tensor<T>& loss) {
  CELLSEARCH_REQUIRE(loss.defined() && loss.numel() == 1,
                     "backward: loss must be a scalar, got shape "
                         << (loss.defined() ? shape_str(loss.shape()) : "<undefined>"));
  GradGraph<T> graph = GradGraph<T>::collect(loss);
  if (graph.empty()) return;
  Node<T>& root = loss.node();
  root.ensure_grad();
  if (root.is_leaf()) {
    root.grad[0] += T(1);
    return;
  }
  root.grad[0] = T(1);
  graph.run();
}

}  // namespace cellsearch
