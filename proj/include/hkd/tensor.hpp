#pragma once

// Dense tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Ops whose inputs require a
// gradient record their parents and a backward rule on the output node, so
// the graph is the DAG reachable from a loss. Every node carries a sequence
// number drawn at creation; GradGraph replays backward rules in strictly
// decreasing sequence order, which is exactly reverse execution order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hkd/error.hpp"

namespace hkd {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

namespace detail {

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed) + 1;
}

inline bool& grad_mode_disabled() {
  thread_local bool disabled = false;
  return disabled;
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::uint64_t seq = next_sequence();
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  bool is_leaf() const { return parents.empty(); }

  // Gradient buffer of a parent, or nullptr when it does not need one.
  T* parent_grad(std::size_t i) {
    Node& p = *parents[i];
    if (!p.requires_grad) return nullptr;
    if (p.grad.size() != p.value.size()) p.grad.assign(p.value.size(), T(0));
    return p.grad.data();
  }
  const std::vector<T>& parent_value(std::size_t i) const { return parents[i]->value; }
};

}  // namespace detail

// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_disabled()) { detail::grad_mode_disabled() = true; }
  ~NoGradGuard() { detail::grad_mode_disabled() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (data.size() != shape_numel(shape))
      throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }
  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }
  static Tensor full(Shape shape, T v) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, v));
  }
  static Tensor scalar(T v, bool requires_grad = false) { return from({1}, {v}, requires_grad); }
  static Tensor vector(std::vector<T> v, bool requires_grad = false) {
    const auto n = v.size();
    return from({n}, std::move(v), requires_grad);
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> v,
                       bool requires_grad = false) {
    return from({rows, cols}, std::move(v), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }
  std::size_t rows() const { return node_->shape.at(0); }
  std::size_t cols() const { return node_->shape.at(1); }

  std::span<T> value() { return node_->value; }
  std::span<const T> value() const { return node_->value; }
  const std::vector<T>& data() const { return node_->value; }
  T item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return node_->value[0];
  }
  T at(std::size_t i) const { return node_->value.at(i); }
  T at(std::size_t r, std::size_t c) const { return node_->value.at(r * cols() + c); }

  // Accumulated gradient; zeros when nothing has flowed in yet.
  std::vector<T> grad() const {
    if (node_->grad.size() != node_->value.size()) return std::vector<T>(numel(), T(0));
    return node_->grad;
  }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }
  const char* op() const { return node_->op; }

  // Fresh leaf with a copy of the values and no history.
  Tensor detach() const { return from(shape(), node_->value, false); }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>::from(shape(), std::vector<U>(node_->value.begin(), node_->value.end()));
  }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

inline std::string describe(const char* op, std::initializer_list<Shape> shapes) {
  std::string s = std::string(op) + ": incompatible shapes";
  for (const auto& sh : shapes) s += " " + shape_str(sh);
  return s;
}

template <class T>
void check_finite(const char* op, const std::vector<T>& v) {
  for (const T x : v)
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite output");
}

// Builds an op output. The backward rule is attached only when recording is
// on and some input requires a gradient.
template <class T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value,
                  std::initializer_list<Tensor<T>> inputs, std::function<void(Node<T>&)> backward) {
  check_finite(op, value);
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (!grad_mode_disabled())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template <class T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                  std::function<void(Node<T>&)> backward) {
  check_finite(op, value);
  auto node = std::make_shared<Node<T>>();
  node->op = op;
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (!grad_mode_disabled())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

// The recorded computation behind a scalar loss, in execution order.
template <class T>
class GradGraph {
 public:
  explicit GradGraph(const Tensor<T>& loss) : loss_(loss) {
    if (loss.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    if (!loss.requires_grad()) throw Error("backward: loss is detached from the graph");
    std::vector<detail::Node<T>*> stack{loss.node().get()};
    std::unordered_set<detail::Node<T>*> seen{loss.node().get()};
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      nodes_.push_back(n);
      for (auto& p : n->parents)
        if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(nodes_.begin(), nodes_.end(),
              [](const auto* a, const auto* b) { return a->seq < b->seq; });
  }

  std::vector<std::string> ops() const {
    std::vector<std::string> names;
    for (const auto* n : nodes_)
      if (!n->is_leaf()) names.emplace_back(n->op);
    return names;
  }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const auto* n) { return n->is_leaf(); }));
  }

  // Leaves accumulate by summation; intermediates are rebuilt per call.
  // `visit` (optional) observes op names in the order rules run.
  void backward(const std::function<void(const char*)>& visit = {}) {
    auto& root = *loss_.node();
    if (root.consumed) throw Error("backward: called twice on the same graph without reset");
    for (auto* n : nodes_)
      if (!n->is_leaf()) n->grad.assign(n->value.size(), T(0));
    if (root.is_leaf()) {
      if (root.grad.size() != 1) root.grad.assign(1, T(0));
      root.grad[0] += T(1);
    } else {
      root.grad.assign(1, T(1));
    }
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto* n = *it;
      if (n->is_leaf() || !n->backward) continue;
      if (visit) visit(n->op);
      n->backward(*n);
    }
    for (auto* n : nodes_)
      if (!n->is_leaf()) std::vector<T>().swap(n->grad);
    root.consumed = true;
  }

 private:
  Tensor<T> loss_;
  std::vector<detail::Node<T>*> nodes_;
};

template <class T>
void backward(const Tensor<T>& loss) {
  GradGraph<T>(loss).backward();
}

}  // namespace hkd
