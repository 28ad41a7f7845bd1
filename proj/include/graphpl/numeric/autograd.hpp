// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "graphpl/numeric/tensor.hpp"

namespace graphpl {

/// One vertex of a reverse-mode computation graph.
///
/// The value is fixed once the op that produced it returns; only `grad` is
/// written afterwards. Parents are held strongly so a graph stays alive as
/// long as its root does. Leaves (parameters, inputs) have no parents.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
    return grad;
  }
};

/// Handle to a graph node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.shape() == node_->value.shape() && !node_->value.empty(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

  /// Resets the gradient buffer to zeros of the value's shape.
  void zero_grad() {
    node_->grad = Tensor(node_->value.shape());
  }

 private:
  std::shared_ptr<Node> node_;
};

/// Graph input that never receives a gradient.
inline Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

/// Differentiable leaf.
inline Var leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

namespace detail {

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

/// Builds an op result. Parents and the backward closure are only kept when
/// some parent needs a gradient.
inline Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_mode())
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

}  // namespace detail

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
/// Gradients accumulate; callers zero parameter grads between steps.
inline void backward(const Var& root) {
  if (root.value().size() != 1) {
    throw DimensionError("backward: root must be a scalar, got " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS; parent order is fixed so the result is deterministic.
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Intermediate nodes start from zero; leaves keep what they accumulated.
  for (Node* n : order)
    if (!n->parents.empty()) n->grad = Tensor(n->value.shape());
  root.node()->ensure_grad()[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

/// Named learnable tensor. Names are `<component>.<modality>.<part>` and
/// unique within a model.
struct Parameter {
  std::string name;
  Var var;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor value, bool train = true)
      : name(std::move(n)), var(leaf(std::move(value))), trainable(train) {}

  // Copies own a fresh leaf; two models never alias a parameter.
  Parameter(const Parameter& o) : name(o.name), var(leaf(o.value())), trainable(o.trainable) {}
  Parameter& operator=(const Parameter& o) {
    if (this != &o) {
      name = o.name;
      var = leaf(o.value());
      trainable = o.trainable;
    }
    return *this;
  }
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const Tensor& value() const { return var.value(); }
  Tensor& mutable_value() { return var.mutable_value(); }
};

}  // namespace graphpl
