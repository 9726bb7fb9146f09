#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "colanet/tensor.hpp"

namespace colanet {
inline namespace COLANET_PRECISION_NS {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;  // default-constructed until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  Tensor& grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape());
    return grad;
  }
  bool is_leaf() const noexcept { return !backward; }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables tape recording for its lifetime (inference paths).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Handle to a value on the dynamic tape. Copies share the same node, so a
/// parameter registered in two places is one parameter.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false) : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient, or zeros of the value's shape when nothing has flowed in yet.
  Tensor grad() const { return node_->grad.empty() ? Tensor(node_->value.shape()) : node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Wraps an op result. Records the backward closure only when grad mode is on
/// and at least one input needs a gradient.
inline Var record(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
  Var out(std::move(value));
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  node.inputs.reserve(inputs.size());
  for (auto& in : inputs) node.inputs.push_back(in.node());
  node.backward = std::move(backward);
  return out;
}

inline void accumulate(Node& target, std::span<const real> g) {
  if (!target.requires_grad) return;
  auto& buf = target.grad_buffer();
  real* d = buf.ptr();
  for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
}

}  // namespace detail

/// Reverse sweep from a scalar. Leaf gradients accumulate across calls until
/// zero_grad(); the recorded graph is released afterwards.
inline void backward(const Var& loss) {
  if (!loss.defined() || loss.value().numel() != 1) {
    throw ContractError("backward requires a scalar loss");
  }
  auto root = loss.node();
  if (!root->requires_grad) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  // Iterative post-order DFS.
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && !child->is_leaf() && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (!n->grad.empty()) n->backward(*n);
  }
  for (detail::Node* n : order) {
    n->backward = nullptr;
    n->inputs.clear();
    n->grad = Tensor();
    n->requires_grad = false;
  }
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
