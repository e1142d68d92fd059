#include "kp/nn/autograd.hpp"

#include <unordered_set>

#include "kp/error.hpp"

namespace kp::nn {

namespace {
thread_local bool t_grad_enabled = true;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor Var::grad() const {
  if (!node_->grad.empty()) return node_->grad;
  return Tensor(node_->value.shape(), 0.0);
}

Tensor* Var::grad_buffer() const {
  if (!requires_grad()) return nullptr;
  if (node_->grad.empty()) node_->grad = Tensor(node_->value.shape(), 0.0);
  return &node_->grad;
}

void Var::zero_grad() const {
  if (node_) node_->grad = Tensor();
}

Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  Var out(std::move(value), false);
  auto& node = *out.node();
  if (!t_grad_enabled) return out;
  for (const auto& in : inputs) {
    if (in.requires_grad()) node.requires_grad = true;
  }
  if (node.requires_grad) {
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) node.inputs.push_back(in.node());
    node.backward = std::move(fn);
  }
  return out;
}

void backward(const Var& root) {
  if (!root.defined() || root.size() != 1) {
    throw ShapeError("backward: root must be a single-element tensor");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Node* r = root.node().get();
  if (r->grad.empty()) r->grad = Tensor(r->value.shape(), 0.0);
  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(n->grad);
  }
}

}  // namespace kp::nn
