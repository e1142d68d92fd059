#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "kp/nn/tensor.hpp"

namespace kp::nn {

// Receives d(root)/d(output) for the node it is attached to and must add the
// input gradients into the inputs' grad buffers.
using BackwardFn = std::function<void(const Tensor& grad_out)>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
};

// Handle to a node of the reverse-mode tape. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  const Tensor& value() const { return node_->value; }
  // Direct access for optimizers and finite-difference probes.
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool defined() const { return node_ != nullptr; }

  // Zero tensor of the value's shape when nothing has been accumulated.
  Tensor grad() const;
  // Lazily allocated accumulation buffer, or nullptr when no gradient is tracked.
  Tensor* grad_buffer() const;
  void zero_grad() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// While alive on a thread, make_result records no graph on that thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Creates a tape node; `fn` is kept only when some input requires a gradient.
Var make_result(Tensor value, std::vector<Var> inputs, BackwardFn fn);

// Seeds d(root)/d(root) = 1 for a single-element root and propagates to every
// reachable node that requires a gradient. Leaf gradients accumulate.
void backward(const Var& root);

}  // namespace kp::nn
