#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kp/nn/autograd.hpp"

namespace kp::nn {

struct Parameter {
  std::string name;
  Var var;
  bool trainable = true;
};

// View of one parameter's values and its gradient for an optimizer step.
struct ParamSlot {
  std::span<double> value;
  std::span<const double> grad;
};

// Slots for the trainable entries of `params`; gradients are allocated (zero) if absent.
std::vector<ParamSlot> trainable_slots(std::span<Parameter* const> params);

// v <- mu v + (g + wd theta); theta <- theta - lr v.
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum, double weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::span<const ParamSlot> params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  const std::vector<std::vector<double>>& velocity() const { return velocity_; }
  void restore(std::vector<std::vector<double>> velocity) { velocity_ = std::move(velocity); }

 private:
  double lr_, momentum_, weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

// Bias-corrected Adam. Weight decay, when non-zero, is added to the gradient.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps = 1e-8, double weight_decay = 0.0)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(std::span<const ParamSlot> params);
  std::size_t step_count() const { return steps_; }
  const std::vector<std::vector<double>>& first_moment() const { return m_; }
  const std::vector<std::vector<double>>& second_moment() const { return v_; }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace kp::nn
