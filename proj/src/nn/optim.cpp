#include "kp/nn/optim.hpp"

#include <cmath>

#include "kp/error.hpp"

namespace kp::nn {

std::vector<ParamSlot> trainable_slots(std::span<Parameter* const> params) {
  std::vector<ParamSlot> out;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    Tensor* g = p->var.grad_buffer();
    if (!g) throw InvalidInput("parameter '" + p->name + "' does not track gradients");
    out.push_back({p->var.mutable_value().data(), g->data()});
  }
  return out;
}

namespace {

void ensure_state(std::vector<std::vector<double>>& state, std::span<const ParamSlot> params) {
  if (state.empty()) {
    for (const auto& p : params) state.emplace_back(p.value.size(), 0.0);
  }
  if (state.size() != params.size()) throw ShapeError("optimizer: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state[i].size() != params[i].value.size() || params[i].grad.size() != params[i].value.size()) {
      throw ShapeError("optimizer: parameter shape changed");
    }
  }
}

}  // namespace

void SgdMomentum::step(std::span<const ParamSlot> params) {
  ensure_state(velocity_, params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].value;
    auto g = params[i].grad;
    auto& vel = velocity_[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      vel[j] = momentum_ * vel[j] + (g[j] + weight_decay_ * theta[j]);
      theta[j] -= lr_ * vel[j];
    }
  }
}

void Adam::step(std::span<const ParamSlot> params) {
  ensure_state(m_, params);
  ensure_state(v_, params);
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(beta1_, t);
  const double c2 = 1.0 - std::pow(beta2_, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].value;
    auto g = params[i].grad;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double grad = g[j] + weight_decay_ * theta[j];
      m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * grad;
      v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * grad * grad;
      const double m_hat = m_[i][j] / c1;
      const double v_hat = v_[i][j] / c2;
      theta[j] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
}

}  // namespace kp::nn
