#include "kp/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "kp/error.hpp"
#include "kp/util.hpp"

namespace kp::nn {

GradCheckResult grad_check(const std::function<Var()>& loss_fn, std::span<const Var> wrt,
                           const GradCheckOptions& options) {
  for (const auto& v : wrt) {
    if (!v.requires_grad()) throw InvalidInput("grad_check: every checked variable must track gradients");
    v.zero_grad();
  }
  Var loss = loss_fn();
  backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(wrt.size());
  for (const auto& v : wrt) analytic.push_back(v.grad());

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    for (std::size_t i = 0; i < wrt[k].size(); ++i) coords.emplace_back(k, i);
  }
  if (options.max_coords && coords.size() > options.max_coords) {
    Rng rng(options.seed);
    rng.shuffle(coords);
    coords.resize(options.max_coords);
    std::sort(coords.begin(), coords.end());
  }

  GradCheckResult result;
  for (auto [k, i] : coords) {
    Var v = wrt[k];
    double& slot = v.mutable_value()[i];
    const double orig = slot;
    slot = orig + options.eps;
    const double plus = loss_fn().value()[0];
    slot = orig - options.eps;
    const double minus = loss_fn().value()[0];
    slot = orig;
    const double numeric = (plus - minus) / (2.0 * options.eps);
    const double a = analytic[k][i];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
    const double rel = std::abs(a - numeric) / denom;
    ++result.coords_checked;
    if (rel > result.max_rel_error || result.worst.empty()) {
      result.max_rel_error = std::max(result.max_rel_error, rel);
      if (rel >= result.max_rel_error) {
        std::ostringstream os;
        os << "input#" << k << "[" << i << "]: analytic=" << a << " numeric=" << numeric;
        result.worst = os.str();
      }
    }
  }
  for (const auto& v : wrt) v.zero_grad();
  return result;
}

}  // namespace kp::nn
