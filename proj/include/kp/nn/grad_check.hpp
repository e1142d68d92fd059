#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "kp/nn/autograd.hpp"

namespace kp::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst;  // "input#k[i]: analytic=.. numeric=.."
};

struct GradCheckOptions {
  double eps = 1e-5;
  // Check at most this many coordinates, drawn uniformly; 0 checks all of them.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

// Compares the tape gradient of the scalar returned by `loss_fn` against
// central finite differences on every coordinate of `wrt`. `loss_fn` must be
// deterministic and rebuild the graph on each call.
GradCheckResult grad_check(const std::function<Var()>& loss_fn, std::span<const Var> wrt,
                           const GradCheckOptions& options = {});

}  // namespace kp::nn
