#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "kp/util.hpp"

namespace kp {

// Frame-by-proposal matching scores. Row i is the action-semantics vector of
// sampled frame i; column j belongs to the j-th knowledge-base proposal.
struct SemanticsMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;  // row-major, rows * cols
  Digest kb_hash{};
  std::string encoder_id;
  std::uint64_t sampling_seed = 0;

  float at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  bool operator==(const SemanticsMatrix&) const = default;
};

}  // namespace kp
