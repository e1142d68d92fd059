#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "kp/nn/tensor.hpp"

namespace kp::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Named-parameter archive. Layout (little-endian):
//   "KPCK" | u32 version=1 | u32 len | manifest (UTF-8 JSON) | u32 count |
//   count x { u32 len | name | u32 rank | rank x u32 extent | f32 data } | u32 crc32
struct Checkpoint {
  std::string manifest;
  std::vector<NamedTensor> entries;

  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::filesystem::path& origin);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kp::nn
