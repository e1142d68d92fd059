#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace kp {

// Seeded random source. Only the raw mt19937_64 stream is used so that
// sequences do not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  // Uniform real in [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Mixes a base seed with a stream identifier (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

std::uint64_t fnv1a64(std::string_view s);

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::span<const std::uint8_t> bytes);
Digest sha256(std::string_view text);
std::string to_hex(std::span<const std::uint8_t> bytes);
Digest digest_from_hex(std::string_view hex);
// Hex SHA-256 of a file's contents.
std::string sha256_file_hex(const std::filesystem::path& path);

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

// Lowercases, drops ASCII punctuation other than apostrophes, splits on whitespace.
std::vector<std::string> tokenize(std::string_view text);

// Trims and collapses interior whitespace runs to a single space.
std::string normalize_space(std::string_view text);

std::string to_lower(std::string_view text);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Runs fn(i) for i in [0, n) on up to `jobs` threads. jobs == 0 means hardware concurrency.
// The first exception thrown by any call is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace kp
