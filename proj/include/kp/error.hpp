#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace kp {

// Base of every error raised by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violates a documented precondition (duplicate nouns, bad labels, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Tensor shapes or embedding dimensions disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A persisted artifact failed its magic/version/checksum/length checks.
class IntegrityError : public Error {
 public:
  IntegrityError(const std::filesystem::path& path, const std::string& what)
      : Error(path.string() + ": " + what), path_(path) {}
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// Remote encoder/scorer could not be reached. Retrying the same batch may succeed.
class TransportError : public Error {
 public:
  TransportError(std::size_t batch_index, const std::string& what)
      : Error("batch " + std::to_string(batch_index) + ": " + what), batch_index_(batch_index) {}
  std::size_t batch_index() const { return batch_index_; }
  bool retryable() const { return true; }

 private:
  std::size_t batch_index_;
};

}  // namespace kp
