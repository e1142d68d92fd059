#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "kp/semantics_matrix.hpp"

namespace kp {

// Unit-norm vector, or all zeros for empty input.
struct Embedding {
  std::vector<double> values;

  bool is_zero() const;
  double norm() const;
  bool operator==(const Embedding&) const = default;
};

struct TokenBag {
  std::vector<std::string> tokens;
};

struct ImageRef {
  std::string bytes;  // encoded image file contents
};

// A frame is either a bag of tokens (synthetic data) or an encoded image.
using FrameContent = std::variant<TokenBag, ImageRef>;

class DualEncoder {
 public:
  virtual ~DualEncoder() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<Embedding> embed_text(std::span<const std::string> texts) const = 0;
  virtual std::vector<Embedding> embed_frame(std::span<const FrameContent> frames) const = 0;
};

// Hashed bag-of-tokens encoder: each token t adds 1 at FNV-1a-64(t) mod dim,
// then the vector is L2-normalized. Text is tokenized with kp::tokenize; frame
// token bags are lowercased token by token. Image frames are rejected.
class ToyEncoder final : public DualEncoder {
 public:
  static constexpr std::size_t kDefaultDim = 256;

  explicit ToyEncoder(std::size_t dim = kDefaultDim);
  std::string id() const override;
  std::size_t dim() const override { return dim_; }
  std::vector<Embedding> embed_text(std::span<const std::string> texts) const override;
  std::vector<Embedding> embed_frame(std::span<const FrameContent> frames) const override;

  Embedding embed_tokens(std::span<const std::string> tokens) const;
  std::size_t bucket(std::string_view token) const;

 private:
  std::size_t dim_;
};

class MatchConfig {
 public:
  explicit MatchConfig(double temperature = 0.01);
  double temperature() const { return temperature_; }

 private:
  double temperature_;
};

// Cosine similarity; 0 when either side is the zero vector. Throws ShapeError on
// a dimension mismatch.
double cosine(const Embedding& a, const Embedding& b);

// S[i][j] = cosine(frame_i, text_j) / temperature. Metadata fields are left default.
SemanticsMatrix match(std::span<const Embedding> frame_embs, std::span<const Embedding> text_embs,
                      const MatchConfig& cfg);

}  // namespace kp
