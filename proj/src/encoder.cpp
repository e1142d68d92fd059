#include "kp/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "kp/error.hpp"
#include "kp/util.hpp"

namespace kp {

bool Embedding::is_zero() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return v == 0.0; });
}

double Embedding::norm() const {
  double s = 0.0;
  for (double v : values) s += v * v;
  return std::sqrt(s);
}

ToyEncoder::ToyEncoder(std::size_t dim) : dim_(dim) {
  if (dim == 0) throw InvalidInput("toy encoder dimension must be positive");
}

std::string ToyEncoder::id() const { return "toy-fnv1a-d" + std::to_string(dim_); }

std::size_t ToyEncoder::bucket(std::string_view token) const {
  return static_cast<std::size_t>(fnv1a64(token) % dim_);
}

Embedding ToyEncoder::embed_tokens(std::span<const std::string> tokens) const {
  // Integer counts first so the result does not depend on summation order.
  std::vector<std::uint64_t> counts(dim_, 0);
  for (const auto& t : tokens) ++counts[bucket(t)];
  std::uint64_t sq = 0;
  for (auto c : counts) sq += c * c;
  Embedding e{std::vector<double>(dim_, 0.0)};
  if (sq == 0) return e;
  const double inv = 1.0 / std::sqrt(static_cast<double>(sq));
  for (std::size_t i = 0; i < dim_; ++i) e.values[i] = static_cast<double>(counts[i]) * inv;
  return e;
}

std::vector<Embedding> ToyEncoder::embed_text(std::span<const std::string> texts) const {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_tokens(tokenize(t)));
  return out;
}

std::vector<Embedding> ToyEncoder::embed_frame(std::span<const FrameContent> frames) const {
  std::vector<Embedding> out;
  out.reserve(frames.size());
  for (const auto& f : frames) {
    const auto* bag = std::get_if<TokenBag>(&f);
    if (!bag) throw InvalidInput("toy encoder cannot embed image frames; use the http scorer");
    std::vector<std::string> lowered;
    lowered.reserve(bag->tokens.size());
    for (const auto& t : bag->tokens) {
      if (!t.empty()) lowered.push_back(to_lower(t));
    }
    out.push_back(embed_tokens(lowered));
  }
  return out;
}

MatchConfig::MatchConfig(double temperature) : temperature_(temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidInput("match temperature must be positive");
  }
}

double cosine(const Embedding& a, const Embedding& b) {
  if (a.values.size() != b.values.size()) {
    throw ShapeError("embedding dimensions differ: " + std::to_string(a.values.size()) + " vs " +
                     std::to_string(b.values.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

SemanticsMatrix match(std::span<const Embedding> frame_embs, std::span<const Embedding> text_embs,
                      const MatchConfig& cfg) {
  SemanticsMatrix s;
  s.rows = frame_embs.size();
  s.cols = text_embs.size();
  s.data.resize(s.rows * s.cols);
  const double inv_t = 1.0 / cfg.temperature();
  for (std::size_t i = 0; i < s.rows; ++i) {
    for (std::size_t j = 0; j < s.cols; ++j) {
      s.data[i * s.cols + j] = static_cast<float>(cosine(frame_embs[i], text_embs[j]) * inv_t);
    }
  }
  return s;
}

}  // namespace kp
