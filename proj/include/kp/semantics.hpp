#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kp/encoder.hpp"
#include "kp/knowledge_base.hpp"
#include "kp/semantics_matrix.hpp"

namespace kp {

struct CacheKey {
  std::string video_id;
  Digest kb_hash{};
  std::string encoder_id;
  std::uint64_t sampling_seed = 0;
};

// Binary cache file (little-endian):
//   "KPSC" | u32 version=1 | kb_hash[32] | u32 len + encoder_id | u64 sampling_seed |
//   u32 n | u32 m | n*m f32 row-major | u32 crc32 of all preceding bytes
std::string encode_semantics(const SemanticsMatrix& mat);
SemanticsMatrix decode_semantics(std::string_view bytes, const std::filesystem::path& origin);

// One file per key at <root>/<h[0:2]>/<h>.kpsc where h is the SHA-256 of the key.
// Writes go through a temporary file and rename; concurrent writers of one key
// produce identical bytes, so the last rename wins harmlessly.
class SemanticsCache {
 public:
  explicit SemanticsCache(std::filesystem::path root);

  std::filesystem::path path_for(const CacheKey& key) const;
  void put(const CacheKey& key, const SemanticsMatrix& mat) const;
  // Absent keys return nullopt; unreadable or corrupt files throw IntegrityError.
  std::optional<SemanticsMatrix> get(const CacheKey& key) const;

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

// Digest used in place of a KB hash when frames are encoded without proposals.
const Digest& raw_features_digest();

// Computes semantics matrices for one knowledge base. Proposal embeddings are
// computed on first use and shared by later calls (thread-safe).
class SemanticsExtractor {
 public:
  SemanticsExtractor(const DualEncoder& encoder, KnowledgeBase kb, MatchConfig cfg = MatchConfig{});

  SemanticsMatrix extract(std::span<const FrameContent> frames, std::uint64_t sampling_seed) const;

  const KnowledgeBase& kb() const { return kb_; }
  const DualEncoder& encoder() const { return encoder_; }
  std::size_t text_embedding_calls() const { return text_calls_; }

 private:
  const std::vector<Embedding>& text_embeddings() const;

  const DualEncoder& encoder_;
  KnowledgeBase kb_;
  MatchConfig cfg_;
  mutable std::once_flag once_;
  mutable std::vector<Embedding> text_embs_;
  mutable std::size_t text_calls_ = 0;
};

SemanticsMatrix extract_semantics(std::span<const FrameContent> frames, const KnowledgeBase& kb,
                                  const DualEncoder& encoder, const MatchConfig& cfg,
                                  std::uint64_t sampling_seed = 0);

// Frame embeddings used directly as per-frame features (n x encoder dim).
SemanticsMatrix raw_frame_features(std::span<const FrameContent> frames, const DualEncoder& encoder,
                                   std::uint64_t sampling_seed);

}  // namespace kp
