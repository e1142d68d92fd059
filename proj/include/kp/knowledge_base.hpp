#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kp/util.hpp"

namespace kp {

enum class ProposalSource { Template, Tpn };
enum class ProposalLevel { Basic, Instance, Part };

std::string_view to_string(ProposalSource s);
std::string_view to_string(ProposalLevel l);
ProposalSource parse_source(std::string_view s);
ProposalLevel parse_level(std::string_view s);

struct BodyPartState {
  std::string body_part;     // "hand"
  std::string state_phrase;  // "put on"
  bool transitive = true;
};

struct ObjectNoun {
  std::string text;
};

// One textual action description used as a prompt for the text encoder.
struct Proposal {
  std::string text;
  ProposalSource source = ProposalSource::Template;
  ProposalLevel level = ProposalLevel::Basic;
  // Template text with the object replaced by kMaskToken; set only for transitive templates.
  std::optional<std::string> masked_text;

  bool operator==(const Proposal&) const = default;
};

inline constexpr std::string_view kMaskToken = "[MASK]";

// The object a masked proposal hides, recovered from text and masked_text.
std::optional<std::string> masked_target(const Proposal& p);

// Deduplicated proposals in canonical (byte-lexicographic) order, plus the
// SHA-256 of their texts joined by '\n'.
struct KnowledgeBase {
  std::vector<Proposal> proposals;
  Digest content_hash{};

  std::size_t size() const { return proposals.size(); }
  std::vector<std::string> texts() const;
};

class FilterThreshold {
 public:
  explicit FilterThreshold(double lambda);
  double value() const { return lambda_; }

 private:
  double lambda_;
};

// Probability that the masked slot of `masked_text` is filled by `target`.
class MaskedTokenScorer {
 public:
  virtual ~MaskedTokenScorer() = default;
  virtual double probability(std::string_view masked_text, std::string_view target) const = 0;
  virtual std::string id() const = 0;
};

// Context-free unigram model: P(target) is the product of the relative
// frequencies of its tokens in a reference corpus. Unseen tokens score 0.
class UnigramScorer final : public MaskedTokenScorer {
 public:
  explicit UnigramScorer(std::span<const std::string> corpus_tokens);
  double probability(std::string_view masked_text, std::string_view target) const override;
  std::string id() const override { return "toy-unigram"; }
  std::size_t corpus_size() const { return total_; }

 private:
  std::unordered_map<std::string, std::size_t> counts_;
  std::size_t total_ = 0;
};

std::vector<Proposal> generate_template_proposals(std::span<const BodyPartState> states,
                                                  std::span<const ObjectNoun> nouns);

// Keeps masked proposals whose target probability is >= lambda; others pass.
// Chunks may be scored on `jobs` threads; output order always equals input order.
std::vector<Proposal> filter_proposals(std::span<const Proposal> proposals,
                                       const MaskedTokenScorer& scorer, FilterThreshold threshold,
                                       std::size_t jobs = 1);

KnowledgeBase build_kb(std::span<const std::vector<Proposal>> sets);

std::string canonical_serialization(const KnowledgeBase& kb);

// Corpus files.
std::vector<BodyPartState> read_states(const std::filesystem::path& path);
std::vector<ObjectNoun> read_nouns(const std::filesystem::path& path);

// JSON-lines KB file plus `<path>.hash` holding the hex digest.
void write_kb(const KnowledgeBase& kb, const std::filesystem::path& path);
// Reads a KB file. If a `.hash` sidecar exists it must match the recomputed digest.
KnowledgeBase read_kb(const std::filesystem::path& path);
// Reads a JSON-lines proposal list without dedup or reordering.
std::vector<Proposal> read_proposals(const std::filesystem::path& path);
void write_proposals(std::span<const Proposal> proposals, const std::filesystem::path& path);

}  // namespace kp
