#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kp/encoder.hpp"
#include "kp/knowledge_base.hpp"
#include "kp/nn/tensor.hpp"

namespace kp {

enum class BioLabel : std::uint8_t { O = 0, BInst = 1, IInst = 2, BPart = 3, IPart = 4 };
inline constexpr std::size_t kNumBioLabels = 5;

std::string_view to_string(BioLabel l);
// Accepts "O", "B-INST"/"B_INST", "I-INST"/"I_INST", "B-PART"/"B_PART", "I-PART"/"I_PART".
std::optional<BioLabel> parse_bio_label(std::string_view s);

struct CaptionDocument {
  std::string name;
  std::vector<std::string> tokens;
  std::optional<std::vector<BioLabel>> labels;  // aligned with tokens when present
};

struct ExtractedSpan {
  std::size_t start = 0;  // token index
  std::size_t end = 0;    // exclusive
  ProposalLevel level = ProposalLevel::Instance;
  std::string text;

  bool operator==(const ExtractedSpan&) const = default;
};

struct BioDecode {
  std::vector<ExtractedSpan> spans;
  // Token positions where an I-X continued nothing of type X and opened a span.
  std::vector<std::size_t> repairs;
};

// Maximal B-X I-X* runs become spans; an I-X after O or after a different type
// starts a new X span and is recorded as a repair.
BioDecode decode_bio(std::span<const BioLabel> labels, std::span<const std::string> tokens);

// Labels a sequence of `length` tokens with B on each span start and I inside.
std::vector<BioLabel> encode_spans(std::span<const ExtractedSpan> spans, std::size_t length);

// Produces one feature row per token.
class TokenFeatureProvider {
 public:
  virtual ~TokenFeatureProvider() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dim() const = 0;
  // [tokens.size(), dim()]; an empty token list yields an empty tensor.
  virtual nn::Tensor features(std::span<const std::string> tokens) const = 0;
};

// Each token is the one-hot hashed bucket of the toy encoder; a token's feature
// is [prev | self | next] with zero blocks at the document edges.
class HashedWindowFeatures final : public TokenFeatureProvider {
 public:
  explicit HashedWindowFeatures(std::size_t buckets = ToyEncoder::kDefaultDim);
  std::string id() const override;
  std::size_t dim() const override { return 3 * buckets_; }
  nn::Tensor features(std::span<const std::string> tokens) const override;

 private:
  std::size_t buckets_;
  ToyEncoder hasher_;
};

struct TaggerHyper {
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t epochs = 200;
  std::uint64_t seed = 17;
};

// Linear token classifier over five BIO labels.
struct Tagger {
  std::string feature_provider_id;
  std::size_t feature_dim = 0;
  nn::Tensor weight;  // [feature_dim, 5]
  nn::Tensor bias;    // [5]

  nn::Tensor logits(const nn::Tensor& features) const;
  std::vector<BioLabel> predict(const nn::Tensor& features) const;
};

struct TaggerTrainLog {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  double train_accuracy = 0.0;
};

Tagger init_tagger(const TokenFeatureProvider& features, std::uint64_t seed);

// Full-batch Adam on mean per-token softmax cross-entropy.
Tagger train_tagger(std::span<const CaptionDocument> docs, const TokenFeatureProvider& features,
                    const TaggerHyper& hyper, TaggerTrainLog* log = nullptr);

std::vector<Proposal> extract_proposals(const CaptionDocument& doc, const Tagger& tagger,
                                        const TokenFeatureProvider& features);

// Annotation file: `token<TAB>label` per line, blank line between documents.
std::vector<CaptionDocument> read_annotations(const std::filesystem::path& path);
// Plain caption text, tokenized; the document is named after the file.
CaptionDocument read_caption(const std::filesystem::path& path);

void save_tagger(const Tagger& tagger, const std::filesystem::path& path);
Tagger load_tagger(const std::filesystem::path& path);

}  // namespace kp
