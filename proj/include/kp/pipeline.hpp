#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kp/encoder.hpp"
#include "kp/fewshot.hpp"
#include "kp/knowledge_base.hpp"
#include "kp/semantics.hpp"
#include "kp/tmn.hpp"

namespace kp {

// Per-video feature sequences: semantics matrices against a knowledge base, or
// raw frame embeddings when no knowledge base is given. Results are memoized in
// memory and, when a cache directory is set, on disk.
class VideoSemantics {
 public:
  VideoSemantics(const DualEncoder& encoder, std::optional<KnowledgeBase> kb,
                 std::optional<std::filesystem::path> cache_dir, MatchConfig cfg = MatchConfig{},
                 std::size_t frames = kDefaultSampledFrames);

  // Random mode draws indices from mix_seed(seed, fnv1a64(video_id)); the
  // matrix records `seed` (or kCenterSamplingSeed in center mode).
  SemanticsMatrix get(const VideoRecord& video, SamplingMode mode, std::uint64_t seed) const;
  // The same matrix widened to a [frames, feature_dim] tensor.
  nn::Tensor sequence(const VideoRecord& video, SamplingMode mode, std::uint64_t seed) const;

  std::size_t feature_dim() const;
  std::size_t frames() const { return frames_; }
  const Digest& kb_hash() const;
  const std::optional<KnowledgeBase>& kb() const { return kb_; }
  const DualEncoder& encoder() const { return encoder_; }
  std::size_t computed() const;

 private:
  const DualEncoder& encoder_;
  std::optional<KnowledgeBase> kb_;
  std::optional<SemanticsCache> cache_;
  std::unique_ptr<SemanticsExtractor> extractor_;
  std::size_t frames_;
  mutable std::mutex mu_;
  mutable std::map<std::pair<std::string, std::uint64_t>, SemanticsMatrix> memo_;
  mutable std::size_t computed_ = 0;
};

nn::Tensor to_tensor(const SemanticsMatrix& mat);

// Sampling seeds: base training and support sequences use `seed`; query
// sampling k (1-based) uses seed + k.
struct SamplingPlan {
  std::uint64_t seed = 17;
  SamplingMode mode = SamplingMode::Random;
  std::size_t test_samplings = 10;
  bool resample_support = false;  // also add the test samplings of support videos
};

struct LabeledSequences {
  std::vector<nn::Tensor> sequences;
  std::vector<std::size_t> labels;
  std::vector<std::string> classes;  // label i is classes[i]
};

// One sequence per video of `manifest`, labels by sorted class name.
LabeledSequences build_training_set(const VideoSemantics& semantics, const Manifest& manifest,
                                    const SamplingPlan& plan, std::size_t jobs);

// Fine-tunes a fresh head on each episode's support set and averages softmax
// outputs over the query samplings.
class TmnEpisodeLearner final : public EpisodeLearner {
 public:
  TmnEpisodeLearner(const TmnModel& model, const VideoSemantics& semantics, SamplingPlan plan,
                    EpisodeSchedule schedule, std::uint64_t task_seed);

  void fit(const Episode& episode) override;
  std::size_t predict(const VideoRecord& query) override;
  std::vector<double> predict_proba(const VideoRecord& query) const;
  const EpisodeHead& head() const { return head_; }

 private:
  const TmnModel& model_;
  const VideoSemantics& semantics_;
  SamplingPlan plan_;
  EpisodeSchedule schedule_;
  std::uint64_t task_seed_;
  EpisodeHead head_;
};

// Class prompt: the class name with underscores read as spaces.
std::string class_prompt(const std::string& class_name);

// Scaled cosine of every frame to every prompt, averaged over frames and
// samplings; the best prompt wins, lowest index on ties.
std::size_t zeroshot_classify(std::span<const std::vector<FrameContent>> samplings,
                              std::span<const std::string> prompts, const DualEncoder& encoder,
                              const MatchConfig& cfg = MatchConfig{});

class ZeroShotLearner final : public EpisodeLearner {
 public:
  ZeroShotLearner(const DualEncoder& encoder, SamplingPlan plan, std::size_t frames = kDefaultSampledFrames,
                  MatchConfig cfg = MatchConfig{});

  void fit(const Episode& episode) override;
  std::size_t predict(const VideoRecord& query) override;

 private:
  const DualEncoder& encoder_;
  SamplingPlan plan_;
  std::size_t frames_;
  MatchConfig cfg_;
  std::vector<std::string> prompts_;
};

struct ImportanceEntry {
  std::size_t proposal = 0;
  std::string text;
  double score = 0.0;
};

// Proposals ranked by |d logit / d v| for the true class, averaged over frames
// and the query videos of `tasks` episodes; top `k` entries.
std::vector<ImportanceEntry> importance_ranking(const TmnModel& model, const VideoSemantics& semantics,
                                                const Manifest& manifest, const EvalOptions& options,
                                                const SamplingPlan& plan,
                                                const EpisodeSchedule& schedule, std::size_t tasks,
                                                std::size_t k);

}  // namespace kp
