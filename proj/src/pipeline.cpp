#include "kp/pipeline.hpp"

#include <algorithm>
#include <numeric>

#include "kp/error.hpp"
#include "kp/util.hpp"

namespace kp {

VideoSemantics::VideoSemantics(const DualEncoder& encoder, std::optional<KnowledgeBase> kb,
                               std::optional<std::filesystem::path> cache_dir, MatchConfig cfg,
                               std::size_t frames)
    : encoder_(encoder), kb_(std::move(kb)), frames_(frames) {
  if (frames_ == 0) throw InvalidInput("at least one sampled frame is required");
  if (cache_dir) cache_.emplace(*cache_dir);
  if (kb_) {
    if (kb_->size() == 0) throw InvalidInput("knowledge base is empty");
    extractor_ = std::make_unique<SemanticsExtractor>(encoder_, *kb_, cfg);
  }
}

std::size_t VideoSemantics::feature_dim() const { return kb_ ? kb_->size() : encoder_.dim(); }

const Digest& VideoSemantics::kb_hash() const { return kb_ ? kb_->content_hash : raw_features_digest(); }

std::size_t VideoSemantics::computed() const {
  std::lock_guard lock(mu_);
  return computed_;
}

SemanticsMatrix VideoSemantics::get(const VideoRecord& video, SamplingMode mode, std::uint64_t seed) const {
  const std::uint64_t recorded = mode == SamplingMode::Center ? kCenterSamplingSeed : seed;
  const auto memo_key = std::make_pair(video.video_id, recorded);
  {
    std::lock_guard lock(mu_);
    if (auto it = memo_.find(memo_key); it != memo_.end()) return it->second;
  }
  CacheKey key{video.video_id, kb_hash(), encoder_.id(), recorded};
  std::optional<SemanticsMatrix> mat;
  if (cache_) mat = cache_->get(key);
  if (!mat) {
    const auto indices = sparse_sample(video.frame_count, frames_, mode,
                                       mix_seed(seed, fnv1a64(video.video_id)));
    const auto frames = load_frames(video, indices);
    mat = extractor_ ? extractor_->extract(frames, recorded) : raw_frame_features(frames, encoder_, recorded);
    if (cache_) cache_->put(key, *mat);
    std::lock_guard lock(mu_);
    ++computed_;
  }
  std::lock_guard lock(mu_);
  return memo_.emplace(memo_key, std::move(*mat)).first->second;
}

nn::Tensor to_tensor(const SemanticsMatrix& mat) {
  std::vector<double> data(mat.data.begin(), mat.data.end());
  return nn::Tensor({mat.rows, mat.cols}, std::move(data));
}

nn::Tensor VideoSemantics::sequence(const VideoRecord& video, SamplingMode mode, std::uint64_t seed) const {
  return to_tensor(get(video, mode, seed));
}

LabeledSequences build_training_set(const VideoSemantics& semantics, const Manifest& manifest,
                                    const SamplingPlan& plan, std::size_t jobs) {
  LabeledSequences out;
  const auto classes = manifest.classes();
  out.classes.assign(classes.begin(), classes.end());
  out.sequences.resize(manifest.videos.size());
  out.labels.resize(manifest.videos.size());
  for (std::size_t i = 0; i < manifest.videos.size(); ++i) {
    const auto& cls = manifest.videos[i].class_name;
    out.labels[i] = static_cast<std::size_t>(
        std::lower_bound(out.classes.begin(), out.classes.end(), cls) - out.classes.begin());
  }
  parallel_for(manifest.videos.size(), jobs, [&](std::size_t i) {
    out.sequences[i] = semantics.sequence(manifest.videos[i], plan.mode, plan.seed);
  });
  return out;
}

TmnEpisodeLearner::TmnEpisodeLearner(const TmnModel& model, const VideoSemantics& semantics,
                                     SamplingPlan plan, EpisodeSchedule schedule, std::uint64_t task_seed)
    : model_(model), semantics_(semantics), plan_(plan), schedule_(schedule), task_seed_(task_seed) {
  if (plan_.test_samplings == 0) throw InvalidInput("at least one test sampling is required");
}

void TmnEpisodeLearner::fit(const Episode& episode) {
  std::vector<nn::Tensor> support;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < episode.support.size(); ++i) {
    support.push_back(semantics_.sequence(episode.support[i], plan_.mode, plan_.seed));
    labels.push_back(episode.support_labels[i]);
    if (plan_.resample_support && plan_.mode == SamplingMode::Random) {
      for (std::size_t k = 1; k <= plan_.test_samplings; ++k) {
        support.push_back(semantics_.sequence(episode.support[i], plan_.mode, plan_.seed + k));
        labels.push_back(episode.support_labels[i]);
      }
    }
  }
  head_ = finetune_episode(model_, support, labels, episode.classes.size(), schedule_, task_seed_);
}

std::vector<double> TmnEpisodeLearner::predict_proba(const VideoRecord& query) const {
  std::vector<nn::Tensor> samplings;
  const std::size_t count = plan_.mode == SamplingMode::Center ? 1 : plan_.test_samplings;
  for (std::size_t k = 1; k <= count; ++k) {
    samplings.push_back(semantics_.sequence(query, plan_.mode, plan_.seed + k));
  }
  return kp::predict_proba(model_, head_, samplings);
}

std::size_t TmnEpisodeLearner::predict(const VideoRecord& query) { return argmax(predict_proba(query)); }

std::string class_prompt(const std::string& class_name) {
  std::string s = class_name;
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

std::size_t zeroshot_classify(std::span<const std::vector<FrameContent>> samplings,
                              std::span<const std::string> prompts, const DualEncoder& encoder,
                              const MatchConfig& cfg) {
  if (prompts.empty()) throw InvalidInput("zero-shot: empty prompt list");
  if (samplings.empty()) throw InvalidInput("zero-shot: no frame samplings");
  const auto text_embs = encoder.embed_text(prompts);
  std::vector<double> score(prompts.size(), 0.0);
  std::size_t frames = 0;
  for (const auto& sampling : samplings) {
    const auto frame_embs = encoder.embed_frame(sampling);
    const SemanticsMatrix s = match(frame_embs, text_embs, cfg);
    for (std::size_t i = 0; i < s.rows; ++i) {
      for (std::size_t j = 0; j < s.cols; ++j) score[j] += s.at(i, j);
    }
    frames += s.rows;
  }
  for (double& v : score) v /= static_cast<double>(std::max<std::size_t>(frames, 1));
  return argmax(score);
}

ZeroShotLearner::ZeroShotLearner(const DualEncoder& encoder, SamplingPlan plan, std::size_t frames,
                                 MatchConfig cfg)
    : encoder_(encoder), plan_(plan), frames_(frames), cfg_(cfg) {}

void ZeroShotLearner::fit(const Episode& episode) {
  prompts_.clear();
  for (const auto& c : episode.classes) prompts_.push_back(class_prompt(c));
}

std::size_t ZeroShotLearner::predict(const VideoRecord& query) {
  std::vector<std::vector<FrameContent>> samplings;
  const std::size_t count = plan_.mode == SamplingMode::Center ? 1 : plan_.test_samplings;
  for (std::size_t k = 1; k <= count; ++k) {
    const auto idx = sparse_sample(query.frame_count, frames_, plan_.mode,
                                   mix_seed(plan_.seed + k, fnv1a64(query.video_id)));
    samplings.push_back(load_frames(query, idx));
  }
  return zeroshot_classify(samplings, prompts_, encoder_, cfg_);
}

std::vector<ImportanceEntry> importance_ranking(const TmnModel& model, const VideoSemantics& semantics,
                                                const Manifest& manifest, const EvalOptions& options,
                                                const SamplingPlan& plan,
                                                const EpisodeSchedule& schedule, std::size_t tasks,
                                                std::size_t k) {
  const std::size_t m = semantics.feature_dim();
  std::vector<double> total(m, 0.0);
  std::size_t count = 0;
  for (std::size_t t = 0; t < tasks; ++t) {
    const std::uint64_t task_seed = options.seed + t;
    Episode ep = sample_episode(manifest, options.ways, options.shots, options.queries, task_seed);
    TmnEpisodeLearner learner(model, semantics, plan, schedule, task_seed);
    learner.fit(ep);
    for (std::size_t q = 0; q < ep.query.size(); ++q) {
      const auto seq = semantics.sequence(ep.query[q], plan.mode, plan.seed + 1);
      const auto g = proposal_importance(model, learner.head(), seq, ep.query_labels[q]);
      for (std::size_t j = 0; j < m; ++j) total[j] += g[j];
      ++count;
    }
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return total[a] > total[b]; });
  std::vector<ImportanceEntry> out;
  for (std::size_t r = 0; r < std::min(k, m); ++r) {
    const std::size_t j = order[r];
    ImportanceEntry e{j, "", count ? total[j] / static_cast<double>(count) : 0.0};
    if (semantics.kb()) e.text = semantics.kb()->proposals[j].text;
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace kp
