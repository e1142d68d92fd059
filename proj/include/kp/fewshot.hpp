#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kp/encoder.hpp"

namespace kp {

struct VideoRecord {
  std::string video_id;
  std::string class_name;
  std::filesystem::path frames_dir;  // resolved against the manifest's directory
  std::size_t frame_count = 0;
};

struct Manifest {
  std::vector<VideoRecord> videos;

  // Videos whose class is in `classes`, in manifest order.
  Manifest restricted_to(const std::set<std::string>& classes) const;
  std::set<std::string> classes() const;
};

// JSON-lines `{"video_id","class","frames_dir","frame_count"}`.
Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);
// Class names, one per line.
std::set<std::string> read_split(const std::filesystem::path& path);

// Frame files of a video: regular files of frames_dir sorted by name. `.txt`
// files hold whitespace-separated tokens; anything else is an encoded image.
std::vector<FrameContent> load_frames(const VideoRecord& video, std::span<const std::size_t> indices);

enum class SamplingMode { Random, Center };

inline constexpr std::size_t kDefaultSampledFrames = 16;
// Sampling-seed value recorded for center (seedless) sampling.
inline constexpr std::uint64_t kCenterSamplingSeed = ~std::uint64_t{0};

// Temporal sparse sampling: n equal segments [floor(iL/n), floor((i+1)L/n));
// random picks uniformly inside each segment, center picks its midpoint, and an
// empty segment (L < n) takes its start clamped to L-1.
std::vector<std::size_t> sparse_sample(std::size_t length, std::size_t n, SamplingMode mode,
                                       std::uint64_t seed = 0);

struct Episode {
  std::vector<std::string> classes;      // N class names; label i is classes[i]
  std::vector<VideoRecord> support;      // N*K, grouped by class
  std::vector<std::size_t> support_labels;
  std::vector<VideoRecord> query;        // N*Q, grouped by class
  std::vector<std::size_t> query_labels;
  std::uint64_t seed = 0;
};

Episode sample_episode(const Manifest& manifest, std::size_t ways, std::size_t shots,
                       std::size_t queries, std::uint64_t seed);

// One task's learner: fitted on the support set, then asked about each query.
class EpisodeLearner {
 public:
  virtual ~EpisodeLearner() = default;
  virtual void fit(const Episode& episode) = 0;
  virtual std::size_t predict(const VideoRecord& query) = 0;
};

// Creates a fresh learner for the task with the given seed.
using LearnerFactory = std::function<std::unique_ptr<EpisodeLearner>(std::uint64_t task_seed)>;

struct EvalOptions {
  std::size_t ways = 5;
  std::size_t shots = 5;
  std::size_t queries = 5;
  std::size_t tasks = 500;
  std::uint64_t seed = 17;
  std::size_t jobs = 1;
};

struct EvalReport {
  std::vector<double> task_accuracies;
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 * sample std / sqrt(tasks); 0 for a single task
};

EvalReport summarize(std::vector<double> task_accuracies);

// Task t uses seed options.seed + t for both the episode draw and its learner.
EvalReport evaluate(const LearnerFactory& factory, const Manifest& manifest,
                    const EvalOptions& options);

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);

}  // namespace kp
