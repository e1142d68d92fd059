#include "kp/fewshot.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "kp/error.hpp"
#include "kp/util.hpp"

namespace kp {

using nlohmann::json;

Manifest Manifest::restricted_to(const std::set<std::string>& classes) const {
  Manifest out;
  for (const auto& v : videos) {
    if (classes.contains(v.class_name)) out.videos.push_back(v);
  }
  return out;
}

std::set<std::string> Manifest::classes() const {
  std::set<std::string> out;
  for (const auto& v : videos) out.insert(v.class_name);
  return out;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  const auto base = path.parent_path();
  Manifest m;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (normalize_space(line).empty()) continue;
    try {
      json j = json::parse(line);
      VideoRecord v;
      v.video_id = j.at("video_id").get<std::string>();
      v.class_name = j.at("class").get<std::string>();
      std::filesystem::path dir = j.at("frames_dir").get<std::string>();
      v.frames_dir = dir.is_absolute() ? dir : base / dir;
      v.frame_count = j.at("frame_count").get<std::size_t>();
      if (v.video_id.empty() || v.class_name.empty()) throw InvalidInput("empty video id or class");
      if (v.frame_count == 0) throw InvalidInput("video '" + v.video_id + "' has no frames");
      if (!ids.insert(v.video_id).second) throw InvalidInput("duplicate video id '" + v.video_id + "'");
      m.videos.push_back(std::move(v));
    } catch (const json::exception& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const InvalidInput& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::string body;
  const auto base = path.parent_path();
  for (const auto& v : manifest.videos) {
    auto dir = v.frames_dir.lexically_relative(base);
    if (dir.empty()) dir = v.frames_dir;
    json j = {{"video_id", v.video_id},
              {"class", v.class_name},
              {"frames_dir", dir.generic_string()},
              {"frame_count", v.frame_count}};
    body += j.dump() + "\n";
  }
  write_file_atomic(path, body);
}

std::set<std::string> read_split(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto name = normalize_space(line);
    if (!name.empty()) out.insert(name);
  }
  return out;
}

std::vector<FrameContent> load_frames(const VideoRecord& video, std::span<const std::size_t> indices) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (!fs::is_directory(video.frames_dir)) {
    throw InvalidInput("frames directory missing for '" + video.video_id + "': " +
                       video.frames_dir.string());
  }
  for (const auto& entry : fs::directory_iterator(video.frames_dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<FrameContent> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= files.size()) {
      throw InvalidInput("video '" + video.video_id + "' has " + std::to_string(files.size()) +
                         " frame files, index " + std::to_string(i) + " requested");
    }
    std::string bytes = read_file(files[i]);
    if (files[i].extension() == ".txt") {
      std::istringstream ts(bytes);
      TokenBag bag;
      std::string tok;
      while (ts >> tok) bag.tokens.push_back(tok);
      out.emplace_back(std::move(bag));
    } else {
      out.emplace_back(ImageRef{std::move(bytes)});
    }
  }
  return out;
}

std::vector<std::size_t> sparse_sample(std::size_t length, std::size_t n, SamplingMode mode,
                                       std::uint64_t seed) {
  if (length == 0) throw InvalidInput("sparse_sample: video has no frames");
  if (n == 0) throw InvalidInput("sparse_sample: zero segments requested");
  Rng rng(seed);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i * length / n;
    const std::size_t hi = (i + 1) * length / n;
    if (lo == hi) {
      out[i] = std::min(lo, length - 1);
    } else if (mode == SamplingMode::Center) {
      out[i] = lo + (hi - lo) / 2;
    } else {
      out[i] = lo + static_cast<std::size_t>(rng.uniform_int(hi - lo));
    }
  }
  return out;
}

Episode sample_episode(const Manifest& manifest, std::size_t ways, std::size_t shots,
                       std::size_t queries, std::uint64_t seed) {
  if (ways < 1 || shots < 1) throw InvalidInput("episode needs at least one way and one shot");
  std::map<std::string, std::vector<const VideoRecord*>> by_class;
  for (const auto& v : manifest.videos) by_class[v.class_name].push_back(&v);

  std::vector<std::string> eligible;
  std::string short_classes;
  for (auto& [name, vids] : by_class) {
    std::sort(vids.begin(), vids.end(),
              [](const VideoRecord* a, const VideoRecord* b) { return a->video_id < b->video_id; });
    if (vids.size() >= shots + queries) {
      eligible.push_back(name);
    } else {
      short_classes += " " + name + "(" + std::to_string(vids.size()) + ")";
    }
  }
  if (eligible.size() < ways) {
    std::string msg = "episode needs " + std::to_string(ways) + " classes with at least " +
                      std::to_string(shots + queries) + " videos each, found " +
                      std::to_string(eligible.size());
    if (!short_classes.empty()) msg += "; too few videos in:" + short_classes;
    throw InvalidInput(msg);
  }

  Rng rng(seed);
  rng.shuffle(eligible);
  Episode ep;
  ep.seed = seed;
  for (std::size_t c = 0; c < ways; ++c) {
    ep.classes.push_back(eligible[c]);
    auto vids = by_class[eligible[c]];
    rng.shuffle(vids);
    for (std::size_t k = 0; k < shots; ++k) {
      ep.support.push_back(*vids[k]);
      ep.support_labels.push_back(c);
    }
    for (std::size_t q = 0; q < queries; ++q) {
      ep.query.push_back(*vids[shots + q]);
      ep.query_labels.push_back(c);
    }
  }
  return ep;
}

EvalReport summarize(std::vector<double> task_accuracies) {
  EvalReport r;
  r.task_accuracies = std::move(task_accuracies);
  const std::size_t n = r.task_accuracies.size();
  if (n == 0) return r;
  double sum = 0.0;
  for (double a : r.task_accuracies) sum += a;
  r.mean = sum / static_cast<double>(n);
  if (n > 1) {
    double ss = 0.0;
    for (double a : r.task_accuracies) ss += (a - r.mean) * (a - r.mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    r.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(n));
  }
  return r;
}

EvalReport evaluate(const LearnerFactory& factory, const Manifest& manifest,
                    const EvalOptions& options) {
  if (options.tasks == 0) throw InvalidInput("evaluate: zero tasks requested");
  std::vector<double> acc(options.tasks, 0.0);
  parallel_for(options.tasks, options.jobs, [&](std::size_t t) {
    const std::uint64_t task_seed = options.seed + t;
    Episode ep = sample_episode(manifest, options.ways, options.shots, options.queries, task_seed);
    auto learner = factory(task_seed);
    learner->fit(ep);
    std::size_t correct = 0;
    for (std::size_t q = 0; q < ep.query.size(); ++q) {
      correct += learner->predict(ep.query[q]) == ep.query_labels[q];
    }
    acc[t] = ep.query.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(ep.query.size());
  });
  return summarize(std::move(acc));
}

json report_to_json(const EvalReport& report) {
  return json{{"mean_accuracy", report.mean},
              {"ci95", report.ci95},
              {"tasks", report.task_accuracies.size()},
              {"task_accuracies", report.task_accuracies}};
}

EvalReport report_from_json(const json& j) {
  return summarize(j.at("task_accuracies").get<std::vector<double>>());
}

}  // namespace kp
