#include "kp/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "kp/encoder.hpp"
#include "kp/pipeline.hpp"
#include "kp/error.hpp"
#include "kp/util.hpp"

namespace kp {

namespace fs = std::filesystem;

namespace {

const std::vector<BodyPartState>& order_states() {
  static const std::vector<BodyPartState> states{
      {"hand", "pick up", true}, {"hand", "push", true},   {"foot", "kick", true},
      {"foot", "step on", true}, {"arm", "carry", true},   {"head", "turn to", true},
  };
  return states;
}

const std::vector<std::string>& order_nouns() {
  static const std::vector<std::string> nouns{"cup",  "ball",  "box",   "door", "book",
                                              "chair", "bottle", "phone", "bag",  "table"};
  return nouns;
}

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words{
      "room",  "light", "wall",   "floor", "window", "shadow", "corner", "kitchen",
      "grass", "street", "sky",   "tree",  "car",    "lamp",   "shelf",  "screen",
      "hand",  "foot",  "arm",    "head",  "cup",    "ball",   "box",    "door",
      "book",  "chair", "bottle", "phone", "bag",    "table",  "push",   "carry"};
  return words;
}

std::string frame_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu.txt", i);
  return buf;
}

std::string video_name(const std::string& cls, std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03zu", i);
  return cls + "_" + buf;
}

void write_frames(const fs::path& dir, const std::vector<std::vector<std::string>>& frames) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    std::string line;
    for (const auto& tok : frames[i]) {
      if (!line.empty()) line += ' ';
      line += tok;
    }
    write_file_atomic(dir / frame_name(i), line + "\n");
  }
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
  std::string body;
  for (const auto& l : lines) body += l + "\n";
  write_file_atomic(path, body);
}

void write_corpora(SynthDataset& ds) {
  std::vector<std::string> state_lines;
  for (const auto& s : ds.states) {
    state_lines.push_back(s.body_part + "\t" + s.state_phrase + "\t" + (s.transitive ? "1" : "0"));
  }
  write_lines(ds.root / "states.tsv", state_lines);
  std::vector<std::string> noun_lines;
  for (const auto& n : ds.nouns) noun_lines.push_back(n.text);
  write_lines(ds.root / "nouns.txt", noun_lines);
  // Reference corpus for the unigram scorer: noun i appears i+1 times.
  std::vector<std::string> corpus;
  for (std::size_t i = 0; i < ds.nouns.size(); ++i) {
    for (std::size_t r = 0; r <= i; ++r) corpus.push_back(ds.nouns[i].text);
  }
  write_lines(ds.root / "corpus.txt", corpus);
}

// Small caption corpus with instance-level and part-level action spans.
void write_caption_corpus(const fs::path& root, Rng& rng) {
  const std::vector<std::vector<std::string>> instance{
      {"person", "jumping"}, {"man", "running", "fast"}, {"woman", "sitting", "down"}};
  const std::vector<std::vector<std::string>> part{
      {"hand", "waving"}, {"foot", "tapping"}, {"head", "nodding", "slowly"}};
  const std::vector<std::string> fillers{"today", "we", "see", "a", "video", "where", "the", "and", "then", "again"};
  auto filler = [&] { return fillers[rng.uniform_int(fillers.size())]; };

  std::string annotations;
  fs::create_directories(root / "captions");
  for (std::size_t d = 0; d < 24; ++d) {
    std::vector<std::pair<std::string, std::string>> doc;
    const std::size_t pieces = 2 + rng.uniform_int(2);
    for (std::size_t p = 0; p < pieces; ++p) {
      for (std::size_t f = 0, nf = 1 + rng.uniform_int(3); f < nf; ++f) doc.emplace_back(filler(), "O");
      const bool inst = rng.uniform_int(2) == 0;
      const auto& span = inst ? instance[rng.uniform_int(instance.size())] : part[rng.uniform_int(part.size())];
      for (std::size_t i = 0; i < span.size(); ++i) {
        doc.emplace_back(span[i], std::string(i == 0 ? "B-" : "I-") + (inst ? "INST" : "PART"));
      }
    }
    doc.emplace_back(filler(), "O");
    if (d < 20) {
      for (const auto& [tok, lab] : doc) annotations += tok + "\t" + lab + "\n";
      annotations += "\n";
    } else {
      std::string text;
      for (const auto& [tok, lab] : doc) text += (text.empty() ? "" : " ") + tok;
      char buf[32];
      std::snprintf(buf, sizeof buf, "caption_%02zu.txt", d - 20);
      write_file_atomic(root / "captions" / buf, text + "\n");
    }
  }
  write_file_atomic(root / "annotations.tsv", annotations);
}

void finish(SynthDataset& ds) {
  write_manifest(ds.manifest, ds.root / "manifest.jsonl");
  write_lines(ds.root / "base.txt", {ds.base_classes.begin(), ds.base_classes.end()});
  write_lines(ds.root / "test.txt", {ds.test_classes.begin(), ds.test_classes.end()});
}

std::string pattern_name(const std::string& segs) {
  std::string s = to_lower(segs);
  return "order_" + s;
}

}  // namespace

std::string motif_a_text() { return "Human's hand pick up the cup"; }
std::string motif_b_text() { return "Human's foot kick the ball"; }

SynthDataset write_order_coded(const fs::path& dir, const SynthOptions& options) {
  if (options.frames < 4 || options.frames % 4 != 0) {
    throw InvalidInput("synth: frame count must be a positive multiple of 4");
  }
  if (options.videos_per_class == 0) throw InvalidInput("synth: videos_per_class must be positive");
  SynthDataset ds;
  ds.root = dir;
  fs::create_directories(dir);
  ds.states = order_states();
  for (const auto& n : order_nouns()) ds.nouns.push_back({n});
  write_corpora(ds);
  Rng rng(options.seed);
  write_caption_corpus(dir, rng);

  // Eight-segment patterns; test patterns are quarter patterns doubled.
  const std::vector<std::string> test_quarters{"AABB", "ABAB", "ABBA", "BABA", "BBAA"};
  std::vector<std::string> test_patterns;
  for (const auto& q : test_quarters) {
    std::string p;
    for (char c : q) p += std::string(2, c);
    test_patterns.push_back(p);
  }
  std::vector<std::string> candidates;
  for (unsigned mask = 0; mask < 256; ++mask) {
    if (__builtin_popcount(mask) != 4) continue;
    std::string p;
    for (int b = 7; b >= 0; --b) p += (mask >> b) & 1u ? 'A' : 'B';
    if (std::find(test_patterns.begin(), test_patterns.end(), p) == test_patterns.end()) candidates.push_back(p);
  }
  rng.shuffle(candidates);
  if (options.base_classes > candidates.size()) throw InvalidInput("synth: too many base classes requested");
  candidates.resize(options.base_classes);

  const auto motif_a = tokenize(motif_a_text());
  const auto motif_b = tokenize(motif_b_text());
  const auto& fillers = filler_words();

  auto make_class = [&](const std::string& name, const std::string& segments, bool test) {
    (test ? ds.test_classes : ds.base_classes).insert(name);
    const std::size_t n = options.frames;
    for (std::size_t v = 0; v < options.videos_per_class; ++v) {
      const std::string id = video_name(name, v);
      const auto shift = static_cast<std::ptrdiff_t>(rng.uniform_int(3)) - 1;
      std::vector<std::vector<std::string>> frames(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto src = static_cast<std::size_t>((static_cast<std::ptrdiff_t>(i + n) - shift) %
                                                  static_cast<std::ptrdiff_t>(n));
        const char seg = segments[src * segments.size() / n];
        frames[i] = seg == 'A' ? motif_a : motif_b;
        for (std::size_t k = 0; k < options.distractors; ++k) {
          frames[i].push_back(fillers[rng.uniform_int(fillers.size())]);
        }
      }
      const fs::path rel = fs::path("frames") / id;
      write_frames(dir / rel, frames);
      ds.manifest.videos.push_back({id, name, dir / rel, n});
    }
  };
  for (std::size_t i = 0; i < test_quarters.size(); ++i) make_class(pattern_name(test_quarters[i]), test_patterns[i], true);
  for (const auto& p : candidates) make_class(pattern_name(p), p, false);
  finish(ds);
  return ds;
}

SynthDataset write_class_named(const fs::path& dir, const SynthOptions& options) {
  if (options.frames == 0 || options.videos_per_class == 0) {
    throw InvalidInput("synth: frames and videos_per_class must be positive");
  }
  SynthDataset ds;
  ds.root = dir;
  fs::create_directories(dir);
  ds.states = order_states();
  for (const auto& n : order_nouns()) ds.nouns.push_back({n});
  write_corpora(ds);
  Rng rng(options.seed);
  write_caption_corpus(dir, rng);

  const std::vector<std::string> test_names{"ride_bike",  "play_guitar", "pour_water", "throw_frisbee",
                                            "brush_teeth", "fold_paper", "climb_rope", "swim_lap"};
  const std::vector<std::string> base_names{"open_door",  "eat_apple", "read_book", "wash_dish",
                                            "drink_tea",  "cut_bread", "type_text", "paint_wall"};
  ToyEncoder hasher;
  std::set<std::size_t> taken;
  for (const auto* names : {&test_names, &base_names}) {
    for (const auto& c : *names) {
      for (const auto& t : tokenize(class_prompt(c))) taken.insert(hasher.bucket(t));
    }
  }
  std::vector<std::string> fillers;
  for (const auto& w : filler_words()) {
    if (!taken.count(hasher.bucket(w))) fillers.push_back(w);
  }

  auto make_class = [&](const std::string& name, bool test) {
    (test ? ds.test_classes : ds.base_classes).insert(name);
    const auto words = tokenize(class_prompt(name));
    for (std::size_t v = 0; v < options.videos_per_class; ++v) {
      const std::string id = video_name(name, v);
      std::vector<std::vector<std::string>> frames(options.frames);
      for (auto& f : frames) {
        f = words;
        for (std::size_t k = 0; k < options.distractors; ++k) f.push_back(fillers[rng.uniform_int(fillers.size())]);
        rng.shuffle(f);
      }
      const fs::path rel = fs::path("frames") / id;
      write_frames(dir / rel, frames);
      ds.manifest.videos.push_back({id, name, dir / rel, options.frames});
    }
  };
  for (const auto& c : test_names) make_class(c, true);
  for (const auto& c : base_names) make_class(c, false);
  finish(ds);
  return ds;
}

}  // namespace kp
