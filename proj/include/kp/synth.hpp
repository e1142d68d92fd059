#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "kp/fewshot.hpp"
#include "kp/knowledge_base.hpp"

namespace kp {

struct SynthOptions {
  std::size_t videos_per_class = 40;
  std::size_t frames = 16;
  std::size_t distractors = 2;  // extra random tokens per frame
  std::size_t base_classes = 20;
  std::uint64_t seed = 17;
};

// Files written under the output directory:
//   manifest.jsonl, base.txt, test.txt, states.tsv, nouns.txt, corpus.txt,
//   annotations.tsv, captions/*.txt, frames/<video_id>/frame_NNN.txt
struct SynthDataset {
  std::filesystem::path root;
  Manifest manifest;
  std::set<std::string> base_classes;
  std::set<std::string> test_classes;
  std::vector<BodyPartState> states;
  std::vector<ObjectNoun> nouns;

  Manifest base() const { return manifest.restricted_to(base_classes); }
  Manifest test() const { return manifest.restricted_to(test_classes); }
};

// Two token motifs A and B laid out over four quarters of each video. Test
// classes are the quarter patterns AABB, ABAB, ABBA, BABA, BBAA; base classes
// are other balanced eight-segment patterns. Every video shows each motif in
// exactly half its frames, so only temporal order separates the classes. Each
// video is cyclically shifted by -1, 0 or +1 frames. The states and nouns
// expand to 60 template proposals that include both motifs.
SynthDataset write_order_coded(const std::filesystem::path& dir, const SynthOptions& options);

// Classes named after two-word actions whose tokens appear in every frame of
// their videos, among distractors that share no hash bucket with any class word.
SynthDataset write_class_named(const std::filesystem::path& dir, const SynthOptions& options);

// The motif proposal texts of the order-coded dataset.
std::string motif_a_text();
std::string motif_b_text();

}  // namespace kp
