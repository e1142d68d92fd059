#include <doctest.h>

#include <fstream>

#include "kp/error.hpp"
#include "kp/semantics.hpp"
#include "test_support.hpp"

using namespace kp;

namespace {

KnowledgeBase kb_of(std::vector<std::string> texts) {
  std::vector<Proposal> props;
  for (auto& t : texts) props.push_back({t, ProposalSource::Template, ProposalLevel::Basic, {}});
  std::vector<std::vector<Proposal>> sets{props};
  return build_kb(sets);
}

SemanticsMatrix sample_matrix() {
  SemanticsMatrix m;
  m.rows = 2;
  m.cols = 3;
  m.data = {1.5f, -2.0f, 0.0f, 100.0f, 3.25f, -0.125f};
  m.kb_hash = sha256(std::string_view("kb"));
  m.encoder_id = "toy-fnv1a-d256";
  m.sampling_seed = 42;
  return m;
}

CacheKey key_of(const SemanticsMatrix& m, std::string video = "v1") {
  return {std::move(video), m.kb_hash, m.encoder_id, m.sampling_seed};
}

}  // namespace

TEST_CASE("one frame against an identical proposal scores 100") {
  ToyEncoder enc;
  auto kb = kb_of({"kick ball"});
  std::vector<FrameContent> frames{TokenBag{{"kick", "ball"}}};
  auto s = extract_semantics(frames, kb, enc, MatchConfig{});
  REQUIRE(s.rows == 1);
  REQUIRE(s.cols == 1);
  CHECK(s.at(0, 0) == 100.0f);
  CHECK(s.kb_hash == kb.content_hash);
  CHECK(s.encoder_id == enc.id());
}

TEST_CASE("extraction agrees with pairwise matching") {
  ToyEncoder enc;
  auto kb = kb_of({"pick up cup", "kick ball", "open door", "hand wave"});
  std::vector<FrameContent> frames{TokenBag{{"pick", "cup", "room"}}, TokenBag{{"ball"}}, TokenBag{{"pick", "cup", "room"}}};
  SemanticsExtractor ex(enc, kb);
  auto s = ex.extract(frames, 7);
  REQUIRE(s.rows == 3);
  REQUIRE(s.cols == 4);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      std::vector<FrameContent> f{frames[i]};
      std::vector<std::string> t{kb.proposals[j].text};
      auto one = match(enc.embed_frame(f), enc.embed_text(t), MatchConfig{});
      CHECK(std::abs(s.at(i, j) - one.at(0, 0)) <= 1e-6);
    }
    CHECK(s.at(0, i) == s.at(2, i));
  }
  ex.extract(frames, 8);
  CHECK(ex.text_embedding_calls() == 1);
  std::vector<FrameContent> none;
  CHECK_THROWS_AS(ex.extract(none, 0), InvalidInput);
}

TEST_CASE("binary layout") {
  const auto m = sample_matrix();
  const auto bytes = encode_semantics(m);
  const std::size_t expected = 4 + 4 + 32 + 4 + m.encoder_id.size() + 8 + 4 + 4 + 4 * 6 + 4;
  REQUIRE(bytes.size() == expected);
  CHECK(bytes.substr(0, 4) == "KPSC");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(decode_semantics(bytes, "mem") == m);
}

TEST_CASE("cache round trip, absent keys and metadata checks") {
  test::TempDir dir("cache");
  SemanticsCache cache(dir.path());
  const auto m = sample_matrix();
  CHECK_FALSE(cache.get(key_of(m)).has_value());
  cache.put(key_of(m), m);
  CHECK(cache.get(key_of(m)) == m);
  CHECK_FALSE(cache.get(key_of(m, "v2")).has_value());
  auto wrong = key_of(m);
  wrong.sampling_seed = 1;
  CHECK_THROWS_AS(cache.put(wrong, m), InvalidInput);
  const auto p = cache.path_for(key_of(m));
  CHECK(p.parent_path().parent_path() == dir.path());
  CHECK(p.extension() == ".kpsc");
}

TEST_CASE("corrupt cache files raise integrity errors naming the path") {
  test::TempDir dir("corrupt");
  SemanticsCache cache(dir.path());
  const auto m = sample_matrix();
  cache.put(key_of(m), m);
  const auto p = cache.path_for(key_of(m));
  const auto bytes = read_file(p);

  write_file_atomic(p, bytes.substr(0, bytes.size() - 1));
  try {
    cache.get(key_of(m));
    FAIL("expected integrity error");
  } catch (const IntegrityError& e) {
    CHECK(e.path() == p);
  }

  auto flipped = bytes;
  flipped[20] ^= 0x01;
  write_file_atomic(p, flipped);
  CHECK_THROWS_AS(cache.get(key_of(m)), IntegrityError);

  auto magic = bytes;
  magic[0] = 'X';
  write_file_atomic(p, magic);
  CHECK_THROWS_AS(cache.get(key_of(m)), IntegrityError);
}

TEST_CASE("recomputed semantics equal cached semantics bit for bit") {
  test::TempDir dir("recompute");
  ToyEncoder enc;
  auto kb = kb_of({"pick up cup", "kick ball", "open door"});
  std::vector<FrameContent> frames{TokenBag{{"pick", "up", "cup"}}, TokenBag{{"ball", "tree"}}};
  SemanticsCache cache(dir.path());
  auto s = extract_semantics(frames, kb, enc, MatchConfig{}, 3);
  CacheKey key{"vid", kb.content_hash, enc.id(), 3};
  cache.put(key, s);
  auto again = extract_semantics(frames, kb, enc, MatchConfig{}, 3);
  CHECK(*cache.get(key) == again);

  auto kb2 = kb_of({"pick up cup", "kick ball", "open window"});
  CHECK(kb2.content_hash != kb.content_hash);
  CHECK_FALSE(cache.get({"vid", kb2.content_hash, enc.id(), 3}).has_value());
}

TEST_CASE("raw frame features") {
  ToyEncoder enc;
  std::vector<FrameContent> frames{TokenBag{{"a"}}};
  auto r = raw_frame_features(frames, enc, 0);
  CHECK(r.rows == 1);
  CHECK(r.cols == 256);
  CHECK(r.kb_hash == raw_features_digest());
}
