#include <doctest.h>

#include <algorithm>
#include <set>

#include "kp/error.hpp"
#include "kp/fewshot.hpp"
#include "kp/util.hpp"
#include "sampler_fixtures.hpp"
#include "test_support.hpp"

using namespace kp;

TEST_CASE("sparse sampling examples") {
  auto c16 = sparse_sample(16, 16, SamplingMode::Center);
  for (std::size_t i = 0; i < 16; ++i) CHECK(c16[i] == i);

  auto c32 = sparse_sample(32, 16, SamplingMode::Center);
  for (std::size_t i = 0; i < 16; ++i) CHECK(c32[i] == 2 * i + 1);

  const std::vector<std::size_t> c4_expected{0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 3, 3, 3, 3};
  CHECK(sparse_sample(4, 16, SamplingMode::Center) == c4_expected);
  CHECK(sparse_sample(4, 16, SamplingMode::Random, 99) == c4_expected);
  CHECK(sparse_sample(1, 16, SamplingMode::Random, 3) == std::vector<std::size_t>(16, 0));

  CHECK_THROWS_AS(sparse_sample(0, 16, SamplingMode::Center), InvalidInput);
}

TEST_CASE("sparse sampling properties") {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t length = 1 + rng.uniform_int(300);
    const std::size_t n = 1 + rng.uniform_int(40);
    const std::uint64_t seed = rng.uniform_int(1'000'000);
    for (auto mode : {SamplingMode::Random, SamplingMode::Center}) {
      auto idx = sparse_sample(length, n, mode, seed);
      REQUIRE(idx.size() == n);
      CHECK(std::is_sorted(idx.begin(), idx.end()));
      for (std::size_t i = 0; i < n; ++i) {
        CHECK(idx[i] < length);
        const std::size_t lo = i * length / n, hi = (i + 1) * length / n;
        if (lo < hi) {
          CHECK(idx[i] >= lo);
          CHECK(idx[i] < hi);
        }
      }
    }
    CHECK(sparse_sample(length, n, SamplingMode::Random, seed) ==
          sparse_sample(length, n, SamplingMode::Random, seed));
  }
}

TEST_CASE("random sparse sampling covers each segment") {
  std::set<std::size_t> seen;
  for (std::uint64_t s = 0; s < 200; ++s) seen.insert(sparse_sample(64, 16, SamplingMode::Random, s)[0]);
  CHECK(seen == std::set<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("episode counts and disjointness") {
  const Manifest m = test::tiny_manifest(8, 12);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto ep = sample_episode(m, 5, 5, 5, seed);
    REQUIRE(ep.classes.size() == 5);
    CHECK(std::set<std::string>(ep.classes.begin(), ep.classes.end()).size() == 5);
    REQUIRE(ep.support.size() == 25);
    REQUIRE(ep.query.size() == 25);
    std::set<std::string> ids;
    for (std::size_t i = 0; i < 25; ++i) {
      CHECK(ep.support[i].class_name == ep.classes[ep.support_labels[i]]);
      CHECK(ep.query[i].class_name == ep.classes[ep.query_labels[i]]);
      ids.insert(ep.support[i].video_id);
      ids.insert(ep.query[i].video_id);
    }
    CHECK(ids.size() == 50);
  }
  auto a = sample_episode(m, 5, 5, 5, 42);
  auto b = sample_episode(m, 5, 5, 5, 42);
  CHECK(a.classes == b.classes);
  for (std::size_t i = 0; i < 25; ++i) {
    CHECK(a.support[i].video_id == b.support[i].video_id);
    CHECK(a.query[i].video_id == b.query[i].video_id);
  }
}

TEST_CASE("episode deficits are reported") {
  const Manifest m = test::tiny_manifest(4, 12);
  try {
    sample_episode(m, 5, 5, 5, 1);
    FAIL("expected an error");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("found 4") != std::string::npos);
  }
  Manifest short_class = test::tiny_manifest(5, 12);
  short_class.videos.resize(short_class.videos.size() - 3);
  try {
    sample_episode(short_class, 5, 5, 5, 1);
    FAIL("expected an error");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("class4(9)") != std::string::npos);
  }
}

TEST_CASE("episode sampler is uniform over the tiny outcome space") {
  auto r = test::episode_uniformity(10'000, 0);
  CHECK(r.outcomes == 8);
  CHECK(r.max_sigma <= 3.0);
  CHECK(r.chi_square <= test::kChiSquare7df999);
}

namespace {

class OracleLearner final : public EpisodeLearner {
 public:
  void fit(const Episode& ep) override { classes_ = ep.classes; }
  std::size_t predict(const VideoRecord& q) override {
    return std::find(classes_.begin(), classes_.end(), q.class_name) - classes_.begin();
  }

 private:
  std::vector<std::string> classes_;
};

class RandomLearner final : public EpisodeLearner {
 public:
  explicit RandomLearner(std::uint64_t seed) : rng_(seed) {}
  void fit(const Episode&) override {}
  std::size_t predict(const VideoRecord&) override { return rng_.uniform_int(5); }

 private:
  Rng rng_;
};

}  // namespace

TEST_CASE("evaluation with oracle and random learners") {
  const Manifest m = test::tiny_manifest(10, 10);
  EvalOptions opt;
  opt.tasks = 500;
  opt.jobs = 2;
  auto oracle = evaluate([](std::uint64_t) { return std::make_unique<OracleLearner>(); }, m, opt);
  CHECK(oracle.mean == 1.0);
  CHECK(oracle.ci95 == 0.0);
  CHECK(oracle.task_accuracies.size() == 500);

  auto random = evaluate([](std::uint64_t s) { return std::make_unique<RandomLearner>(s); }, m, opt);
  CHECK(random.mean >= 0.16);
  CHECK(random.mean <= 0.24);
  double sum = 0.0;
  for (double a : random.task_accuracies) sum += a;
  CHECK(std::abs(sum / 500.0 - random.mean) <= 1e-12);

  auto again = evaluate([](std::uint64_t s) { return std::make_unique<RandomLearner>(s); }, m, opt);
  CHECK(report_to_json(again).dump() == report_to_json(random).dump());

  opt.tasks = 1;
  auto single = evaluate([](std::uint64_t s) { return std::make_unique<RandomLearner>(s); }, m, opt);
  CHECK(single.task_accuracies.size() == 1);
  CHECK(single.ci95 == 0.0);

  opt.tasks = 0;
  CHECK_THROWS_AS(evaluate([](std::uint64_t) { return std::make_unique<OracleLearner>(); }, m, opt), InvalidInput);
}

TEST_CASE("summary statistics") {
  auto r = summarize({0.2, 0.4, 0.6, 0.8});
  CHECK(r.mean == doctest::Approx(0.5));
  // sample std of {0.2,0.4,0.6,0.8} is sqrt(0.2/3)
  CHECK(r.ci95 == doctest::Approx(1.96 * std::sqrt(0.2 / 3.0) / 2.0));
  auto back = report_from_json(report_to_json(r));
  CHECK(back.task_accuracies == r.task_accuracies);
  CHECK(back.ci95 == r.ci95);
}

TEST_CASE("manifest files") {
  test::TempDir dir("manifest");
  Manifest m = test::tiny_manifest(2, 2);
  for (auto& v : m.videos) v.frames_dir = dir.path() / "frames" / v.video_id;
  write_manifest(m, dir / "manifest.jsonl");
  auto back = load_manifest(dir / "manifest.jsonl");
  REQUIRE(back.videos.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.videos[i].video_id == m.videos[i].video_id);
    CHECK(back.videos[i].class_name == m.videos[i].class_name);
    CHECK(back.videos[i].frames_dir.lexically_normal() == m.videos[i].frames_dir.lexically_normal());
    CHECK(back.videos[i].frame_count == 16);
  }
  CHECK(back.classes() == std::set<std::string>{"class0", "class1"});
  CHECK(back.restricted_to({"class1"}).videos.size() == 2);

  write_file_atomic(dir / "dup.jsonl",
                    "{\"video_id\":\"a\",\"class\":\"x\",\"frames_dir\":\"f\",\"frame_count\":3}\n"
                    "{\"video_id\":\"a\",\"class\":\"y\",\"frames_dir\":\"g\",\"frame_count\":3}\n");
  CHECK_THROWS_AS(load_manifest(dir / "dup.jsonl"), InvalidInput);
  write_file_atomic(dir / "bad.jsonl", "{\"video_id\":\"a\"}\n");
  CHECK_THROWS_AS(load_manifest(dir / "bad.jsonl"), InvalidInput);
  write_file_atomic(dir / "zero.jsonl", "{\"video_id\":\"a\",\"class\":\"x\",\"frames_dir\":\"f\",\"frame_count\":0}\n");
  CHECK_THROWS_AS(load_manifest(dir / "zero.jsonl"), InvalidInput);

  write_file_atomic(dir / "split.txt", "b\n\n a \n");
  CHECK(read_split(dir / "split.txt") == std::set<std::string>{"a", "b"});
}

TEST_CASE("frame loading") {
  test::TempDir dir("frames");
  std::filesystem::create_directories(dir / "v");
  write_file_atomic(dir / "v" / "frame_000.txt", "hand cup");
  write_file_atomic(dir / "v" / "frame_001.png", std::string("\x89PNG", 4));
  VideoRecord v{"v", "c", dir / "v", 2};
  std::vector<std::size_t> idx{1, 0, 0};
  auto frames = load_frames(v, idx);
  REQUIRE(frames.size() == 3);
  CHECK(std::get<ImageRef>(frames[0]).bytes == std::string("\x89PNG", 4));
  CHECK(std::get<TokenBag>(frames[1]).tokens == std::vector<std::string>{"hand", "cup"});
  std::vector<std::size_t> too_far{2};
  CHECK_THROWS_AS(load_frames(v, too_far), InvalidInput);
  VideoRecord missing{"m", "c", dir / "missing", 2};
  CHECK_THROWS_AS(load_frames(missing, idx), InvalidInput);
}
