#include <doctest.h>

#include "kp/error.hpp"
#include "kp/pipeline.hpp"
#include "kp/synth.hpp"
#include "test_support.hpp"

using namespace kp;

namespace {

KnowledgeBase template_kb(const SynthDataset& ds) {
  std::vector<std::vector<Proposal>> sets{generate_template_proposals(ds.states, ds.nouns)};
  return build_kb(sets);
}

SynthOptions small_options() {
  SynthOptions o;
  o.videos_per_class = 10;
  o.base_classes = 4;
  return o;
}

std::vector<FrameContent> bag_frames(std::vector<std::vector<std::string>> bags) {
  std::vector<FrameContent> out;
  for (auto& b : bags) out.emplace_back(TokenBag{std::move(b)});
  return out;
}

}  // namespace

TEST_CASE("order-coded synthetic dataset layout") {
  test::TempDir dir("synth");
  auto ds = write_order_coded(dir.path(), small_options());
  CHECK(ds.test_classes ==
        std::set<std::string>{"order_aabb", "order_abab", "order_abba", "order_baba", "order_bbaa"});
  CHECK(ds.base_classes.size() == 4);
  CHECK(ds.test().videos.size() == 50);
  CHECK(ds.base().videos.size() == 40);
  auto kb = template_kb(ds);
  CHECK(kb.size() == 60);
  auto texts = kb.texts();
  CHECK(std::find(texts.begin(), texts.end(), motif_a_text()) != texts.end());
  CHECK(std::find(texts.begin(), texts.end(), motif_b_text()) != texts.end());
  auto reloaded = load_manifest(dir / "manifest.jsonl");
  CHECK(reloaded.videos.size() == ds.manifest.videos.size());
  CHECK(read_split(dir / "test.txt") == ds.test_classes);
  for (const auto& b : ds.base_classes) CHECK_FALSE(ds.test_classes.contains(b));
}

TEST_CASE("video semantics memoizes and caches") {
  test::TempDir dir("vsem");
  auto ds = write_order_coded(dir / "data", small_options());
  ToyEncoder enc;
  auto kb = template_kb(ds);
  const auto test_split = ds.test();
  const auto& video = test_split.videos.front();

  VideoSemantics first(enc, kb, dir / "cache");
  auto a = first.get(video, SamplingMode::Random, 17);
  CHECK(a.rows == 16);
  CHECK(a.cols == 60);
  CHECK(a.sampling_seed == 17);
  CHECK(a.kb_hash == kb.content_hash);
  first.get(video, SamplingMode::Random, 17);
  CHECK(first.computed() == 1);
  first.get(video, SamplingMode::Random, 18);
  CHECK(first.computed() == 2);
  auto center = first.get(video, SamplingMode::Center, 99);
  CHECK(center.sampling_seed == kCenterSamplingSeed);

  VideoSemantics second(enc, kb, dir / "cache");
  CHECK(second.get(video, SamplingMode::Random, 17) == a);
  CHECK(second.computed() == 0);

  VideoSemantics uncached(enc, kb, std::nullopt);
  CHECK(uncached.get(video, SamplingMode::Random, 17) == a);
  CHECK(uncached.computed() == 1);

  auto seq = uncached.sequence(video, SamplingMode::Random, 17);
  CHECK(seq.shape() == nn::Shape{16, 60});
  CHECK(seq[5] == static_cast<double>(a.data[5]));

  VideoSemantics raw(enc, std::nullopt, std::nullopt);
  CHECK(raw.feature_dim() == enc.dim());
  CHECK(raw.get(video, SamplingMode::Center, 0).cols == enc.dim());
}

TEST_CASE("short videos are sampled with clamping") {
  test::TempDir dir("short");
  auto opts = small_options();
  opts.frames = 8;
  auto ds = write_order_coded(dir.path(), opts);
  ToyEncoder enc;
  VideoSemantics sem(enc, template_kb(ds), std::nullopt);
  auto m = sem.get(ds.test().videos.front(), SamplingMode::Random, 3);
  CHECK(m.rows == 16);
}

TEST_CASE("training set labels follow sorted class names") {
  test::TempDir dir("trainset");
  auto ds = write_order_coded(dir.path(), small_options());
  ToyEncoder enc;
  VideoSemantics sem(enc, template_kb(ds), std::nullopt);
  auto set = build_training_set(sem, ds.test(), SamplingPlan{}, 2);
  CHECK(set.classes == std::vector<std::string>(ds.test_classes.begin(), ds.test_classes.end()));
  REQUIRE(set.sequences.size() == 50);
  for (std::size_t i = 0; i < 50; ++i) {
    CHECK(set.classes[set.labels[i]] == ds.test().videos[i].class_name);
    CHECK(set.sequences[i].shape() == nn::Shape{16, 60});
  }
}

TEST_CASE("zero-shot classification rules") {
  ToyEncoder enc;
  const std::vector<std::string> prompts{"ride bike", "play guitar", "open door"};
  std::vector<std::vector<FrameContent>> guitar{bag_frames({{"play", "guitar"}, {"guitar", "play", "xyz"}})};
  CHECK(zeroshot_classify(guitar, prompts, enc) == 1);

  const std::vector<std::string> same{"open door", "open door"};
  std::vector<std::vector<FrameContent>> door{bag_frames({{"open", "door"}})};
  CHECK(zeroshot_classify(door, same, enc) == 0);

  std::vector<std::vector<FrameContent>> empty{bag_frames({{}})};
  CHECK(zeroshot_classify(empty, prompts, enc) == 0);

  const std::vector<std::string> none;
  CHECK_THROWS_AS(zeroshot_classify(guitar, none, enc), InvalidInput);
  CHECK(class_prompt("play_guitar") == "play guitar");
}

TEST_CASE("zero-shot learner on the class-named dataset") {
  test::TempDir dir("named");
  auto opts = small_options();
  auto ds = write_class_named(dir.path(), opts);
  ToyEncoder enc;
  EvalOptions eo;
  eo.tasks = 10;
  SamplingPlan plan;
  plan.test_samplings = 2;
  auto r = evaluate([&](std::uint64_t) { return std::make_unique<ZeroShotLearner>(enc, plan); }, ds.test(), eo);
  CHECK(r.mean == 1.0);
}

TEST_CASE("episode learner end to end") {
  test::TempDir dir("learner");
  auto ds = write_order_coded(dir.path(), small_options());
  ToyEncoder enc;
  VideoSemantics sem(enc, template_kb(ds), std::nullopt);
  SamplingPlan plan;
  plan.test_samplings = 2;
  auto train = build_training_set(sem, ds.base(), plan, 1);
  TmnConfig cfg;
  cfg.input_dim = 60;
  cfg.hidden_dim = 16;
  cfg.classes = train.classes.size();
  TmnModel model(cfg, 1);
  BaseSchedule bs;
  bs.epochs = 2;
  train_base(model, train.sequences, train.labels, bs, 2);

  auto ep = sample_episode(ds.test(), 5, 5, 5, 17);
  TmnEpisodeLearner a(model, sem, plan, EpisodeSchedule{}, 17);
  TmnEpisodeLearner b(model, sem, plan, EpisodeSchedule{}, 17);
  a.fit(ep);
  b.fit(ep);
  CHECK(a.head().weight == b.head().weight);
  auto pa = a.predict_proba(ep.query[0]);
  CHECK(pa == b.predict_proba(ep.query[0]));
  double sum = 0.0;
  for (double p : pa) sum += p;
  CHECK(sum == doctest::Approx(1.0));

  plan.resample_support = true;
  TmnEpisodeLearner c(model, sem, plan, EpisodeSchedule{}, 17);
  c.fit(ep);
  CHECK_FALSE(c.head().weight == a.head().weight);

  EvalOptions eo;
  eo.tasks = 2;
  auto ranking = importance_ranking(model, sem, ds.test(), eo, plan, EpisodeSchedule{}, 1, 5);
  REQUIRE(ranking.size() == 5);
  for (std::size_t i = 1; i < ranking.size(); ++i) CHECK(ranking[i - 1].score >= ranking[i].score);
  CHECK_FALSE(ranking[0].text.empty());
}
