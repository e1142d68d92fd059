#include <doctest.h>

#include <map>

#include "kp/error.hpp"
#include "kp/proposal_extractor.hpp"
#include "test_support.hpp"

using namespace kp;
using L = BioLabel;

namespace {

// Token "l<k>" gets one-hot feature k; anything else is all zeros.
class LabelIdentityFeatures final : public TokenFeatureProvider {
 public:
  std::string id() const override { return "label-identity"; }
  std::size_t dim() const override { return kNumBioLabels; }
  nn::Tensor features(std::span<const std::string> tokens) const override {
    nn::Tensor t({tokens.size(), kNumBioLabels}, 0.0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].size() == 2 && tokens[i][0] == 'l') t[i * kNumBioLabels + (tokens[i][1] - '0')] = 1.0;
    }
    return t;
  }
};

CaptionDocument identity_doc(const std::vector<L>& labels) {
  CaptionDocument d;
  d.name = "identity";
  for (auto l : labels) d.tokens.push_back("l" + std::to_string(static_cast<int>(l)));
  d.labels = labels;
  return d;
}

}  // namespace

TEST_CASE("label names") {
  CHECK(parse_bio_label("B-INST") == L::BInst);
  CHECK(parse_bio_label("I_PART") == L::IPart);
  CHECK(parse_bio_label("O") == L::O);
  CHECK_FALSE(parse_bio_label("B-VERB").has_value());
  CHECK(to_string(L::IInst) == "I-INST");
}

TEST_CASE("decode examples") {
  std::vector<std::string> toks8(8, "w");
  std::vector<L> all_o(8, L::O);
  CHECK(decode_bio(all_o, toks8).spans.empty());

  std::vector<std::string> toks{"do", "a", "x", "kick"};
  std::vector<L> labels{L::BInst, L::IInst, L::O, L::BPart};
  auto d = decode_bio(labels, toks);
  REQUIRE(d.spans.size() == 2);
  CHECK(d.spans[0] == ExtractedSpan{0, 2, ProposalLevel::Instance, "do a"});
  CHECK(d.spans[1] == ExtractedSpan{3, 4, ProposalLevel::Part, "kick"});
  CHECK(d.repairs.empty());

  std::vector<std::string> t3{"a", "b", "c"};
  std::vector<L> rep{L::O, L::IPart, L::IPart};
  auto r = decode_bio(rep, t3);
  REQUIRE(r.spans.size() == 1);
  CHECK(r.spans[0].start == 1);
  CHECK(r.spans[0].end == 3);
  CHECK(r.spans[0].level == ProposalLevel::Part);
  CHECK(r.repairs == std::vector<std::size_t>{1});

  std::vector<L> switch_type{L::BInst, L::IPart};
  std::vector<std::string> t2{"a", "b"};
  auto s = decode_bio(switch_type, t2);
  CHECK(s.spans.size() == 2);
  CHECK(s.repairs == std::vector<std::size_t>{1});

  std::vector<L> short_labels{L::O};
  CHECK_THROWS_AS(decode_bio(short_labels, t2), InvalidInput);
}

TEST_CASE("encode then decode round trips") {
  std::vector<ExtractedSpan> spans{{0, 2, ProposalLevel::Instance, "a b"}, {2, 3, ProposalLevel::Part, "c"},
                                   {4, 6, ProposalLevel::Part, "e f"}};
  std::vector<std::string> toks{"a", "b", "c", "d", "e", "f"};
  auto labels = encode_spans(spans, toks.size());
  auto back = decode_bio(labels, toks);
  CHECK(back.spans == spans);
  CHECK(back.repairs.empty());
}

TEST_CASE("hashed window features") {
  HashedWindowFeatures f;
  CHECK(f.dim() == 768);
  std::vector<std::string> toks{"pick", "up", "cup"};
  auto x = f.features(toks);
  REQUIRE(x.shape() == nn::Shape{3, 768});
  ToyEncoder enc;
  // middle token: prev | self | next
  CHECK(x[768 + enc.bucket("pick")] == 1.0);
  CHECK(x[768 + 256 + enc.bucket("up")] == 1.0);
  CHECK(x[768 + 512 + enc.bucket("cup")] == 1.0);
  double first_prev = 0.0;
  for (std::size_t j = 0; j < 256; ++j) first_prev += x[j];
  CHECK(first_prev == 0.0);
}

TEST_CASE("separable one-hot corpus trains to full accuracy") {
  LabelIdentityFeatures feats;
  std::vector<CaptionDocument> docs{identity_doc({L::O, L::BInst, L::IInst, L::O, L::BPart, L::IPart, L::IPart})};
  TaggerHyper hyper;
  hyper.epochs = 50;
  hyper.lr = 0.1;
  TaggerTrainLog log;
  auto tagger = train_tagger(docs, feats, hyper, &log);
  CHECK(log.train_accuracy == 1.0);
  CHECK(log.final_loss < log.initial_loss);
  CHECK(tagger.predict(feats.features(docs[0].tokens)) == *docs[0].labels);
}

TEST_CASE("zero epochs return the initialization") {
  LabelIdentityFeatures feats;
  std::vector<CaptionDocument> docs{identity_doc({L::O, L::BInst})};
  TaggerHyper hyper;
  hyper.epochs = 0;
  auto t = train_tagger(docs, feats, hyper);
  auto init = init_tagger(feats, hyper.seed);
  CHECK(t.weight == init.weight);
  CHECK(t.bias == init.bias);
}

TEST_CASE("duplicated corpus gives the same parameters") {
  LabelIdentityFeatures feats;
  auto doc = identity_doc({L::O, L::BInst, L::IInst, L::BPart, L::O});
  std::vector<CaptionDocument> one{doc};
  std::vector<CaptionDocument> two{doc, doc};
  TaggerHyper hyper;
  hyper.epochs = 30;
  auto a = train_tagger(one, feats, hyper);
  auto b = train_tagger(two, feats, hyper);
  for (std::size_t i = 0; i < a.weight.size(); ++i) CHECK(a.weight[i] == doctest::Approx(b.weight[i]).epsilon(1e-9));
  for (std::size_t i = 0; i < a.bias.size(); ++i) CHECK(a.bias[i] == doctest::Approx(b.bias[i]).epsilon(1e-9));
}

TEST_CASE("training input errors") {
  LabelIdentityFeatures feats;
  CHECK_THROWS_AS(train_tagger({}, feats, TaggerHyper{}), InvalidInput);
  CaptionDocument unlabeled{"plain", {"a"}, std::nullopt};
  std::vector<CaptionDocument> docs{unlabeled};
  try {
    train_tagger(docs, feats, TaggerHyper{});
    FAIL("expected error");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("plain") != std::string::npos);
  }

  test::TempDir dir("ann");
  write_file_atomic(dir / "a.tsv", "hand\tB-PART\nwave\tI-PART\n\nrun\tB-VERB\n");
  try {
    read_annotations(dir / "a.tsv");
    FAIL("expected error");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("document #1") != std::string::npos);
  }
}

TEST_CASE("extraction emits tpn proposals and respects argmax scaling") {
  LabelIdentityFeatures feats;
  std::vector<CaptionDocument> docs{identity_doc({L::O, L::BInst, L::IInst, L::O, L::BPart})};
  TaggerHyper hyper;
  hyper.epochs = 100;
  auto tagger = train_tagger(docs, feats, hyper);
  CaptionDocument plain{"c", docs[0].tokens, std::nullopt};
  auto props = extract_proposals(plain, tagger, feats);
  REQUIRE(props.size() == 2);
  CHECK(props[0].text == "l1 l2");
  CHECK(props[0].source == ProposalSource::Tpn);
  CHECK(props[0].level == ProposalLevel::Instance);
  CHECK(props[1].level == ProposalLevel::Part);

  auto scaled = tagger;
  for (auto& v : scaled.weight.data()) v *= 3.5;
  for (auto& v : scaled.bias.data()) v *= 3.5;
  auto x = feats.features(plain.tokens);
  CHECK(scaled.predict(x) == tagger.predict(x));

  CaptionDocument empty{"e", {}, std::nullopt};
  CHECK(extract_proposals(empty, tagger, feats).empty());

  HashedWindowFeatures other;
  CHECK_THROWS_AS(extract_proposals(plain, tagger, other), InvalidInput);
}

TEST_CASE("tagger save and load") {
  test::TempDir dir("tagger");
  HashedWindowFeatures feats;
  auto t = init_tagger(feats, 3);
  save_tagger(t, dir / "t.json");
  auto back = load_tagger(dir / "t.json");
  CHECK(back.feature_provider_id == t.feature_provider_id);
  CHECK(back.weight == t.weight);
  CHECK(back.bias == t.bias);
}
