#include "kp/proposal_extractor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "kp/error.hpp"
#include "kp/nn/layers.hpp"
#include "kp/nn/optim.hpp"

namespace kp {

using nlohmann::json;

std::string_view to_string(BioLabel l) {
  switch (l) {
    case BioLabel::O: return "O";
    case BioLabel::BInst: return "B-INST";
    case BioLabel::IInst: return "I-INST";
    case BioLabel::BPart: return "B-PART";
    case BioLabel::IPart: return "I-PART";
  }
  return "O";
}

std::optional<BioLabel> parse_bio_label(std::string_view s) {
  std::string t(s);
  std::replace(t.begin(), t.end(), '_', '-');
  for (std::size_t i = 0; i < kNumBioLabels; ++i) {
    auto l = static_cast<BioLabel>(i);
    if (t == to_string(l)) return l;
  }
  return std::nullopt;
}

namespace {

bool is_begin(BioLabel l) { return l == BioLabel::BInst || l == BioLabel::BPart; }

ProposalLevel level_of(BioLabel l) {
  return (l == BioLabel::BInst || l == BioLabel::IInst) ? ProposalLevel::Instance
                                                        : ProposalLevel::Part;
}

std::string join_tokens(std::span<const std::string> tokens, std::size_t start, std::size_t end) {
  std::string s;
  for (std::size_t i = start; i < end; ++i) {
    if (i > start) s.push_back(' ');
    s += tokens[i];
  }
  return s;
}

}  // namespace

BioDecode decode_bio(std::span<const BioLabel> labels, std::span<const std::string> tokens) {
  if (labels.size() != tokens.size()) {
    throw InvalidInput("decode_bio: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(tokens.size()) + " tokens");
  }
  BioDecode out;
  std::optional<ExtractedSpan> open;
  auto close = [&](std::size_t end) {
    if (!open) return;
    open->end = end;
    open->text = join_tokens(tokens, open->start, end);
    out.spans.push_back(std::move(*open));
    open.reset();
  };
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const BioLabel l = labels[i];
    if (l == BioLabel::O) {
      close(i);
    } else if (is_begin(l)) {
      close(i);
      open = ExtractedSpan{i, i, level_of(l), {}};
    } else if (!open || open->level != level_of(l)) {
      close(i);
      open = ExtractedSpan{i, i, level_of(l), {}};
      out.repairs.push_back(i);
    }
  }
  close(labels.size());
  return out;
}

std::vector<BioLabel> encode_spans(std::span<const ExtractedSpan> spans, std::size_t length) {
  std::vector<BioLabel> labels(length, BioLabel::O);
  for (const auto& s : spans) {
    if (s.start >= s.end || s.end > length) throw InvalidInput("encode_spans: span out of range");
    const bool inst = s.level == ProposalLevel::Instance;
    labels[s.start] = inst ? BioLabel::BInst : BioLabel::BPart;
    for (std::size_t i = s.start + 1; i < s.end; ++i) {
      labels[i] = inst ? BioLabel::IInst : BioLabel::IPart;
    }
  }
  return labels;
}

HashedWindowFeatures::HashedWindowFeatures(std::size_t buckets) : buckets_(buckets), hasher_(buckets) {}

std::string HashedWindowFeatures::id() const {
  return "hashed-window3-d" + std::to_string(buckets_);
}

nn::Tensor HashedWindowFeatures::features(std::span<const std::string> tokens) const {
  if (tokens.empty()) return {};
  nn::Tensor f({tokens.size(), dim()}, 0.0);
  std::vector<std::size_t> idx(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) idx[i] = hasher_.bucket(to_lower(tokens[i]));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    double* row = &f[i * dim()];
    if (i > 0) row[idx[i - 1]] = 1.0;
    row[buckets_ + idx[i]] = 1.0;
    if (i + 1 < tokens.size()) row[2 * buckets_ + idx[i + 1]] = 1.0;
  }
  return f;
}

nn::Tensor Tagger::logits(const nn::Tensor& features) const {
  if (features.empty()) return {};
  if (features.rank() != 2 || features.dim(1) != feature_dim) {
    throw ShapeError("tagger expects [T, " + std::to_string(feature_dim) + "] features, got " +
                     nn::shape_string(features.shape()));
  }
  return nn::linear(nn::Var(features), nn::Var(weight), nn::Var(bias)).value();
}

std::vector<BioLabel> Tagger::predict(const nn::Tensor& features) const {
  if (features.empty()) return {};
  nn::Tensor l = logits(features);
  std::vector<BioLabel> out(features.dim(0));
  for (std::size_t t = 0; t < out.size(); ++t) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kNumBioLabels; ++c) {
      if (l[t * kNumBioLabels + c] > l[t * kNumBioLabels + best]) best = c;
    }
    out[t] = static_cast<BioLabel>(best);
  }
  return out;
}

Tagger init_tagger(const TokenFeatureProvider& features, std::uint64_t seed) {
  Tagger t;
  t.feature_provider_id = features.id();
  t.feature_dim = features.dim();
  t.weight = nn::Tensor({t.feature_dim, kNumBioLabels}, 0.0);
  t.bias = nn::Tensor({kNumBioLabels}, 0.0);
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(t.feature_dim));
  for (double& w : t.weight.data()) w = rng.uniform(-bound, bound);
  return t;
}

Tagger train_tagger(std::span<const CaptionDocument> docs, const TokenFeatureProvider& features,
                    const TaggerHyper& hyper, TaggerTrainLog* log) {
  if (docs.empty()) throw InvalidInput("train_tagger: empty corpus");
  std::size_t total = 0;
  for (const auto& d : docs) {
    if (!d.labels) throw InvalidInput("train_tagger: document '" + d.name + "' is not annotated");
    if (d.labels->size() != d.tokens.size()) {
      throw InvalidInput("train_tagger: document '" + d.name + "' has misaligned labels");
    }
    for (auto l : *d.labels) {
      if (static_cast<std::size_t>(l) >= kNumBioLabels) {
        throw InvalidInput("train_tagger: document '" + d.name + "' has an unknown label");
      }
    }
    total += d.tokens.size();
  }
  if (total == 0) throw InvalidInput("train_tagger: corpus has no tokens");

  const std::size_t dim = features.dim();
  nn::Tensor x({total, dim}, 0.0);
  std::vector<std::size_t> y;
  y.reserve(total);
  std::size_t row = 0;
  for (const auto& d : docs) {
    if (d.tokens.empty()) continue;
    nn::Tensor f = features.features(d.tokens);
    std::copy(f.data().begin(), f.data().end(), x.data().begin() + static_cast<std::ptrdiff_t>(row * dim));
    for (auto l : *d.labels) y.push_back(static_cast<std::size_t>(l));
    row += d.tokens.size();
  }

  Tagger init = init_tagger(features, hyper.seed);
  nn::Parameter w{"weight", nn::Var(init.weight, true)};
  nn::Parameter b{"bias", nn::Var(init.bias, true)};
  std::vector<nn::Parameter*> params{&w, &b};
  nn::Adam adam(hyper.lr, hyper.beta1, hyper.beta2);
  const nn::Var input(x);

  auto loss_of = [&] { return nn::cross_entropy_loss(nn::linear(input, w.var, b.var), y); };
  double initial = loss_of().value()[0];
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    w.var.zero_grad();
    b.var.zero_grad();
    nn::Var loss = loss_of();
    nn::backward(loss);
    auto slots = nn::trainable_slots(params);
    adam.step(slots);
  }

  Tagger out = std::move(init);
  out.weight = w.var.value();
  out.bias = b.var.value();
  if (log) {
    log->initial_loss = initial;
    log->final_loss = loss_of().value()[0];
    auto pred = out.predict(x);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < total; ++i) correct += static_cast<std::size_t>(pred[i]) == y[i];
    log->train_accuracy = static_cast<double>(correct) / static_cast<double>(total);
  }
  return out;
}

std::vector<Proposal> extract_proposals(const CaptionDocument& doc, const Tagger& tagger,
                                        const TokenFeatureProvider& features) {
  if (doc.tokens.empty()) return {};
  if (features.id() != tagger.feature_provider_id) {
    throw InvalidInput("tagger was trained on '" + tagger.feature_provider_id + "' features, got '" +
                       features.id() + "'");
  }
  auto labels = tagger.predict(features.features(doc.tokens));
  auto decoded = decode_bio(labels, doc.tokens);
  std::vector<Proposal> out;
  out.reserve(decoded.spans.size());
  for (auto& s : decoded.spans) {
    out.push_back({std::move(s.text), ProposalSource::Tpn, s.level, std::nullopt});
  }
  return out;
}

std::vector<CaptionDocument> read_annotations(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<CaptionDocument> docs;
  CaptionDocument cur;
  auto flush = [&] {
    if (!cur.tokens.empty()) {
      cur.name = path.filename().string() + "#" + std::to_string(docs.size());
      docs.push_back(std::move(cur));
    }
    cur = CaptionDocument{};
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (normalize_space(line).empty()) {
      flush();
      continue;
    }
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": expected token<TAB>label");
    }
    std::string token = line.substr(0, tab);
    auto label = parse_bio_label(normalize_space(line.substr(tab + 1)));
    if (!label) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": document #" +
                         std::to_string(docs.size()) + " has unknown label '" +
                         line.substr(tab + 1) + "'");
    }
    if (token.empty() || token.find_first_of(" \t") != std::string::npos) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": bad token");
    }
    if (!cur.labels) cur.labels.emplace();
    cur.tokens.push_back(std::move(token));
    cur.labels->push_back(*label);
  }
  flush();
  return docs;
}

CaptionDocument read_caption(const std::filesystem::path& path) {
  return {path.filename().string(), tokenize(read_file(path)), std::nullopt};
}

void save_tagger(const Tagger& tagger, const std::filesystem::path& path) {
  json j;
  j["feature_provider_id"] = tagger.feature_provider_id;
  j["feature_dim"] = tagger.feature_dim;
  json labels = json::array();
  for (std::size_t i = 0; i < kNumBioLabels; ++i) labels.push_back(to_string(static_cast<BioLabel>(i)));
  j["labels"] = labels;
  j["weight"] = tagger.weight.vec();
  j["bias"] = tagger.bias.vec();
  write_file_atomic(path, j.dump() + "\n");
}

Tagger load_tagger(const std::filesystem::path& path) {
  try {
    json j = json::parse(read_file(path));
    Tagger t;
    t.feature_provider_id = j.at("feature_provider_id").get<std::string>();
    t.feature_dim = j.at("feature_dim").get<std::size_t>();
    t.weight = nn::Tensor({t.feature_dim, kNumBioLabels}, j.at("weight").get<std::vector<double>>());
    t.bias = nn::Tensor({kNumBioLabels}, j.at("bias").get<std::vector<double>>());
    return t;
  } catch (const json::exception& e) {
    throw IntegrityError(path, std::string("malformed tagger file: ") + e.what());
  } catch (const ShapeError& e) {
    throw IntegrityError(path, e.what());
  }
}

}  // namespace kp
