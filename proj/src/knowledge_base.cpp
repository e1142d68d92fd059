#include "kp/knowledge_base.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "kp/error.hpp"

namespace kp {

using nlohmann::json;

std::string_view to_string(ProposalSource s) {
  return s == ProposalSource::Template ? "template" : "tpn";
}

std::string_view to_string(ProposalLevel l) {
  switch (l) {
    case ProposalLevel::Basic: return "basic";
    case ProposalLevel::Instance: return "instance";
    case ProposalLevel::Part: return "part";
  }
  return "basic";
}

ProposalSource parse_source(std::string_view s) {
  if (s == "template") return ProposalSource::Template;
  if (s == "tpn") return ProposalSource::Tpn;
  throw InvalidInput("unknown proposal source '" + std::string(s) + "'");
}

ProposalLevel parse_level(std::string_view s) {
  if (s == "basic") return ProposalLevel::Basic;
  if (s == "instance") return ProposalLevel::Instance;
  if (s == "part") return ProposalLevel::Part;
  throw InvalidInput("unknown proposal level '" + std::string(s) + "'");
}

std::optional<std::string> masked_target(const Proposal& p) {
  if (!p.masked_text) return std::nullopt;
  const std::string& m = *p.masked_text;
  auto pos = m.find(kMaskToken);
  if (pos == std::string::npos) return std::nullopt;
  std::string_view prefix(m.data(), pos);
  std::string_view suffix(m.data() + pos + kMaskToken.size(), m.size() - pos - kMaskToken.size());
  std::string_view text = p.text;
  if (text.size() < prefix.size() + suffix.size() || !text.starts_with(prefix) ||
      !text.ends_with(suffix)) {
    return std::nullopt;
  }
  return std::string(text.substr(prefix.size(), text.size() - prefix.size() - suffix.size()));
}

std::vector<std::string> KnowledgeBase::texts() const {
  std::vector<std::string> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) out.push_back(p.text);
  return out;
}

FilterThreshold::FilterThreshold(double lambda) : lambda_(lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw InvalidInput("filter threshold must lie in [0, 1], got " + std::to_string(lambda));
  }
}

UnigramScorer::UnigramScorer(std::span<const std::string> corpus_tokens) {
  for (const auto& t : corpus_tokens) {
    ++counts_[t];
    ++total_;
  }
}

double UnigramScorer::probability(std::string_view, std::string_view target) const {
  auto tokens = tokenize(target);
  if (tokens.empty() || total_ == 0) return 0.0;
  double p = 1.0;
  for (const auto& t : tokens) {
    auto it = counts_.find(t);
    if (it == counts_.end()) return 0.0;
    p *= static_cast<double>(it->second) / static_cast<double>(total_);
  }
  return p;
}

namespace {

bool single_line(std::string_view s) { return s.find_first_of("\r\n") == std::string_view::npos; }

bool is_lowercase(std::string_view s) { return to_lower(s) == s; }

void validate_state(const BodyPartState& s) {
  if (s.body_part.empty() || s.state_phrase.empty()) {
    throw InvalidInput("body-part state has an empty field");
  }
  if (!single_line(s.body_part) || !single_line(s.state_phrase)) {
    throw InvalidInput("body-part state spans multiple lines: " + s.body_part);
  }
  if (!is_lowercase(s.body_part) || !is_lowercase(s.state_phrase)) {
    throw InvalidInput("body-part state must be lowercase: '" + s.body_part + "', '" +
                       s.state_phrase + "'");
  }
}

}  // namespace

std::vector<Proposal> generate_template_proposals(std::span<const BodyPartState> states,
                                                  std::span<const ObjectNoun> nouns) {
  std::set<std::string> seen;
  std::set<std::string> duplicates;
  for (const auto& n : nouns) {
    if (n.text.empty() || !single_line(n.text)) {
      throw InvalidInput("object noun must be a non-empty single line");
    }
    if (!seen.insert(n.text).second) duplicates.insert(n.text);
  }
  if (!duplicates.empty()) {
    std::string msg = "duplicate object nouns:";
    for (const auto& d : duplicates) msg += " '" + d + "'";
    throw InvalidInput(msg);
  }

  std::vector<Proposal> out;
  for (const auto& s : states) {
    validate_state(s);
    const std::string head = "Human's " + s.body_part + " " + s.state_phrase;
    if (!s.transitive) {
      out.push_back({head, ProposalSource::Template, ProposalLevel::Basic, std::nullopt});
      continue;
    }
    for (const auto& n : nouns) {
      out.push_back({head + " the " + n.text, ProposalSource::Template, ProposalLevel::Basic,
                     head + " the " + std::string(kMaskToken)});
    }
  }
  return out;
}

std::vector<Proposal> filter_proposals(std::span<const Proposal> proposals,
                                       const MaskedTokenScorer& scorer, FilterThreshold threshold,
                                       std::size_t jobs) {
  constexpr std::size_t kChunk = 1024;
  const std::size_t chunks = (proposals.size() + kChunk - 1) / kChunk;
  std::vector<char> keep(proposals.size(), 1);
  parallel_for(chunks, jobs, [&](std::size_t c) {
    const std::size_t end = std::min(proposals.size(), (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      const Proposal& p = proposals[i];
      auto target = masked_target(p);
      if (!target) continue;
      double prob;
      try {
        prob = scorer.probability(*p.masked_text, *target);
      } catch (const std::exception& e) {
        throw Error("scorer failed on '" + p.text + "': " + e.what());
      }
      if (!std::isfinite(prob) || prob < 0.0 || prob > 1.0) {
        throw Error("scorer returned invalid probability for '" + p.text + "'");
      }
      keep[i] = prob >= threshold.value();
    }
  });
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    if (keep[i]) out.push_back(proposals[i]);
  }
  return out;
}

KnowledgeBase build_kb(std::span<const std::vector<Proposal>> sets) {
  KnowledgeBase kb;
  std::unordered_set<std::string> seen;
  for (const auto& set : sets) {
    for (const auto& p : set) {
      Proposal q = p;
      q.text = normalize_space(p.text);
      if (q.text.empty()) continue;
      if (seen.insert(q.text).second) kb.proposals.push_back(std::move(q));
    }
  }
  std::sort(kb.proposals.begin(), kb.proposals.end(),
            [](const Proposal& a, const Proposal& b) { return a.text < b.text; });
  kb.content_hash = sha256(canonical_serialization(kb));
  return kb;
}

std::string canonical_serialization(const KnowledgeBase& kb) {
  std::string out;
  for (std::size_t i = 0; i < kb.proposals.size(); ++i) {
    if (i) out.push_back('\n');
    out += kb.proposals[i].text;
  }
  return out;
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

json proposal_to_json(const Proposal& p) {
  json j = {{"text", p.text}, {"source", to_string(p.source)}, {"level", to_string(p.level)}};
  if (p.masked_text) j["masked_text"] = *p.masked_text;
  return j;
}

}  // namespace

std::vector<BodyPartState> read_states(const std::filesystem::path& path) {
  std::vector<BodyPartState> states;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (normalize_space(line).empty()) continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    if (fields.size() != 3 || (fields[2] != "0" && fields[2] != "1")) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) +
                         ": expected body_part<TAB>state_phrase<TAB>0|1");
    }
    states.push_back({to_lower(normalize_space(fields[0])), to_lower(normalize_space(fields[1])),
                      fields[2] == "1"});
  }
  return states;
}

std::vector<ObjectNoun> read_nouns(const std::filesystem::path& path) {
  std::vector<ObjectNoun> nouns;
  for (const auto& line : read_lines(path)) {
    auto text = normalize_space(line);
    if (!text.empty()) nouns.push_back({std::move(text)});
  }
  return nouns;
}

void write_proposals(std::span<const Proposal> proposals, const std::filesystem::path& path) {
  std::string body;
  for (const auto& p : proposals) {
    body += proposal_to_json(p).dump();
    body.push_back('\n');
  }
  write_file_atomic(path, body);
}

std::vector<Proposal> read_proposals(const std::filesystem::path& path) {
  std::vector<Proposal> out;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(path)) {
    ++lineno;
    if (normalize_space(line).empty()) continue;
    try {
      json j = json::parse(line);
      Proposal p;
      p.text = j.at("text").get<std::string>();
      p.source = parse_source(j.at("source").get<std::string>());
      p.level = parse_level(j.at("level").get<std::string>());
      if (j.contains("masked_text")) p.masked_text = j["masked_text"].get<std::string>();
      if (p.text.empty()) throw InvalidInput("empty proposal text");
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_kb(const KnowledgeBase& kb, const std::filesystem::path& path) {
  write_proposals(kb.proposals, path);
  auto hash_path = path;
  hash_path += ".hash";
  write_file_atomic(hash_path, to_hex(kb.content_hash) + "\n");
}

KnowledgeBase read_kb(const std::filesystem::path& path) {
  std::vector<std::vector<Proposal>> sets{read_proposals(path)};
  KnowledgeBase kb = build_kb(sets);
  auto hash_path = path;
  hash_path += ".hash";
  if (std::filesystem::exists(hash_path)) {
    auto stored = normalize_space(read_file(hash_path));
    if (stored != to_hex(kb.content_hash)) {
      throw IntegrityError(hash_path, "knowledge base hash mismatch");
    }
  }
  return kb;
}

}  // namespace kp
