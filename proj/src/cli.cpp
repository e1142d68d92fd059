#include "kp/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "kp/encoder.hpp"
#include "kp/error.hpp"
#include "kp/fewshot.hpp"
#include "kp/http_client.hpp"
#include "kp/knowledge_base.hpp"
#include "kp/pipeline.hpp"
#include "kp/proposal_extractor.hpp"
#include "kp/semantics.hpp"
#include "kp/synth.hpp"
#include "kp/tmn.hpp"
#include "kp/util.hpp"

namespace kp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Global {
  std::uint64_t seed = 17;
  std::size_t jobs = 0;
  std::string log_level = "info";
};

struct EncoderFlags {
  std::string scorer = "toy";
  std::string endpoint;
  std::size_t http_batch = 32;
  std::size_t http_in_flight = 4;
};

void add_encoder_flags(CLI::App* cmd, EncoderFlags& f) {
  cmd->add_option("--scorer", f.scorer, "Encoder backend")->check(CLI::IsMember({"toy", "http"}));
  cmd->add_option("--endpoint", f.endpoint, "Sidecar base URL for --scorer http");
  cmd->add_option("--http-batch", f.http_batch, "Texts or images per request")->check(CLI::PositiveNumber);
  cmd->add_option("--http-in-flight", f.http_in_flight, "Concurrent requests")->check(CLI::PositiveNumber);
}

std::unique_ptr<DualEncoder> make_encoder(const EncoderFlags& f) {
  if (f.scorer == "toy") return std::make_unique<ToyEncoder>();
  if (f.endpoint.empty()) throw CLI::RequiredError("--endpoint (needed by --scorer http)");
  HttpOptions opts;
  opts.batch_size = f.http_batch;
  opts.max_in_flight = f.http_in_flight;
  return std::make_unique<HttpEncoder>(f.endpoint, opts);
}

void require_file(const std::string& flag, const fs::path& p) {
  if (!fs::is_regular_file(p)) throw CLI::ValidationError(flag, "file not found: " + p.string());
}

// `path` may be a manifest file or a directory holding manifest.jsonl.
fs::path resolve_manifest(const std::string& flag, const fs::path& path) {
  if (fs::is_directory(path)) {
    const auto m = path / "manifest.jsonl";
    require_file(flag, m);
    return m;
  }
  require_file(flag, path);
  return path;
}

std::size_t resolve_jobs(std::size_t jobs) {
  if (jobs > 0) return jobs;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

KnowledgeBase template_only(const KnowledgeBase& kb) {
  std::vector<Proposal> kept;
  for (const auto& p : kb.proposals) {
    if (p.source == ProposalSource::Template) kept.push_back(p);
  }
  std::vector<std::vector<Proposal>> sets{std::move(kept)};
  return build_kb(sets);
}

// Resolved configuration plus digests of every input file, written next to the output.
class RunRecord {
 public:
  explicit RunRecord(std::string command) { doc_["command"] = std::move(command); }

  void config(const CLI::App& app) { doc_["config"] = app.config_to_str(true, false); }
  void input(const std::string& role, const fs::path& path) {
    if (fs::is_regular_file(path)) {
      doc_["inputs"][role] = {{"path", path.generic_string()}, {"sha256", sha256_file_hex(path)}};
    } else {
      doc_["inputs"][role] = {{"path", path.generic_string()}};
    }
  }
  void set(const std::string& key, json value) { doc_[key] = std::move(value); }
  void write(const fs::path& output) const {
    fs::path target = output;
    if (!target.filename().empty()) {
      target += ".run.json";
    } else {
      target = target.parent_path();
      target += ".run.json";
    }
    write_file_atomic(target, doc_.dump(2) + "\n");
  }

 private:
  json doc_;
};

struct Context {
  CLI::App& root;
  Global& global;
  std::ostream& out;
  std::ostream& err;

  void info(const std::string& msg) const {
    if (global.log_level != "quiet") err << msg << "\n";
  }
};

// ---- synth ---------------------------------------------------------------

struct SynthFlags {
  std::string kind = "order";
  fs::path out;
  SynthOptions options;
};

void setup_synth(CLI::App& root, SynthFlags& f) {
  auto* cmd = root.add_subcommand("synth", "Write a synthetic token-frame dataset");
  cmd->add_option("--kind", f.kind, "order (temporal-order classes) or names (class-name tokens)")
      ->check(CLI::IsMember({"order", "names"}));
  cmd->add_option("--out", f.out, "Output directory")->required();
  cmd->add_option("--videos-per-class", f.options.videos_per_class)->check(CLI::PositiveNumber);
  cmd->add_option("--frames", f.options.frames)->check(CLI::PositiveNumber);
  cmd->add_option("--distractors", f.options.distractors);
  cmd->add_option("--base-classes", f.options.base_classes);
}

int run_synth(const Context& ctx, SynthFlags f) {
  f.options.seed = ctx.global.seed;
  const auto ds = f.kind == "order" ? write_order_coded(f.out, f.options) : write_class_named(f.out, f.options);
  RunRecord rec("synth");
  rec.config(ctx.root);
  rec.set("videos", ds.manifest.videos.size());
  rec.write(f.out);
  ctx.out << "wrote " << ds.manifest.videos.size() << " videos (" << ds.base_classes.size() << " base, "
          << ds.test_classes.size() << " test classes) to " << f.out.string() << "\n";
  return kExitOk;
}

// ---- kb build ------------------------------------------------------------

struct KbFlags {
  fs::path states, nouns, corpus, out;
  std::vector<fs::path> extra;
  double lambda = 0.0;
  EncoderFlags enc;
};

void setup_kb(CLI::App& root, KbFlags& f) {
  auto* kb = root.add_subcommand("kb", "Knowledge-base construction");
  kb->require_subcommand(1);
  auto* cmd = kb->add_subcommand("build", "Generate, filter and merge proposals");
  cmd->add_option("--states", f.states, "body_part<TAB>state<TAB>0|1 per line")->required();
  cmd->add_option("--nouns", f.nouns, "One object noun per line")->required();
  cmd->add_option("--corpus", f.corpus, "Reference text for the toy unigram scorer (default: the noun list)");
  cmd->add_option("--lambda", f.lambda, "Minimum masked-noun probability")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--extra", f.extra, "Extracted proposal files to merge (KB JSON lines)");
  cmd->add_option("--out", f.out, "Output KB file")->required();
  add_encoder_flags(cmd, f.enc);
}

int run_kb_build(const Context& ctx, const KbFlags& f) {
  require_file("--states", f.states);
  require_file("--nouns", f.nouns);
  if (!f.corpus.empty()) require_file("--corpus", f.corpus);
  for (const auto& e : f.extra) require_file("--extra", e);

  const auto states = read_states(f.states);
  const auto nouns = read_nouns(f.nouns);
  const auto generated = generate_template_proposals(states, nouns);

  std::unique_ptr<MaskedTokenScorer> scorer;
  if (f.enc.scorer == "toy") {
    const auto corpus = tokenize(read_file(f.corpus.empty() ? f.nouns : f.corpus));
    scorer = std::make_unique<UnigramScorer>(corpus);
  } else {
    if (f.enc.endpoint.empty()) throw CLI::RequiredError("--endpoint (needed by --scorer http)");
    scorer = std::make_unique<HttpMaskedTokenScorer>(f.enc.endpoint);
  }
  std::vector<std::vector<Proposal>> sets;
  sets.push_back(filter_proposals(generated, *scorer, FilterThreshold(f.lambda), resolve_jobs(ctx.global.jobs)));
  for (const auto& e : f.extra) sets.push_back(read_proposals(e));
  const auto kb = build_kb(sets);
  write_kb(kb, f.out);

  RunRecord rec("kb build");
  rec.config(ctx.root);
  rec.input("states", f.states);
  rec.input("nouns", f.nouns);
  if (!f.corpus.empty()) rec.input("corpus", f.corpus);
  for (std::size_t i = 0; i < f.extra.size(); ++i) rec.input("extra" + std::to_string(i), f.extra[i]);
  rec.set("scorer", scorer->id());
  rec.set("generated", generated.size());
  rec.set("kept", sets.front().size());
  rec.set("kb_hash", to_hex(kb.content_hash));
  rec.write(f.out);
  ctx.out << "kb: " << generated.size() << " generated, " << sets.front().size() << " kept at lambda "
          << f.lambda << ", " << kb.size() << " proposals -> " << f.out.string() << "\n";
  return kExitOk;
}

// ---- tpn -----------------------------------------------------------------

struct TpnFlags {
  fs::path annotations, out, captions, tagger;
  TaggerHyper hyper;
};

void setup_tpn(CLI::App& root, TpnFlags& train, TpnFlags& extract) {
  auto* tpn = root.add_subcommand("tpn", "Text proposal network");
  tpn->require_subcommand(1);
  auto* t = tpn->add_subcommand("train", "Train the BIO tagger");
  t->add_option("--annotations", train.annotations, "token<TAB>label lines, blank line between documents")
      ->required();
  t->add_option("--out", train.out, "Tagger JSON")->required();
  t->add_option("--epochs", train.hyper.epochs);
  t->add_option("--lr", train.hyper.lr);
  auto* x = tpn->add_subcommand("extract", "Tag captions and write proposals");
  x->add_option("--captions", extract.captions, "Caption file or directory of .txt files")->required();
  x->add_option("--tagger", extract.tagger, "Tagger JSON")->required();
  x->add_option("--out", extract.out, "Proposal file (KB JSON lines)")->required();
}

int run_tpn_train(const Context& ctx, TpnFlags f) {
  require_file("--annotations", f.annotations);
  f.hyper.seed = ctx.global.seed;
  const auto docs = read_annotations(f.annotations);
  HashedWindowFeatures features;
  TaggerTrainLog log;
  const auto tagger = train_tagger(docs, features, f.hyper, &log);
  save_tagger(tagger, f.out);
  RunRecord rec("tpn train");
  rec.config(ctx.root);
  rec.input("annotations", f.annotations);
  rec.set("train", {{"initial_loss", log.initial_loss},
                    {"final_loss", log.final_loss},
                    {"train_accuracy", log.train_accuracy}});
  rec.write(f.out);
  ctx.out << "tagger: " << docs.size() << " documents, loss " << log.initial_loss << " -> " << log.final_loss
          << ", token accuracy " << log.train_accuracy << "\n";
  return kExitOk;
}

int run_tpn_extract(const Context& ctx, const TpnFlags& f) {
  require_file("--tagger", f.tagger);
  std::vector<fs::path> files;
  if (fs::is_directory(f.captions)) {
    for (const auto& e : fs::directory_iterator(f.captions)) {
      if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    require_file("--captions", f.captions);
    files.push_back(f.captions);
  }
  const auto tagger = load_tagger(f.tagger);
  HashedWindowFeatures features;
  std::vector<Proposal> all;
  for (const auto& file : files) {
    const auto doc = read_caption(file);
    if (doc.tokens.empty()) continue;
    auto props = extract_proposals(doc, tagger, features);
    all.insert(all.end(), props.begin(), props.end());
  }
  write_proposals(all, f.out);
  RunRecord rec("tpn extract");
  rec.config(ctx.root);
  rec.input("tagger", f.tagger);
  for (std::size_t i = 0; i < files.size(); ++i) rec.input("caption" + std::to_string(i), files[i]);
  rec.write(f.out);
  ctx.out << "extracted " << all.size() << " proposals from " << files.size() << " captions\n";
  return kExitOk;
}

// ---- shared feature flags --------------------------------------------------

struct FeatureFlags {
  fs::path kb, cache;
  bool no_knowledge = false;
  bool no_tpn = false;
  std::size_t frames = kDefaultSampledFrames;
  bool center = false;
  double temperature = 0.01;
  EncoderFlags enc;
};

void add_feature_flags(CLI::App* cmd, FeatureFlags& f, bool require_cache) {
  auto* c = cmd->add_option("--cache", f.cache, "Semantics cache directory");
  if (require_cache) c->required();
  cmd->add_option("--kb", f.kb, "Knowledge-base file");
  cmd->add_flag("--no-knowledge", f.no_knowledge, "Use raw frame embeddings instead of proposal scores");
  cmd->add_flag("--no-tpn", f.no_tpn, "Keep only template proposals");
  cmd->add_option("--frames", f.frames, "Frames per sparse sampling")->check(CLI::PositiveNumber);
  cmd->add_flag("--center", f.center, "Center sampling instead of random");
  cmd->add_option("--temperature", f.temperature, "Matching temperature")->check(CLI::PositiveNumber);
  add_encoder_flags(cmd, f.enc);
}

std::optional<KnowledgeBase> load_feature_kb(const FeatureFlags& f) {
  if (f.no_knowledge) return std::nullopt;
  if (f.kb.empty()) throw CLI::RequiredError("--kb");
  require_file("--kb", f.kb);
  auto kb = read_kb(f.kb);
  if (f.no_tpn) kb = template_only(kb);
  if (kb.size() == 0) throw InvalidInput("knowledge base has no proposals left");
  return kb;
}

std::optional<fs::path> cache_dir(const FeatureFlags& f) {
  if (f.cache.empty()) return std::nullopt;
  fs::create_directories(f.cache);
  return f.cache;
}

struct ManifestFlags {
  fs::path manifest;
  fs::path split;
};

void add_manifest_flags(CLI::App* cmd, ManifestFlags& f, const char* split_help, bool required) {
  auto* m = cmd->add_option("--manifest,--videos", f.manifest, "Manifest file or dataset directory");
  if (required) m->required();
  cmd->add_option("--split", f.split, split_help);
}

Manifest load_restricted(const ManifestFlags& f, fs::path& manifest_path) {
  manifest_path = resolve_manifest("--manifest", f.manifest);
  auto manifest = load_manifest(manifest_path);
  if (!f.split.empty()) {
    require_file("--split", f.split);
    manifest = manifest.restricted_to(read_split(f.split));
  }
  if (manifest.videos.empty()) throw InvalidInput("no videos selected from " + manifest_path.string());
  return manifest;
}

// ---- semantics extract -------------------------------------------------------

struct SemFlags {
  FeatureFlags feat;
  ManifestFlags data;
  std::size_t samplings = 10;
};

void setup_semantics(CLI::App& root, SemFlags& f) {
  auto* sem = root.add_subcommand("semantics", "Frame-by-proposal matching scores");
  sem->require_subcommand(1);
  auto* cmd = sem->add_subcommand("extract", "Fill the semantics cache");
  add_manifest_flags(cmd, f.data, "Restrict to classes listed in this file", true);
  add_feature_flags(cmd, f.feat, true);
  cmd->add_option("--samplings", f.samplings, "Extra random samplings per video (seeds seed+1..seed+S)");
}

int run_semantics(const Context& ctx, const SemFlags& f) {
  fs::path manifest_path;
  const auto manifest = load_restricted(f.data, manifest_path);
  auto encoder = make_encoder(f.feat.enc);
  VideoSemantics sem(*encoder, load_feature_kb(f.feat), cache_dir(f.feat), MatchConfig(f.feat.temperature),
                     f.feat.frames);
  const auto mode = f.feat.center ? SamplingMode::Center : SamplingMode::Random;
  const std::size_t per_video = f.feat.center ? 1 : 1 + f.samplings;
  parallel_for(manifest.videos.size() * per_video, resolve_jobs(ctx.global.jobs), [&](std::size_t i) {
    sem.get(manifest.videos[i / per_video], mode, ctx.global.seed + i % per_video);
  });
  RunRecord rec("semantics extract");
  rec.config(ctx.root);
  rec.input("manifest", manifest_path);
  if (!f.feat.kb.empty()) rec.input("kb", f.feat.kb);
  rec.set("kb_hash", to_hex(sem.kb_hash()));
  rec.set("encoder_id", encoder->id());
  rec.write(f.feat.cache);
  ctx.out << "semantics: " << manifest.videos.size() * per_video << " matrices (" << sem.computed()
          << " computed, rest cached) in " << f.feat.cache.string() << "\n";
  return kExitOk;
}

// ---- train -------------------------------------------------------------------

struct TrainFlags {
  FeatureFlags feat;
  ManifestFlags data;
  fs::path out;
  bool no_tmn = false;
  TmnConfig tmn;
  BaseSchedule schedule;
};

void setup_train(CLI::App& root, TrainFlags& f) {
  auto* cmd = root.add_subcommand("train", "Train the temporal network on base classes");
  cmd->fallthrough();
  add_manifest_flags(cmd, f.data, "Base classes, one per line", true);
  add_feature_flags(cmd, f.feat, true);
  cmd->add_option("--out", f.out, "Checkpoint path")->required();
  cmd->add_flag("--no-tmn", f.no_tmn, "Linear variant without temporal modeling");
  cmd->add_option("--hidden", f.tmn.hidden_dim)->check(CLI::PositiveNumber);
  cmd->add_option("--blocks", f.tmn.blocks)->check(CLI::PositiveNumber);
  cmd->add_option("--kernel", f.tmn.kernel)->check(CLI::PositiveNumber);
  cmd->add_option("--heads", f.tmn.heads)->check(CLI::PositiveNumber);
  cmd->add_option("--dropout", f.tmn.dropout)->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--epochs", f.schedule.epochs)->check(CLI::PositiveNumber);
  cmd->add_option("--lr", f.schedule.lr);
  cmd->add_option("--milestones", f.schedule.milestones);
  cmd->add_option("--lr-decay", f.schedule.decay);
  cmd->add_option("--momentum", f.schedule.momentum);
  cmd->add_option("--weight-decay", f.schedule.weight_decay);
  cmd->add_option("--batch", f.schedule.batch)->check(CLI::PositiveNumber);
}

int run_train(const Context& ctx, TrainFlags f) {
  fs::path manifest_path;
  const auto manifest = load_restricted(f.data, manifest_path);
  auto encoder = make_encoder(f.feat.enc);
  VideoSemantics sem(*encoder, load_feature_kb(f.feat), cache_dir(f.feat), MatchConfig(f.feat.temperature),
                     f.feat.frames);
  SamplingPlan plan;
  plan.seed = ctx.global.seed;
  plan.mode = f.feat.center ? SamplingMode::Center : SamplingMode::Random;
  const auto data = build_training_set(sem, manifest, plan, resolve_jobs(ctx.global.jobs));

  f.tmn.input_dim = sem.feature_dim();
  f.tmn.classes = data.classes.size();
  f.tmn.seq_len = f.feat.frames;
  f.tmn.variant = f.no_tmn ? TmnVariant::Linear : TmnVariant::Full;
  TmnModel model(f.tmn, mix_seed(ctx.global.seed, 1));
  ctx.info("training on " + std::to_string(data.sequences.size()) + " videos of " +
           std::to_string(data.classes.size()) + " classes");
  const auto result = train_base(model, data.sequences, data.labels, f.schedule, mix_seed(ctx.global.seed, 2));

  json manifest_json = {
      {"kb_hash", to_hex(sem.kb_hash())},
      {"encoder_id", encoder->id()},
      {"no_knowledge", f.feat.no_knowledge},
      {"no_tpn", f.feat.no_tpn},
      {"no_tmn", f.no_tmn},
      {"frames", f.feat.frames},
      {"temperature", f.feat.temperature},
      {"seed", ctx.global.seed},
      {"classes", data.classes},
      {"train", {{"initial_loss", result.initial_loss}, {"final_loss", result.final_loss},
                 {"train_accuracy", result.train_accuracy}}}};
  nn::save_checkpoint(model.to_checkpoint(manifest_json, &result.optimizer), f.out);

  RunRecord rec("train");
  rec.config(ctx.root);
  rec.input("manifest", manifest_path);
  if (!f.data.split.empty()) rec.input("split", f.data.split);
  if (!f.feat.kb.empty()) rec.input("kb", f.feat.kb);
  rec.set("checkpoint", manifest_json);
  rec.write(f.out);
  std::ostringstream msg;
  msg << std::setprecision(6) << "train: loss " << result.initial_loss << " -> " << result.final_loss
      << ", train accuracy " << result.train_accuracy << ", " << forward_flops(f.tmn, f.feat.frames) / 1e9
      << " GFLOPs per clip -> " << f.out.string() << "\n";
  ctx.out << msg.str();
  return kExitOk;
}

// ---- eval --------------------------------------------------------------------

struct EvalFlags {
  FeatureFlags feat;
  ManifestFlags data;
  fs::path ckpt, report;
  std::string mode = "tmn";
  bool no_tmn = false;
  EvalOptions eval;
  SamplingPlan plan;
  EpisodeSchedule schedule;
  std::size_t importance = 0;
  std::size_t importance_tasks = 5;
};

void setup_eval(CLI::App& root, EvalFlags& f) {
  auto* cmd = root.add_subcommand("eval", "Episodic N-way K-shot evaluation");
  cmd->fallthrough();
  add_manifest_flags(cmd, f.data, "Test classes, one per line", true);
  add_feature_flags(cmd, f.feat, false);
  cmd->add_option("--ckpt", f.ckpt, "Trained checkpoint (mode tmn)");
  cmd->add_option("--report", f.report, "Report JSON path")->required();
  cmd->add_option("--mode", f.mode)->check(CLI::IsMember({"tmn", "zeroshot"}));
  cmd->add_flag("--no-tmn", f.no_tmn, "Expect a linear-variant checkpoint");
  cmd->add_option("--ways", f.eval.ways)->check(CLI::Range(2, 1000));
  cmd->add_option("--shots", f.eval.shots)->check(CLI::PositiveNumber);
  cmd->add_option("--queries", f.eval.queries)->check(CLI::PositiveNumber);
  cmd->add_option("--tasks", f.eval.tasks)->check(CLI::PositiveNumber);
  cmd->add_option("--samplings", f.plan.test_samplings, "Query samplings averaged at test time")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--resample-support", f.plan.resample_support, "Also train the head on support resamplings");
  cmd->add_option("--ft-epochs", f.schedule.epochs);
  cmd->add_option("--ft-lr", f.schedule.lr);
  cmd->add_option("--ft-batch", f.schedule.batch)->check(CLI::PositiveNumber);
  cmd->add_option("--importance", f.importance, "Report the top-k proposals by gradient importance");
  cmd->add_option("--importance-tasks", f.importance_tasks)->check(CLI::PositiveNumber);
}

std::string method_label(const json& cfg) {
  if (cfg.value("mode", "tmn") == "zeroshot") return "zero-shot";
  if (cfg.value("no_knowledge", false)) return "w/o knowledge";
  if (cfg.value("no_tpn", false)) return "w/o TPN";
  if (cfg.value("no_tmn", false)) return "w/o TMN";
  return "full";
}

int run_eval(const Context& ctx, EvalFlags f, const CLI::App& cmd) {
  fs::path manifest_path;
  const auto manifest = load_restricted(f.data, manifest_path);
  f.eval.seed = ctx.global.seed;
  f.eval.jobs = resolve_jobs(ctx.global.jobs);
  f.plan.seed = ctx.global.seed;
  f.plan.mode = f.feat.center ? SamplingMode::Center : SamplingMode::Random;
  auto encoder = make_encoder(f.feat.enc);

  json config = {{"mode", f.mode},       {"ways", f.eval.ways},       {"shots", f.eval.shots},
                 {"queries", f.eval.queries}, {"tasks", f.eval.tasks}, {"seed", f.eval.seed},
                 {"samplings", f.plan.test_samplings}, {"frames", f.feat.frames},
                 {"encoder_id", encoder->id()}};
  EvalReport report;
  json importance;
  if (f.mode == "zeroshot") {
    LearnerFactory factory = [&](std::uint64_t) {
      return std::make_unique<ZeroShotLearner>(*encoder, f.plan, f.feat.frames, MatchConfig(f.feat.temperature));
    };
    report = evaluate(factory, manifest, f.eval);
  } else {
    if (f.ckpt.empty()) throw CLI::RequiredError("--ckpt");
    require_file("--ckpt", f.ckpt);
    const auto ckpt = nn::load_checkpoint(f.ckpt);
    const auto model = TmnModel::from_checkpoint(ckpt);
    const json meta = json::parse(ckpt.manifest);
    auto check_flag = [&](const char* key, const char* flag, bool given) {
      if (given && !meta.value(key, false)) {
        throw InvalidInput(std::string("checkpoint was not trained with ") + flag);
      }
    };
    check_flag("no_knowledge", "--no-knowledge", f.feat.no_knowledge);
    check_flag("no_tpn", "--no-tpn", f.feat.no_tpn);
    check_flag("no_tmn", "--no-tmn", f.no_tmn);
    if (cmd.count("--frames") == 0) f.feat.frames = meta.value("frames", f.feat.frames);
    if (cmd.count("--temperature") == 0) f.feat.temperature = meta.value("temperature", f.feat.temperature);
    f.feat.no_knowledge = meta.value("no_knowledge", false);
    f.feat.no_tpn = meta.value("no_tpn", false);
    VideoSemantics sem(*encoder, load_feature_kb(f.feat), cache_dir(f.feat), MatchConfig(f.feat.temperature),
                       f.feat.frames);
    if (to_hex(sem.kb_hash()) != meta.value("kb_hash", std::string())) {
      throw InvalidInput("knowledge base " + f.feat.kb.string() + " does not match the checkpoint's kb_hash");
    }
    if (sem.feature_dim() != model.config().input_dim) {
      throw ShapeError("feature width " + std::to_string(sem.feature_dim()) + " does not match checkpoint input " +
                       std::to_string(model.config().input_dim));
    }
    config["no_knowledge"] = f.feat.no_knowledge;
    config["no_tpn"] = f.feat.no_tpn;
    config["no_tmn"] = model.config().variant == TmnVariant::Linear;
    config["frames"] = f.feat.frames;
    config["kb_hash"] = to_hex(sem.kb_hash());
    config["tmn"] = model.config().to_json();
    config["finetune"] = {{"epochs", f.schedule.epochs}, {"lr", f.schedule.lr}, {"batch", f.schedule.batch},
                          {"resample_support", f.plan.resample_support}};
    LearnerFactory factory = [&](std::uint64_t task_seed) {
      return std::make_unique<TmnEpisodeLearner>(model, sem, f.plan, f.schedule, task_seed);
    };
    report = evaluate(factory, manifest, f.eval);
    if (f.importance > 0) {
      importance = json::array();
      for (const auto& e : importance_ranking(model, sem, manifest, f.eval, f.plan, f.schedule,
                                              f.importance_tasks, f.importance)) {
        importance.push_back({{"proposal", e.proposal}, {"text", e.text}, {"score", e.score}});
      }
    }
  }
  json doc = report_to_json(report);
  config["method"] = method_label(config);
  doc["config"] = config;
  if (!importance.is_null()) doc["importance"] = importance;
  write_file_atomic(f.report, doc.dump(2) + "\n");

  RunRecord rec("eval");
  rec.config(ctx.root);
  rec.input("manifest", manifest_path);
  if (!f.data.split.empty()) rec.input("split", f.data.split);
  if (!f.ckpt.empty()) rec.input("ckpt", f.ckpt);
  if (!f.feat.kb.empty()) rec.input("kb", f.feat.kb);
  rec.write(f.report);
  std::ostringstream msg;
  msg << std::fixed << std::setprecision(2) << "eval (" << config["method"].get<std::string>() << "): "
      << 100.0 * report.mean << "% +- " << 100.0 * report.ci95 << " over " << report.task_accuracies.size()
      << " tasks -> " << f.report.string() << "\n";
  ctx.out << msg.str();
  return kExitOk;
}

// ---- report ------------------------------------------------------------------

struct ReportFlags {
  std::vector<fs::path> in;
  std::string format = "text";
};

void setup_report(CLI::App& root, ReportFlags& f) {
  auto* cmd = root.add_subcommand("report", "Render evaluation reports as a table");
  cmd->add_option("--in", f.in, "Report JSON files, one table row each")->required();
  cmd->add_option("--format", f.format)->check(CLI::IsMember({"text", "csv", "md"}));
}

int run_report(const Context& ctx, const ReportFlags& f) {
  struct Row {
    std::string method, setting, accuracy, ci;
    std::size_t tasks;
  };
  std::vector<Row> rows;
  for (const auto& p : f.in) {
    require_file("--in", p);
    json doc;
    try {
      doc = json::parse(read_file(p));
    } catch (const json::exception& e) {
      throw InvalidInput(p.string() + ": not a report: " + e.what());
    }
    const auto rep = report_from_json(doc);
    const json cfg = doc.value("config", json::object());
    char acc[32], ci[32];
    std::snprintf(acc, sizeof acc, "%.1f", 100.0 * rep.mean);
    std::snprintf(ci, sizeof ci, "%.2f", 100.0 * rep.ci95);
    rows.push_back({cfg.value("method", p.stem().string()),
                    std::to_string(cfg.value("ways", 0)) + "-way " + std::to_string(cfg.value("shots", 0)) + "-shot",
                    acc, ci, rep.task_accuracies.size()});
  }
  const std::vector<std::string> header{"Method", "Setting", "Tasks", "Accuracy (%)", "95% CI"};
  auto cells = [](const Row& r) {
    return std::vector<std::string>{r.method, r.setting, std::to_string(r.tasks), r.accuracy, "+-" + r.ci};
  };
  if (f.format == "csv") {
    ctx.out << "method,setting,tasks,accuracy,ci95\n";
    for (const auto& r : rows) ctx.out << r.method << "," << r.setting << "," << r.tasks << "," << r.accuracy << "," << r.ci << "\n";
  } else if (f.format == "md") {
    ctx.out << "| " << header[0] << " | " << header[1] << " | " << header[2] << " | " << header[3] << " | "
            << header[4] << " |\n|---|---|---:|---:|---:|\n";
    for (const auto& r : rows) {
      const auto c = cells(r);
      ctx.out << "| " << c[0] << " | " << c[1] << " | " << c[2] << " | " << c[3] << " | " << c[4] << " |\n";
    }
  } else {
    std::vector<std::size_t> width(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
    for (const auto& r : rows) {
      const auto c = cells(r);
      for (std::size_t i = 0; i < c.size(); ++i) width[i] = std::max(width[i], c[i].size());
    }
    auto line = [&](const std::vector<std::string>& c) {
      for (std::size_t i = 0; i < c.size(); ++i) {
        ctx.out << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << (i < 2 ? std::left : std::right)
                << c[i];
      }
      ctx.out << std::right << "\n";
    };
    line(header);
    for (const auto& r : rows) line(cells(r));
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Knowledge-prompted few-shot action recognition toolkit", "kprompt"};
  app.set_config("--config", "", "TOML config; global keys at top, subcommand keys under [train], [eval], ...");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  Global global;
  app.add_option("--seed", global.seed, "Global seed")->capture_default_str();
  app.add_option("--jobs", global.jobs, "Worker threads (0 = logical cores)");
  app.add_option("--log-level", global.log_level)->check(CLI::IsMember({"quiet", "info"}));

  SynthFlags synth;
  KbFlags kb;
  TpnFlags tpn_train, tpn_extract;
  SemFlags sem;
  TrainFlags train;
  EvalFlags eval;
  ReportFlags report;
  setup_synth(app, synth);
  setup_kb(app, kb);
  setup_tpn(app, tpn_train, tpn_extract);
  setup_semantics(app, sem);
  setup_train(app, train);
  setup_eval(app, eval);
  setup_report(app, report);
  for (auto* sub : app.get_subcommands({})) {
    sub->fallthrough();
    for (auto* leaf : sub->get_subcommands({})) leaf->fallthrough();
  }

  Context ctx{app, global, out, err};
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    auto* cmd = app.get_subcommands().front();
    const std::string name = cmd->get_name();
    if (name == "synth") return run_synth(ctx, synth);
    if (name == "kb") return run_kb_build(ctx, kb);
    if (name == "tpn") {
      return cmd->got_subcommand("train") ? run_tpn_train(ctx, tpn_train) : run_tpn_extract(ctx, tpn_extract);
    }
    if (name == "semantics") return run_semantics(ctx, sem);
    if (name == "train") return run_train(ctx, train);
    if (name == "eval") return run_eval(ctx, eval, *cmd);
    if (name == "report") return run_report(ctx, report);
    throw CLI::CallForHelp();
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.back()->help());
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const json::exception& e) {
    err << "error: malformed JSON: " << e.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace kp::cli
