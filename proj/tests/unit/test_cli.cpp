#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "kp/cli.hpp"
#include "kp/knowledge_base.hpp"
#include "kp/nn/checkpoint.hpp"
#include "test_support.hpp"

using namespace kp;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const std::filesystem::path& path) { return path.string(); }

std::vector<std::string> lines(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

}  // namespace

TEST_CASE("kb build on the toy corpora") {
  test::TempDir dir("cli_kb");
  write_file_atomic(dir / "states.tsv", "hand\thold\t1\nfoot\trun to\t1\nhead\tnod\t0\n");
  write_file_atomic(dir / "nouns.txt", "bed\nball\ncup\n");
  auto r = run({"--log-level", "quiet", "kb", "build", "--states", p(dir / "states.tsv"), "--nouns",
                p(dir / "nouns.txt"), "--out", p(dir / "kb.jsonl")});
  INFO(r.err);
  REQUIRE(r.code == cli::kExitOk);
  CHECK(lines(dir / "kb.jsonl").size() == 7);
  CHECK(read_kb(dir / "kb.jsonl").size() == 7);
  auto rec = json::parse(read_file(dir / "kb.jsonl.run.json"));
  CHECK(rec["command"] == "kb build");
  CHECK(rec["inputs"]["states"]["sha256"] == sha256_file_hex(dir / "states.tsv"));
  CHECK(rec["kept"] == 7);

  write_file_atomic(dir / "corpus.txt", "cup cup ball");
  r = run({"kb", "build", "--states", p(dir / "states.tsv"), "--nouns", p(dir / "nouns.txt"), "--corpus",
           p(dir / "corpus.txt"), "--lambda", "0.5", "--out", p(dir / "kb2.jsonl")});
  REQUIRE(r.code == cli::kExitOk);
  // only "cup" (2/3) clears 0.5; the intransitive proposal always passes
  CHECK(read_kb(dir / "kb2.jsonl").size() == 3);
}

TEST_CASE("usage and data errors map to exit codes") {
  test::TempDir dir("cli_err");
  auto r = run({"kb", "build", "--bogus"});
  CHECK(r.code == cli::kExitUsage);
  r = run({});
  CHECK(r.code == cli::kExitUsage);
  r = run({"eval", "--manifest", p(dir.path()), "--report", p(dir / "r.json")});
  CHECK(r.code == cli::kExitUsage);
  r = run({"eval", "--report", p(dir / "r.json"), "--manifest", p(dir / "missing.jsonl")});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("--manifest") != std::string::npos);
  r = run({"kb"});
  CHECK(r.code == cli::kExitUsage);
  r = run({"train", "--manifest", p(dir / "x"), "--cache", p(dir / "c"), "--out", p(dir / "o"), "--hidden", "abc"});
  CHECK(r.code == cli::kExitUsage);

  write_file_atomic(dir / "states.tsv", "hand only two fields\n");
  write_file_atomic(dir / "nouns.txt", "cup\n");
  r = run({"kb", "build", "--states", p(dir / "states.tsv"), "--nouns", p(dir / "nouns.txt"), "--out",
           p(dir / "kb.jsonl")});
  CHECK(r.code == cli::kExitData);
  CHECK(r.err.find("states.tsv:1") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dir / "kb.jsonl"));
}

TEST_CASE("eval without a checkpoint names the flag") {
  test::TempDir dir("cli_ckpt");
  REQUIRE(run({"synth", "--out", p(dir / "data"), "--videos-per-class", "10", "--base-classes", "2"}).code == 0);
  auto r = run({"eval", "--manifest", p(dir / "data"), "--split", p(dir / "data" / "test.txt"), "--report",
                p(dir / "r.json"), "--cache", p(dir / "cache")});
  CHECK(r.code == cli::kExitUsage);
  CHECK(r.err.find("--ckpt") != std::string::npos);
}

TEST_CASE("end-to-end pipeline through the command line") {
  test::TempDir dir("cli_e2e");
  const auto data = dir / "data";
  auto r = run({"--log-level", "quiet", "synth", "--out", p(data), "--videos-per-class", "12", "--base-classes", "4"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(std::filesystem::exists(dir / "data.run.json"));

  r = run({"tpn", "train", "--annotations", p(data / "annotations.tsv"), "--out", p(dir / "tagger.json"),
           "--epochs", "50"});
  REQUIRE(r.code == 0);
  r = run({"tpn", "extract", "--captions", p(data / "captions"), "--tagger", p(dir / "tagger.json"), "--out",
           p(dir / "tpn.jsonl")});
  REQUIRE(r.code == 0);
  r = run({"kb", "build", "--states", p(data / "states.tsv"), "--nouns", p(data / "nouns.txt"), "--corpus",
           p(data / "corpus.txt"), "--extra", p(dir / "tpn.jsonl"), "--out", p(dir / "kb.jsonl")});
  REQUIRE(r.code == 0);
  const auto kb = read_kb(dir / "kb.jsonl");
  CHECK(kb.size() >= 60);

  r = run({"semantics", "extract", "--manifest", p(data), "--split", p(data / "base.txt"), "--kb",
           p(dir / "kb.jsonl"), "--cache", p(dir / "cache"), "--samplings", "0"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("48 matrices (48 computed") != std::string::npos);

  write_file_atomic(dir / "train.toml", "seed = 5\n[train]\nhidden = 16\nepochs = 3\nlr = 0.05\n");
  r = run({"--config", p(dir / "train.toml"), "train", "--manifest", p(data), "--split", p(data / "base.txt"),
           "--kb", p(dir / "kb.jsonl"), "--cache", p(dir / "cache"), "--out", p(dir / "model.ckpt"), "--epochs",
           "2"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto ckpt = nn::load_checkpoint(dir / "model.ckpt");
  const auto meta = json::parse(ckpt.manifest);
  CHECK(meta["tmn"]["hidden_dim"] == 16);
  CHECK(meta["seed"] == 5);
  CHECK(meta["kb_hash"] == to_hex(kb.content_hash));
  const auto rec = json::parse(read_file(dir / "model.ckpt.run.json"));
  CHECK(rec["config"].get<std::string>().find("epochs=2") != std::string::npos);

  const std::vector<std::string> eval_args{
      "--seed", "5", "eval", "--manifest", p(data), "--split", p(data / "test.txt"), "--kb", p(dir / "kb.jsonl"),
      "--cache", p(dir / "cache"), "--ckpt", p(dir / "model.ckpt"), "--tasks", "3", "--samplings", "2",
      "--importance", "3", "--importance-tasks", "1", "--report"};
  auto args = eval_args;
  args.push_back(p(dir / "a.json"));
  r = run(args);
  INFO(r.err);
  REQUIRE(r.code == 0);
  args = eval_args;
  args.push_back(p(dir / "b.json"));
  REQUIRE(run(args).code == 0);
  CHECK(read_file(dir / "a.json") == read_file(dir / "b.json"));
  const auto report = json::parse(read_file(dir / "a.json"));
  CHECK(report["tasks"] == 3);
  CHECK(report["config"]["method"] == "full");
  CHECK(report["importance"].size() == 3);

  r = run({"eval", "--manifest", p(data), "--split", p(data / "test.txt"), "--kb", p(dir / "kb.jsonl"), "--cache",
           p(dir / "cache"), "--ckpt", p(dir / "model.ckpt"), "--no-tmn", "--report", p(dir / "c.json")});
  CHECK(r.code == cli::kExitData);

  write_file_atomic(dir / "other.jsonl", lines(dir / "kb.jsonl").front() + "\n");
  r = run({"eval", "--manifest", p(data), "--split", p(data / "test.txt"), "--kb", p(dir / "other.jsonl"),
           "--cache", p(dir / "cache"), "--ckpt", p(dir / "model.ckpt"), "--tasks", "1", "--report",
           p(dir / "c.json")});
  CHECK(r.code == cli::kExitData);
  CHECK(r.err.find("kb_hash") != std::string::npos);

  r = run({"eval", "--mode", "zeroshot", "--manifest", p(data), "--split", p(data / "test.txt"), "--tasks", "2",
           "--samplings", "1", "--report", p(dir / "z.json")});
  REQUIRE(r.code == 0);

  r = run({"report", "--in", p(dir / "a.json"), p(dir / "z.json"), "--format", "csv"});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("method,setting,tasks,accuracy,ci95\nfull,5-way 5-shot,3,", 0) == 0);
  CHECK(r.out.find("\nzero-shot,5-way 5-shot,2,") != std::string::npos);
  r = run({"report", "--in", p(dir / "a.json"), "--format", "md"});
  CHECK(r.out.rfind("| Method | Setting | Tasks | Accuracy (%) | 95% CI |\n|---|", 0) == 0);
  r = run({"report", "--in", p(dir / "a.json")});
  CHECK(r.out.rfind("Method", 0) == 0);
  CHECK(r.out.find("full") != std::string::npos);
}

TEST_CASE("config files and unknown keys") {
  test::TempDir dir("cli_cfg");
  write_file_atomic(dir / "x.json", "{\"task_accuracies\": [1.0]}");
  write_file_atomic(dir / "good.toml", "[report]\nformat = \"csv\"\n");
  auto r = run({"--config", p(dir / "good.toml"), "report", "--in", p(dir / "x.json")});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.rfind("method,", 0) == 0);
  r = run({"--config", p(dir / "good.toml"), "report", "--in", p(dir / "x.json"), "--format", "md"});
  CHECK(r.out.rfind("| Method", 0) == 0);
  write_file_atomic(dir / "bad.toml", "[report]\nnot_an_option = 3\n");
  r = run({"--config", p(dir / "bad.toml"), "report", "--in", p(dir / "x.json")});
  CHECK(r.code == cli::kExitUsage);
}
