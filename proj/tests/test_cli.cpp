#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "mtbrn/cli.hpp"
#include "mtbrn/pathfinder.hpp"
#include "support/oracles.hpp"

using namespace mtbrn;
using nlohmann::json;
using oracle::TempDir;

namespace {

struct Result {
  int status = 0;
  std::string out;
  std::string err;
};

Result run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int status = cli::run_cli(args, out, err);
  return {status, out.str(), err.str()};
}

std::string p(const TempDir& dir, const std::string& name) { return (dir / name).string(); }

void write(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

// Error JSON printed on the first line of stderr.
json error_of(const Result& r) { return json::parse(r.err.substr(0, r.err.find('\n'))); }

// Runs every stage on a small world inside `dir`.
void run_pipeline(const TempDir& dir, const std::string& threads = "1") {
  ASSERT_EQ(run({"gen-synth", "--out-dir", p(dir, ""), "--users", "60", "--impressions", "30", "--seed", "3"}).status,
            0);
  ASSERT_EQ(run({"build-simgraph", "--interactions", p(dir, "interactions.tsv"), "--profiles",
                 p(dir, "profiles.tsv"), "--out-dir", p(dir, ""), "--test-tail", "5", "--train-window", "10"})
                .status,
            0);
  for (const char* part : {"train", "test"}) {
    const auto r = run({"extract-paths", "--instances", p(dir, std::string(part) + ".jsonl"), "--simgraph",
                        p(dir, "simgraph.tsv"), "--triples", p(dir, "triples.tsv"), "--out",
                        p(dir, std::string(part) + "_paths.jsonl"), "--k-cf", "5", "--k-kg", "5", "--threads",
                        threads});
    ASSERT_EQ(r.status, 0) << r.err;
  }
  const auto t = run({"train", "--train", p(dir, "train.jsonl"), "--paths", p(dir, "train_paths.jsonl"), "--out-dir",
                      p(dir, ""), "--epochs", "1", "--hidden", "4", "--mlp", "8,4", "--lr", "0.02"});
  ASSERT_EQ(t.status, 0) << t.err;
  const auto e = run({"evaluate", "--checkpoint", p(dir, "checkpoint.json"), "--instances", p(dir, "test.jsonl"),
                      "--paths", p(dir, "test_paths.jsonl"), "--out", p(dir, "eval.json"), "--predictions",
                      p(dir, "predictions.csv")});
  ASSERT_EQ(e.status, 0) << e.err;
  const auto a = run({"analyze-paths", "--instances", p(dir, "test.jsonl"), "--paths", p(dir, "test_paths.jsonl"),
                      "--out-dir", p(dir, "")});
  ASSERT_EQ(a.status, 0) << a.err;
}

const std::vector<std::string> kManifests{"gen-synth.manifest.json",         "build-simgraph.manifest.json",
                                          "train_paths.jsonl.manifest.json", "test_paths.jsonl.manifest.json",
                                          "train.manifest.json",             "eval.json.manifest.json",
                                          "analyze-paths.manifest.json"};

}  // namespace

// ---------------------------------------------------------------------------
// Config files

TEST(ConfigFile, ParsesGlobalsSectionsAndComments) {
  const auto c = cli::parse_config(
      "# settings\nseed = 7\nk_cf = \"10\"\n\n[train]\nepochs = 3  # short\nlr=0.02\n", "run.conf");
  EXPECT_EQ(c.global.at("seed").value, "7");
  EXPECT_EQ(c.global.at("k-cf").value, "10");
  EXPECT_EQ(c.global.at("k-cf").line, 3u);
  EXPECT_EQ(c.sections.at("train").at("epochs").value, "3");
  EXPECT_EQ(c.sections.at("train").at("lr").value, "0.02");
  EXPECT_EQ(c.source, "run.conf");
}

TEST(ConfigFile, RejectsMalformedLines) {
  EXPECT_ANY_THROW(cli::parse_config("seed 7\n"));
  EXPECT_ANY_THROW(cli::parse_config("seed = 7\nseed = 8\n"));
  EXPECT_ANY_THROW(cli::parse_config("[train\nepochs = 1\n"));
}

TEST(ConfigFile, FlagOverridesFileWithNote) {
  TempDir dir("cli_cfg");
  write(dir / "run.conf", "variant = full\n[grad-check]\ntol = 0.5\n");
  const auto r = run({"grad-check", "--config", p(dir, "run.conf"), "--tol", "1e-4", "--manifest", p(dir, "m.json")});
  EXPECT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.err.find("--tol"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("run.conf:3"), std::string::npos) << r.err;
  const auto m = json::parse(oracle::read_file(dir / "m.json"));
  EXPECT_EQ(m.at("config").at("tol"), "1e-4");
}

TEST(ConfigFile, GlobalAndSectionConflictNamesBothSources) {
  TempDir dir("cli_conflict");
  write(dir / "run.conf", "tol = 0.1\n[grad-check]\ntol = 0.2\n");
  const auto r = run({"grad-check", "--config", p(dir, "run.conf"), "--manifest", p(dir, "m.json")});
  EXPECT_EQ(r.status, 2);
  const auto msg = error_of(r).at("error").at("message").get<std::string>();
  EXPECT_NE(msg.find("run.conf:1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("run.conf:3"), std::string::npos) << msg;
}

TEST(ConfigFile, UnknownKeyInSectionIsUsageError) {
  TempDir dir("cli_unknown_key");
  write(dir / "run.conf", "[grad-check]\nbogus = 1\n");
  EXPECT_EQ(run({"grad-check", "--config", p(dir, "run.conf")}).status, 2);
}

// ---------------------------------------------------------------------------
// Errors and help

TEST(CliErrors, UnknownFlagGivesStructuredUsageError) {
  const auto r = run({"grad-check", "--no-such-flag"});
  EXPECT_EQ(r.status, 2);
  const auto e = error_of(r).at("error");
  EXPECT_EQ(e.at("command"), "grad-check");
  EXPECT_TRUE(e.contains("kind"));
  EXPECT_TRUE(e.contains("message"));
}

TEST(CliErrors, MissingInputFileIsUsageError) {
  TempDir dir("cli_missing");
  const auto r = run({"build-simgraph", "--interactions", p(dir, "absent.tsv"), "--out-dir", p(dir, "")});
  EXPECT_EQ(r.status, 2);
  EXPECT_NO_THROW(error_of(r));
}

TEST(CliErrors, NoSubcommandAndBadVariant) {
  EXPECT_EQ(run({}).status, 2);
  EXPECT_EQ(run({"grad-check", "--variant", "huge"}).status, 2);
}

TEST(CliErrors, MalformedInputIsRuntimeFailure) {
  TempDir dir("cli_malformed");
  write(dir / "interactions.tsv", "u1\ti1\tnot-a-time\t1\n");
  const auto r = run({"build-simgraph", "--interactions", p(dir, "interactions.tsv"), "--out-dir", p(dir, "")});
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(error_of(r).at("error").at("command"), "build-simgraph");
}

TEST(CliHelp, DocumentsEveryFlag) {
  for (const char* cmd :
       {"gen-synth", "build-simgraph", "extract-paths", "train", "evaluate", "analyze-paths", "grad-check"}) {
    const auto r = run({cmd, "--help"});
    EXPECT_EQ(r.status, 0) << cmd;
    EXPECT_NE(r.out.find("--seed"), std::string::npos) << cmd;
    EXPECT_NE(r.out.find("--config"), std::string::npos) << cmd;
  }
  EXPECT_NE(run({"extract-paths", "--help"}).out.find("--threads"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Commands

TEST(GradCheckCommand, PrintsErrorAndPass) {
  TempDir dir("cli_grad");
  const auto r = run({"grad-check", "--variant", "full", "--seed", "7", "--manifest", p(dir, "m.json"), "--out",
                      p(dir, "report.json")});
  EXPECT_EQ(r.status, 0) << r.err;
  EXPECT_NE(r.out.find("max_rel_error: "), std::string::npos);
  EXPECT_NE(r.out.find("\nPASS\n"), std::string::npos) << r.out;
  EXPECT_TRUE(std::filesystem::exists(dir / "report.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "m.json"));
}

TEST(GradCheckCommand, ImpossibleToleranceFails) {
  TempDir dir("cli_grad_fail");
  const auto r = run({"grad-check", "--tol", "1e-15", "--manifest", p(dir, "m.json")});
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.out.find("\nFAIL\n"), std::string::npos) << r.out;
}

TEST(Pipeline, SmallWorldRunsEndToEnd) {
  TempDir dir("cli_pipeline");
  run_pipeline(dir);
  if (HasFatalFailure()) return;

  const auto report = json::parse(oracle::read_file(dir / "eval.json"));
  for (const char* key : {"variant", "auc", "auc_defined", "logloss", "n_pos", "n_neg"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
  EXPECT_EQ(report.at("variant"), "full");
  const auto preds = oracle::read_file(dir / "predictions.csv");
  EXPECT_EQ(preds.substr(0, preds.find('\n')), "index,user,target,label,score");

  for (const auto& name : kManifests) {
    const auto m = json::parse(oracle::read_file(dir / name));
    EXPECT_TRUE(m.contains("command")) << name;
    EXPECT_TRUE(m.contains("seed")) << name;
    EXPECT_TRUE(m.contains("outputs")) << name;
    EXPECT_TRUE(m.contains("wall_time_seconds")) << name;
  }
  const auto extract = json::parse(oracle::read_file(dir / "test_paths.jsonl.manifest.json"));
  EXPECT_TRUE(extract.at("inputs").contains("instances"));
  for (const char* f : {"path_stats.json", "path_stats.csv", "path_stats.gp"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }

  const auto csv = run({"evaluate", "--checkpoint", p(dir, "checkpoint.json"), "--instances", p(dir, "test.jsonl"),
                        "--paths", p(dir, "test_paths.jsonl"), "--out", p(dir, "eval.csv"), "--format", "csv"});
  EXPECT_EQ(csv.status, 0);
  EXPECT_EQ(csv.out.substr(0, csv.out.find('\n')), "metric,value");
}

TEST(Pipeline, RerunsAndThreadCountsGiveIdenticalManifests) {
  TempDir a("cli_det_a"), b("cli_det_b");
  run_pipeline(a, "1");
  run_pipeline(b, "4");
  if (HasFatalFailure()) return;
  for (const auto& name : kManifests) {
    EXPECT_EQ(cli::comparable_manifest(a / name), cli::comparable_manifest(b / name)) << name;
  }
  EXPECT_EQ(oracle::read_file(a / "test_paths.jsonl"), oracle::read_file(b / "test_paths.jsonl"));
}

TEST(ExtractPathsCommand, CapsPathsPerInstance) {
  // Sixty behaviors, each one hop from the target.
  TempDir dir("cli_cap");
  std::string sim, behaviors;
  for (int i = 0; i < 60; ++i) {
    const std::string b = "b" + std::to_string(100 + i);
    sim += b + "\tv\t0.5\n";
    behaviors += std::string(i ? "," : "") + "\"" + b + "\"";
  }
  write(dir / "sim.tsv", sim);
  write(dir / "kg.tsv", "");
  write(dir / "inst.jsonl", "{\"user\":\"u\",\"target\":\"v\",\"behaviors\":[" + behaviors +
                                "],\"label\":1,\"user_features\":[],\"target_features\":[]}\n");
  const auto r = run({"extract-paths", "--instances", p(dir, "inst.jsonl"), "--simgraph", p(dir, "sim.tsv"),
                      "--triples", p(dir, "kg.tsv"), "--out", p(dir, "paths.jsonl"), "--k-cf", "50", "--k-kg", "50"});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto sets = paths::read_path_sets(dir / "paths.jsonl");
  ASSERT_EQ(sets.size(), 1u);
  EXPECT_EQ(sets[0].cf.size(), 50u);
  EXPECT_TRUE(sets[0].kg.empty());
}

TEST(ExtractPathsCommand, RejectsZeroThreads) {
  TempDir dir("cli_threads");
  write(dir / "sim.tsv", "");
  write(dir / "kg.tsv", "");
  write(dir / "inst.jsonl", "");
  const auto r = run({"extract-paths", "--instances", p(dir, "inst.jsonl"), "--simgraph", p(dir, "sim.tsv"),
                      "--triples", p(dir, "kg.tsv"), "--out", p(dir, "paths.jsonl"), "--threads", "0"});
  EXPECT_EQ(r.status, 2);
}
