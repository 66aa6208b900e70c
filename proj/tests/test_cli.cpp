/* Copyright 2026 The AOD Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "aod/aod.hpp"
#include "cli/commands.hpp"
#include "test_util.hpp"

namespace aod::cli {
namespace {

using aod::testing::TempDir;

struct Result {
  int code;
  std::string out, err;
};

Result aod(std::vector<std::string> args) {
  args.insert(args.begin(), "aod");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const std::filesystem::path& p) { return nlohmann::json::parse(slurp(p)); }

std::string s(const std::filesystem::path& p) { return p.string(); }

TEST(Cli, HelpAndVersionExitZero) {
  EXPECT_EQ(aod({"--help"}).code, kExitOk);
  EXPECT_NE(aod({"--help"}).out.find("synth-gen"), std::string::npos);
  EXPECT_EQ(aod({"--version"}).code, kExitOk);
  EXPECT_EQ(aod({"train", "--help"}).code, kExitOk);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(aod({}).code, kExitUsage);
  EXPECT_EQ(aod({"frobnicate"}).code, kExitUsage);
  TempDir tmp;
  const auto missing = aod({"train", "--out", s(tmp / "t")});
  EXPECT_EQ(missing.code, kExitUsage);
  EXPECT_NE(missing.err.find("--data"), std::string::npos);
  EXPECT_EQ(aod({"synth-gen", "--out", s(tmp.path()), "--n", "many"}).code, kExitUsage);
}

TEST(Cli, SynthGenRejectsTinyDimension) {
  TempDir tmp;
  const auto r = aod({"synth-gen", "--out", s(tmp / "w"), "--d", "2"});
  EXPECT_EQ(r.code, kExitUsage);
  EXPECT_NE(r.err.find("d must be >= 3"), std::string::npos);
}

TEST(Cli, SynthGenIsDeterministic) {
  TempDir tmp;
  ASSERT_EQ(aod({"synth-gen", "--out", s(tmp / "a"), "--seed", "7"}).code, kExitOk);
  ASSERT_EQ(aod({"synth-gen", "--out", s(tmp / "b"), "--seed", "7"}).code, kExitOk);
  for (const char* f : {"train.aoda", "eval.aoda", "world.json"}) {
    EXPECT_EQ(slurp(tmp / "a" / f), slurp(tmp / "b" / f)) << f;
  }
  const auto m = read_json(tmp / "a" / "manifest.json");
  EXPECT_EQ(m["command"], "synth-gen");
  EXPECT_EQ(m["seed"], 7);
  EXPECT_EQ(m["config"]["d"], 64);
  EXPECT_TRUE(m.contains("duration_seconds"));
  EXPECT_TRUE(m.contains("version"));
}

TEST(Cli, SynthGenCountField) {
  TempDir tmp;
  ASSERT_EQ(aod({"synth-gen", "--out", s(tmp.path()), "--n", "100"}).code, kExitOk);
  const auto bytes = slurp(tmp / "train.aoda");
  std::uint64_t count = 0;
  std::memcpy(&count, bytes.data() + 10, 8);
  EXPECT_EQ(count, 100u);
}

TEST(Cli, SeedFallsBackToEnvironment) {
  TempDir tmp;
  ::setenv("AOD_SEED", "99", 1);
  const auto r = aod({"synth-gen", "--out", s(tmp.path()), "--n", "10"});
  ::unsetenv("AOD_SEED");
  ASSERT_EQ(r.code, kExitOk);
  EXPECT_EQ(read_json(tmp / "manifest.json")["seed"], 99);
}

class CliPipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    ASSERT_EQ(aod({"synth-gen", "--out", s(w()), "--n", "600", "--n-eval", "400"}).code, kExitOk);
    ASSERT_EQ(aod({"train", "--data", s(w() / "train.aoda"), "--world", s(w() / "world.json"),
                   "--out", s(t()), "--epochs", "2", "--hidden-size", "32"})
                  .code,
              kExitOk);
  }
  static void TearDownTestSuite() { delete dir_; }
  static std::filesystem::path w() { return dir_->path() / "world"; }
  static std::filesystem::path t() { return dir_->path() / "train"; }
  static std::filesystem::path root() { return dir_->path(); }
  static TempDir* dir_;
};
TempDir* CliPipeline::dir_ = nullptr;

TEST_F(CliPipeline, TrainWritesDirectionReportManifest) {
  const auto dir = load_direction(t() / "direction.json");
  EXPECT_EQ(dir.dim(), 64u);
  const auto report = read_json(t() / "report.json");
  EXPECT_EQ(report["epochs"].size(), 2u);
  EXPECT_TRUE(report["world"].contains("cos_learned_vs_planted"));
  EXPECT_TRUE(report["world"].contains("cos_mean_diff_vs_planted"));
  const auto m = read_json(t() / "manifest.json");
  EXPECT_EQ(m["config"]["mode"], "adversarial");
  EXPECT_EQ(m["config"]["batch_size"], 256);
  EXPECT_EQ(m["config"]["val_ratio"], 0.2);
  EXPECT_EQ(m["config"]["hidden_width"], 32);
}

TEST_F(CliPipeline, ZeroLambdaRecordsProbeDegeneration) {
  const auto out = root() / "lambda0";
  ASSERT_EQ(aod({"train", "--data", s(w() / "train.aoda"), "--out", s(out), "--lambda", "0",
                 "--epochs", "1", "--hidden-size", "8"})
                .code,
            kExitOk);
  EXPECT_EQ(read_json(out / "manifest.json")["config"]["mode"], "probe-degeneration");
}

TEST_F(CliPipeline, TrainOnSingleClassIsRuntimeError) {
  auto ds = load_dataset(w() / "eval.aoda");
  for (auto& r : ds.records) r.label = 0;
  save_dataset(ds, root() / "single.aoda");
  const auto r = aod({"train", "--data", s(root() / "single.aoda"), "--out", s(root() / "x")});
  EXPECT_EQ(r.code, kExitRuntime);
}

TEST_F(CliPipeline, VanishingInterventionMatchesBaseline) {
  const auto out = root() / "identity";
  ASSERT_EQ(aod({"intervene", "--data", s(w() / "eval.aoda"), "--direction",
                 s(t() / "direction.json"), "--head", s(w() / "world.json"), "--gamma", "0",
                 "--beta", "0", "--out", s(out)})
                .code,
            kExitOk);
  const auto j = read_json(out / "decisions.json");
  for (const auto& d : j["decisions"]) EXPECT_EQ(d["token"], d["baseline_token"]);
  EXPECT_EQ(j["summary"]["hallucination_rate"], j["summary"]["baseline_hallucination_rate"]);
}

TEST_F(CliPipeline, GammaAliasIsIdentical) {
  const auto a = root() / "gamma", b = root() / "alias";
  const std::vector<std::string> common = {"intervene", "--data", s(w() / "eval.aoda"),
                                           "--direction", s(t() / "direction.json"), "--head",
                                           s(w() / "world.json"), "--mode", "direct"};
  auto with_gamma = common, with_alias = common;
  with_gamma.insert(with_gamma.end(), {"--gamma", "1.0", "--out", s(a)});
  with_alias.insert(with_alias.end(), {"--aod-alpha", "1.0", "--out", s(b)});
  ASSERT_EQ(aod(with_gamma).code, kExitOk);
  ASSERT_EQ(aod(with_alias).code, kExitOk);
  EXPECT_EQ(slurp(a / "decisions.json"), slurp(b / "decisions.json"));
}

TEST_F(CliPipeline, PlantedDirectionHalvesRateThroughCli) {
  const auto world = load_world(w() / "world.json");
  save_direction(planted_direction(world), root() / "planted.json");
  const auto out = root() / "planted_direct";
  ASSERT_EQ(aod({"intervene", "--data", s(w() / "eval.aoda"), "--direction",
                 s(root() / "planted.json"), "--head", s(w() / "world.json"), "--mode", "direct",
                 "--gamma", "1", "--out", s(out)})
                .code,
            kExitOk);
  const auto summary = read_json(out / "decisions.json")["summary"];
  EXPECT_GE(summary["relative_reduction"].get<double>(), 0.5);
}

TEST_F(CliPipeline, InterventionDimensionMismatchIsRuntimeError) {
  save_direction(Direction::from_vector({1.0, 0.0, 0.0}), root() / "d3.json");
  const auto r = aod({"intervene", "--data", s(w() / "eval.aoda"), "--direction",
                      s(root() / "d3.json"), "--head", s(w() / "world.json"), "--out",
                      s(root() / "mm")});
  EXPECT_EQ(r.code, kExitRuntime);
  EXPECT_NE(r.err.find("dimension mismatch"), std::string::npos);
}

TEST_F(CliPipeline, BadModeIsUsageError) {
  EXPECT_EQ(aod({"intervene", "--data", s(w() / "eval.aoda"), "--head", s(w() / "world.json"),
                 "--mode", "sideways", "--out", s(root() / "bad")})
                .code,
            kExitUsage);
  EXPECT_EQ(aod({"intervene", "--data", s(w() / "eval.aoda"), "--head", s(w() / "world.json"),
                 "--mode", "direct", "--out", s(root() / "bad")})
                .code,
            kExitUsage);
}

TEST_F(CliPipeline, LayersOverThreeLayers) {
  std::vector<std::string> args = {"layers", "--out", s(root() / "layers")};
  for (int layer : {0, 12, 3}) {
    const auto dir = root() / ("l" + std::to_string(layer));
    ASSERT_EQ(aod({"synth-gen", "--out", s(dir), "--n", "50", "--layer", std::to_string(layer)}).code,
              kExitOk);
    args.push_back("--data");
    args.push_back(s(dir / "train.aoda"));
  }
  ASSERT_EQ(aod(args).code, kExitOk);
  const auto csv = slurp(root() / "layers" / "layers.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_EQ(csv.rfind("layer,group,mean,std,count\n0,0,", 0), 0u);
  EXPECT_NE(csv.find("\n3,0,"), std::string::npos);
  EXPECT_LT(csv.find("\n3,1,"), csv.find("\n12,0,"));
}

TEST_F(CliPipeline, TransferTwoByTwo) {
  const auto world = load_world(w() / "world.json");
  save_direction(planted_direction(world), root() / "pA.json");
  const std::string target = s(w() / "eval.aoda") + "," + s(w() / "world.json");
  ASSERT_EQ(aod({"transfer", "--source", "A=" + s(root() / "pA.json"), "--source",
                 "B=" + s(t() / "direction.json"), "--target", "X=" + target, "--target",
                 "Y=" + target, "--out", s(root() / "transfer")})
                .code,
            kExitOk);
  const auto csv = slurp(root() / "transfer" / "transfer.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  EXPECT_EQ(csv.rfind("source,target,baseline,intervened,delta,valid\n", 0), 0u);
  EXPECT_EQ(aod({"transfer", "--source", "nameless", "--target", "X=" + target, "--out",
                 s(root() / "transfer2")})
                .code,
            kExitUsage);
}

TEST_F(CliPipeline, AuditPlantedDirection) {
  const auto world = load_world(w() / "world.json");
  save_direction(planted_direction(world), root() / "planted_audit.json");
  ASSERT_EQ(aod({"audit", "--data", s(w() / "train.aoda"), "--direction",
                 s(root() / "planted_audit.json"), "--out", s(root() / "audit")})
                .code,
            kExitOk);
  const auto j = read_json(root() / "audit" / "audit.json");
  EXPECT_LE(j["auc"].get<double>(), 0.55);
  EXPECT_TRUE(std::filesystem::exists(root() / "audit" / "manifest.json"));
}

TEST_F(CliPipeline, CorruptInputIsRuntimeError) {
  auto bytes = slurp(w() / "eval.aoda");
  bytes[0] = 'Z';
  std::ofstream(root() / "corrupt.aoda", std::ios::binary) << bytes;
  const auto r = aod({"layers", "--data", s(root() / "corrupt.aoda"), "--out", s(root() / "c")});
  EXPECT_EQ(r.code, kExitRuntime);
  EXPECT_NE(r.err.find("bad magic"), std::string::npos);
}

}  // namespace
}  // namespace aod::cli
