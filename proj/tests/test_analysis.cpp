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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "aod/analysis.hpp"
#include "aod/synthetic.hpp"
#include "test_util.hpp"

namespace aod {
namespace {

using testing::error_kind_of;
using testing::random_dataset;
using testing::TempDir;

ActivationDataset from_vectors(const std::vector<std::vector<float>>& rows,
                               const std::vector<std::uint8_t>& labels, int layer = 0) {
  ActivationDataset ds;
  ds.dim = static_cast<std::uint32_t>(rows.front().size());
  ds.meta = {{"layer", std::to_string(layer)}};
  for (std::size_t i = 0; i < rows.size(); ++i) ds.records.push_back({i, labels[i], rows[i]});
  return ds;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(LayerStats, ThreeFourFiveTriangle) {
  const auto r = layerwise_max_stats({{0, from_vectors({{3.0f, 4.0f}}, {1})}});
  ASSERT_EQ(r.stats.size(), 1u);
  EXPECT_NEAR(r.stats[0].mean, 0.8, 1e-15);
  EXPECT_EQ(r.stats[0].group, 1);
  EXPECT_EQ(r.stats[0].std, 0.0);
}

TEST(LayerStats, IdenticalRecordsHaveZeroSpread) {
  const auto r = layerwise_max_stats(
      {{2, from_vectors({{1.0f, -2.0f, 2.0f}, {1.0f, -2.0f, 2.0f}, {1.0f, -2.0f, 2.0f}}, {0, 0, 0})}});
  ASSERT_EQ(r.stats.size(), 1u);
  EXPECT_EQ(r.stats[0].std, 0.0);
  EXPECT_NEAR(r.stats[0].mean, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r.stats[0].count, 3u);
}

TEST(LayerStats, OneHotVectorsPeakAtOne) {
  std::vector<std::vector<float>> rows;
  std::vector<std::uint8_t> labels;
  for (int i = 0; i < 10; ++i) {
    std::vector<float> v(10, 0.0f);
    v[static_cast<std::size_t>(i)] = i % 3 == 0 ? -5.0f : 0.25f;
    rows.push_back(v);
    labels.push_back(static_cast<std::uint8_t>(i % 2));
  }
  for (const auto& s : layerwise_max_stats({{1, from_vectors(rows, labels)}}).stats) {
    EXPECT_EQ(s.mean, 1.0);
    EXPECT_EQ(s.std, 0.0);
  }
}

TEST(LayerStats, MatchesDirectComputationAndBounds) {
  std::map<int, ActivationDataset> layers;
  for (int l : {10, 2, 5}) layers[l] = random_dataset(17, 40, static_cast<std::uint64_t>(l), l);
  const auto r = layerwise_max_stats(layers);
  ASSERT_EQ(r.stats.size(), 6u);
  EXPECT_EQ(r.stats[0].layer, 2);
  EXPECT_EQ(r.stats[5].layer, 10);
  for (const auto& s : r.stats) {
    std::vector<double> vals;
    for (const auto& rec : layers.at(s.layer).records) {
      if (rec.label != s.group) continue;
      double n = 0.0, m = 0.0;
      for (float x : rec.vector) n += static_cast<double>(x) * x;
      for (float x : rec.vector) m = std::max(m, std::abs(x) / std::sqrt(n));
      vals.push_back(m);
    }
    double mean = 0.0;
    for (double v : vals) mean += v / static_cast<double>(vals.size());
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean) / static_cast<double>(vals.size() - 1);
    EXPECT_NEAR(s.mean, mean, 1e-12);
    EXPECT_NEAR(s.std, std::sqrt(var), 1e-12);
    EXPECT_EQ(s.count, vals.size());
    EXPECT_GT(s.mean, 0.0);
    EXPECT_LE(s.mean, 1.0);
  }
}

TEST(LayerStats, ZeroVectorsAreSkippedAndCounted) {
  const auto r = layerwise_max_stats(
      {{0, from_vectors({{0.0f, 0.0f}, {1.0f, 0.0f}, {0.0f, 0.0f}}, {0, 0, 1})}});
  EXPECT_EQ(r.skipped_zero_vectors, 2u);
  ASSERT_EQ(r.stats.size(), 1u);
  EXPECT_EQ(r.stats[0].group, 0);
  EXPECT_EQ(r.stats[0].count, 1u);
}

TEST(Metrics, Accuracy) {
  const std::vector<std::uint8_t> g = {1, 0, 1, 1};
  EXPECT_EQ(accuracy(g, g), 1.0);
  EXPECT_EQ(accuracy(std::vector<std::uint8_t>{0, 1, 0, 0}, g), 0.0);
  EXPECT_EQ(accuracy(std::vector<std::uint8_t>{1, 0, 1, 0}, g), 0.75);
  EXPECT_EQ(error_kind_of([&] { accuracy(std::vector<std::uint8_t>{1}, g); }),
            ErrorKind::kShapeMismatch);
  EXPECT_EQ(error_kind_of([] { accuracy({}, {}); }), ErrorKind::kEmpty);
}

TEST(Metrics, ChairS) {
  EXPECT_EQ(chair_s(std::vector<std::uint8_t>{1, 0, 0, 0}), 0.25);
  EXPECT_EQ(chair_s(std::vector<std::uint8_t>{0, 0, 0}), 0.0);
  EXPECT_EQ(chair_s(std::vector<std::uint8_t>{1, 1}), 1.0);
  EXPECT_EQ(error_kind_of([] { chair_s({}); }), ErrorKind::kEmpty);
}

TEST(Metrics, PermutationInvariant) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint8_t> p(30), g(30), f(30);
    for (std::size_t i = 0; i < 30; ++i) {
      p[i] = rng.coin();
      g[i] = rng.coin();
      f[i] = rng.coin();
    }
    const double a = accuracy(p, g), c = chair_s(f);
    std::vector<std::size_t> perm(30);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(perm);
    std::vector<std::uint8_t> pp(30), gp(30), fp(30);
    for (std::size_t i = 0; i < 30; ++i) {
      pp[i] = p[perm[i]];
      gp[i] = g[perm[i]];
      fp[i] = f[perm[i]];
    }
    EXPECT_EQ(accuracy(pp, gp), a);
    EXPECT_EQ(chair_s(fp), c);
  }
}

class Transfer : public ::testing::Test {
 protected:
  void SetUp() override {
    SyntheticSpec spec;
    spec.d = 16;
    const auto a = generate_world(spec, 1);
    const auto b = derive_world(a, 1.5, 2);
    targets_["split10"] = {generate_dataset(a, 300, 3), a.head};
    targets_["split2"] = {generate_dataset(b, 300, 4), b.head};
    directions_["split10"] = mean_diff_oracle(targets_["split10"].data);
    directions_["split2"] = planted_direction(b);
  }
  std::map<std::string, TransferTarget> targets_;
  std::map<std::string, Direction> directions_;
};

TEST_F(Transfer, FullMatrixInNaturalOrder) {
  const auto cells = transfer_matrix(directions_, targets_, InterventionConfig{});
  ASSERT_EQ(cells.size(), 4u);
  EXPECT_EQ(cells[0].source, "split2");
  EXPECT_EQ(cells[0].target, "split2");
  EXPECT_EQ(cells[1].target, "split10");
  EXPECT_EQ(cells[3].source, "split10");
  for (const auto& c : cells) {
    EXPECT_TRUE(c.valid);
    EXPECT_EQ(c.delta, c.intervened - c.baseline);
  }
}

TEST_F(Transfer, BaselineIsSharedAcrossSources) {
  const auto cells = transfer_matrix(directions_, targets_, InterventionConfig{});
  for (const auto& c : cells) {
    for (const auto& o : cells) {
      if (c.target == o.target) EXPECT_EQ(c.baseline, o.baseline);
    }
    EXPECT_EQ(c.baseline, factual_rate(targets_.at(c.target), nullptr, InterventionConfig{}));
  }
}

TEST_F(Transfer, ZeroGammaGivesZeroDeltas) {
  InterventionConfig cfg;
  cfg.gamma = 0.0;
  for (auto mode : {DecodeMode::kDirect, DecodeMode::kContrastive}) {
    cfg.mode = mode;
    for (const auto& c : transfer_matrix(directions_, targets_, cfg)) EXPECT_EQ(c.delta, 0.0);
  }
}

TEST_F(Transfer, IdenticalTargetsGiveIdenticalColumns) {
  targets_["copy"] = targets_["split2"];
  const auto cells = transfer_matrix(directions_, targets_, InterventionConfig{});
  for (const auto& c : cells) {
    if (c.target != "copy") continue;
    const auto twin = std::find_if(cells.begin(), cells.end(), [&](const TransferCell& o) {
      return o.source == c.source && o.target == "split2";
    });
    ASSERT_NE(twin, cells.end());
    EXPECT_EQ(c.baseline, twin->baseline);
    EXPECT_EQ(c.intervened, twin->intervened);
  }
}

TEST_F(Transfer, MismatchedCellIsMarkedInvalid) {
  directions_["wide"] = Direction::from_vector(std::vector<double>(17, 1.0));
  const auto cells = transfer_matrix(directions_, targets_, InterventionConfig{});
  ASSERT_EQ(cells.size(), 6u);
  std::size_t invalid = 0;
  for (const auto& c : cells) {
    if (c.source == "wide") {
      EXPECT_FALSE(c.valid);
      EXPECT_TRUE(std::isnan(c.delta));
      ++invalid;
    } else {
      EXPECT_TRUE(c.valid);
    }
  }
  EXPECT_EQ(invalid, 2u);
  const auto csv = render_report(cells, ReportFormat::kCsv);
  EXPECT_NE(csv.find("wide,split2,"), std::string::npos);
  EXPECT_NE(csv.find(",invalid,invalid,0\n"), std::string::npos);
}

TEST(Report, LayerCsvGolden) {
  std::vector<LayerStats> stats = {{3, 1, 0.5, 0.125, 4},
                                   {1, 0, 1.0 / 3.0, 0.0, 2},
                                   {1, 1, 0.123456789012, 1e-12, 7}};
  EXPECT_EQ(render_report(stats, ReportFormat::kCsv),
            "layer,group,mean,std,count\n"
            "1,0,0.333333333,0,2\n"
            "1,1,0.123456789,1e-12,7\n"
            "3,1,0.5,0.125,4\n");
  const auto j = nlohmann::json::parse(render_report(stats, ReportFormat::kJson));
  ASSERT_EQ(j.size(), 3u);
  EXPECT_EQ(j[2]["layer"], 3);
  EXPECT_EQ(j[0]["count"], 2);
}

TEST(Report, TransferCsvGoldenAndStable) {
  TempDir tmp;
  std::vector<TransferCell> cells = {{"b", "a", 0.5, 0.75, 0.25, true},
                                     {"a", "b", 0.25, 0.2, 0.2 - 0.25, true},
                                     {"a", "a", 0.5, 0.5, 0.0, true},
                                     {"b", "b", 0.25, 0.5, 0.25, true}};
  const std::string expected =
      "source,target,baseline,intervened,delta,valid\n"
      "a,a,0.5,0.5,0,1\n"
      "a,b,0.25,0.2,-0.05,1\n"
      "b,a,0.5,0.75,0.25,1\n"
      "b,b,0.25,0.5,0.25,1\n";
  emit_report(cells, tmp / "t1.csv", ReportFormat::kCsv);
  emit_report(cells, tmp / "t2.csv", ReportFormat::kCsv);
  EXPECT_EQ(slurp(tmp / "t1.csv"), expected);
  EXPECT_EQ(slurp(tmp / "t1.csv"), slurp(tmp / "t2.csv"));
  emit_report(cells, tmp / "t.json", ReportFormat::kJson);
  EXPECT_EQ(nlohmann::json::parse(slurp(tmp / "t.json")).size(), 4u);
}

TEST(Report, NaturalOrdering) {
  EXPECT_TRUE(natural_less("layer2", "layer10"));
  EXPECT_FALSE(natural_less("layer10", "layer2"));
  EXPECT_TRUE(natural_less("a", "b"));
  EXPECT_TRUE(natural_less("x9y", "x10a"));
  EXPECT_FALSE(natural_less("same", "same"));
}

TEST(Report, UnwritablePathIsIoError) {
  EXPECT_EQ(error_kind_of([] {
              emit_report(std::vector<LayerStats>{}, "/nonexistent-dir/x.csv", ReportFormat::kCsv);
            }),
            ErrorKind::kIo);
}

}  // namespace
}  // namespace aod
