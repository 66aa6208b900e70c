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

#include <cmath>
#include <numeric>

#include "aod/disentangler.hpp"
#include "aod/synthetic.hpp"
#include "test_util.hpp"

namespace aod {
namespace {

using testing::error_kind_of;
using testing::error_message_of;
using testing::TempDir;

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

double coefficient(const ActivationRecord& r, const std::vector<double>& v) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += static_cast<double>(r.vector[i]) * v[i];
  return s;
}

TEST(World, Deterministic) {
  SyntheticSpec spec;
  const auto a = generate_world(spec, 11);
  const auto b = generate_world(spec, 11);
  EXPECT_EQ(a.v_true, b.v_true);
  EXPECT_EQ(a.u_leak, b.u_leak);
  EXPECT_EQ(a.head.weights, b.head.weights);
  EXPECT_NE(generate_world(spec, 12).v_true, a.v_true);
  EXPECT_EQ(generate_dataset(a, 100, 3), generate_dataset(b, 100, 3));
}

TEST(World, OrthonormalFrame) {
  SyntheticSpec spec;
  spec.d = 3;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto w = generate_world(spec, seed);
    EXPECT_LE(std::abs(dot(w.v_true, w.u_leak)), 1e-6);
    EXPECT_LE(std::abs(std::sqrt(dot(w.v_true, w.v_true)) - 1.0), 1e-6);
    EXPECT_LE(std::abs(std::sqrt(dot(w.u_leak, w.u_leak)) - 1.0), 1e-6);
  }
}

TEST(World, HallucinationRowCarriesCoupling) {
  SyntheticSpec spec;
  spec.hallucination_row_noise = 0.0;
  const auto w = generate_world(spec, 2);
  ASSERT_EQ(w.hallucination_token, 0u);
  ASSERT_EQ(w.head.hallucination_token, std::optional<std::size_t>(0));
  for (std::size_t i = 0; i < w.v_true.size(); ++i) {
    EXPECT_DOUBLE_EQ(w.head.weights(0, static_cast<Eigen::Index>(i)), spec.kappa * w.v_true[i]);
  }
  EXPECT_EQ(w.head.vocab.size(), static_cast<std::size_t>(spec.vocab_size));
}

TEST(World, ZeroCouplingRowMatchesOtherRows) {
  SyntheticSpec spec;
  spec.kappa = 0.0;
  double hall_sq = 0.0, other_sq = 0.0;
  std::size_t hall_n = 0, other_n = 0;
  for (std::uint64_t seed = 1; seed <= 300; ++seed) {
    const auto w = generate_world(spec, seed);
    for (Eigen::Index r = 0; r < w.head.weights.rows(); ++r) {
      const double sq = w.head.weights.row(r).squaredNorm();
      if (static_cast<std::size_t>(r) == w.hallucination_token) {
        hall_sq += sq;
        ++hall_n;
      } else {
        other_sq += sq;
        ++other_n;
      }
    }
  }
  // Both row populations have E||row||^2 = head_scale^2.
  EXPECT_NEAR(hall_sq / static_cast<double>(hall_n), 1.0, 0.05);
  EXPECT_NEAR(other_sq / static_cast<double>(other_n), 1.0, 0.02);
}

TEST(World, SignConventionIsRecorded) {
  SyntheticSpec spec;
  EXPECT_GT(spec.mu0, spec.mu1);  // hallucinated samples sit on the +v_true side
  const auto j = to_json(generate_world(spec, 1));
  EXPECT_EQ(j.at("sign_convention").at("hallucinated_label"), 0);
  EXPECT_EQ(j.at("sign_convention").at("hallucinated_coefficient_mean"), spec.mu0);
}

TEST(World, JsonRoundTrip) {
  TempDir tmp;
  SyntheticSpec spec;
  spec.d = 9;
  spec.leakage = 0.5;
  const auto w = generate_world(spec, 4);
  save_world(w, tmp / "w.json");
  const auto back = load_world(tmp / "w.json");
  EXPECT_EQ(back.v_true, w.v_true);
  EXPECT_EQ(back.u_leak, w.u_leak);
  EXPECT_EQ(back.head.weights, w.head.weights);
  EXPECT_EQ(back.hallucination_token, w.hallucination_token);
  EXPECT_EQ(to_json(back.spec), to_json(spec));
  EXPECT_EQ(to_json(spec_from_json(to_json(spec))), to_json(spec));
}

TEST(World, SpecValidation) {
  SyntheticSpec spec;
  spec.d = 2;
  EXPECT_EQ(error_message_of([&] { validate(spec); }), "d must be >= 3");
  spec = {};
  spec.vocab_size = 2;
  EXPECT_EQ(error_kind_of([&] { validate(spec); }), ErrorKind::kInvalidArgument);
  spec = {};
  spec.sigma_res = 0.0;
  EXPECT_EQ(error_kind_of([&] { generate_world(spec, 1); }), ErrorKind::kInvalidArgument);
}

TEST(World, DerivedWorldSharesDirectionAndHead) {
  SyntheticSpec spec;
  const auto a = generate_world(spec, 5);
  const auto b = derive_world(a, 1.5, 6);
  EXPECT_EQ(b.v_true, a.v_true);
  EXPECT_EQ(b.head.weights, a.head.weights);
  EXPECT_EQ(b.spec.sigma_res, 1.5);
  EXPECT_LE(std::abs(dot(b.v_true, b.u_leak)), 1e-6);
}

TEST(Dataset, LabelBalance) {
  SyntheticSpec spec;
  const auto w = generate_world(spec, 1);
  for (int n : {2, 3, 7, 100, 101, 2000}) {
    const auto ds = generate_dataset(w, n, static_cast<std::uint64_t>(n));
    const auto ones = static_cast<long>(ds.count_label(1));
    const auto zeros = static_cast<long>(ds.count_label(0));
    EXPECT_EQ(ones + zeros, n);
    EXPECT_LE(std::abs(ones - zeros), 1) << "n=" << n;
  }
}

TEST(Dataset, Metadata) {
  SyntheticSpec spec;
  spec.layer = 7;
  const auto ds = generate_dataset(generate_world(spec, 1), 10, 2);
  EXPECT_EQ(ds.layer(), 7);
  EXPECT_EQ(ds.dim, 64u);
  validate(ds);
}

TEST(Dataset, ResidualIsOrthogonalWithoutLeakage) {
  SyntheticSpec spec;
  const auto w = generate_world(spec, 3);
  const auto ds = generate_dataset(w, 200, 4);
  for (const auto& r : ds.records) {
    // x - a v_true lies in the orthogonal complement; only f32 storage error remains.
    const double a = coefficient(r, w.v_true);
    double norm2 = 0.0;
    for (float x : r.vector) norm2 += static_cast<double>(x) * x;
    EXPECT_LE(std::abs(a), std::sqrt(norm2));
  }
  // Class means of the coefficient sit at mu0 and mu1.
  double m0 = 0.0, m1 = 0.0;
  for (const auto& r : ds.records) (r.label ? m1 : m0) += coefficient(r, w.v_true);
  EXPECT_NEAR(m0 / 100.0, spec.mu0, 0.15);
  EXPECT_NEAR(m1 / 100.0, spec.mu1, 0.15);
}

TEST(Dataset, ThresholdOnPlantedCoefficientSeparates) {
  SyntheticSpec spec;
  spec.mu0 = -2.0;
  spec.mu1 = 2.0;
  spec.sigma_signal = 0.5;
  const auto w = generate_world(spec, 8);
  const auto ds = generate_dataset(w, 2000, 9);
  std::size_t correct = 0;
  for (const auto& r : ds.records) {
    const int pred = coefficient(r, w.v_true) > 0.0 ? 1 : 0;
    correct += pred == r.label ? 1 : 0;
  }
  EXPECT_GE(static_cast<double>(correct) / 2000.0, 0.99);
}

TEST(Dataset, LeakageFreeResidualHasNoSignal) {
  SyntheticSpec spec;
  const auto w = generate_world(spec, 10);
  const auto ds = generate_dataset(w, 2000, 11);
  EXPECT_LE(residual_leakage_audit(planted_direction(w), ds, TrainConfig{}), 0.55);
}

TEST(Dataset, EqualMeansCarryNoSignal) {
  SyntheticSpec spec;
  spec.mu0 = spec.mu1 = 0.0;
  const auto w = generate_world(spec, 12);
  // Chance-level AUC on 400 held-out samples has sd ~0.029, so +-0.05 would be
  // a 1.7 sigma band; 2000 held-out samples make it ~3.9 sigma.
  const auto ds = generate_dataset(w, 10000, 13);
  // A direction orthogonal to v_true leaves the full state, v_true included, to the probe.
  const double auc = residual_leakage_audit(Direction::from_vector(w.u_leak), ds, TrainConfig{});
  EXPECT_GE(auc, 0.45);
  EXPECT_LE(auc, 0.55);
}

TEST(Recovery, Examples) {
  SyntheticSpec spec;
  const auto w = generate_world(spec, 1);
  EXPECT_DOUBLE_EQ(direction_recovery(planted_direction(w), w), 1.0);
  std::vector<double> neg(w.v_true);
  for (auto& x : neg) x = -x;
  EXPECT_DOUBLE_EQ(direction_recovery(Direction::from_vector(neg), w), 1.0);
  EXPECT_NEAR(direction_recovery(Direction::from_vector(w.u_leak), w), 0.0, 1e-12);
  EXPECT_EQ(error_kind_of([&] { direction_recovery(Direction::from_vector({1.0, 0.0, 0.0}), w); }),
            ErrorKind::kDimensionMismatch);
}

TEST(HallucinationRate, UncoupledBaselineIsUniform) {
  SyntheticSpec spec;
  spec.kappa = 0.0;
  const auto w = generate_world(spec, spec.seed);
  const auto ds = generate_dataset(w, 2000, derive_seed(spec.seed, 100));
  const double rate = hallucination_rate(w, ds, w.head, nullptr, InterventionConfig{});
  EXPECT_NEAR(rate, 1.0 / spec.vocab_size, 0.03);
}

TEST(HallucinationRate, PlantedDirectionHalvesRate) {
  SyntheticSpec spec;
  const auto w = generate_world(spec, spec.seed);
  const auto ds = generate_dataset(w, 2000, derive_seed(spec.seed, 200));
  InterventionConfig cfg;
  cfg.mode = DecodeMode::kDirect;
  const auto dir = planted_direction(w);
  const double base = hallucination_rate(w, ds, w.head, nullptr, cfg);
  const double steered = hallucination_rate(w, ds, w.head, &dir, cfg);
  ASSERT_GT(base, 0.0);
  EXPECT_LE(steered, 0.5 * base) << "baseline " << base << " steered " << steered;
}

TEST(HallucinationRate, ZeroGammaIsBaseline) {
  SyntheticSpec spec;
  const auto w = generate_world(spec, 3);
  const auto ds = generate_dataset(w, 500, 4);
  Rng rng(5);
  std::vector<double> v(64);
  for (auto& x : v) x = rng.normal();
  const auto dir = Direction::from_vector(v);
  InterventionConfig cfg;
  cfg.gamma = 0.0;
  const double base = hallucination_rate(w, ds, w.head, nullptr, cfg);
  cfg.mode = DecodeMode::kDirect;
  EXPECT_EQ(hallucination_rate(w, ds, w.head, &dir, cfg), base);
  cfg.mode = DecodeMode::kContrastive;
  cfg.beta = 0.0;
  EXPECT_EQ(hallucination_rate(w, ds, w.head, &dir, cfg), base);
}

TEST(HallucinationRate, MonotoneInGammaForExactCoupling) {
  SyntheticSpec spec;
  spec.hallucination_row_noise = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto w = generate_world(spec, seed);
    const auto ds = generate_dataset(w, 1000, seed + 50);
    const auto dir = planted_direction(w);
    InterventionConfig cfg;
    cfg.mode = DecodeMode::kDirect;
    double prev = 1.0;
    for (double gamma : {0.0, 0.5, 1.0}) {
      cfg.gamma = gamma;
      const double rate = hallucination_rate(w, ds, w.head, &dir, cfg);
      EXPECT_LE(rate, prev) << "seed " << seed << " gamma " << gamma;
      prev = rate;
    }
  }
}

TEST(MeanDiff, RecoversPlantedDirection) {
  SyntheticSpec spec;
  const auto w = generate_world(spec, 14);
  const auto ds = generate_dataset(w, 2000, 15);
  EXPECT_GE(direction_recovery(mean_diff_oracle(ds), w), 0.9);
}

TEST(MeanDiff, TwoPointsAndDegenerateCases) {
  ActivationDataset ds;
  ds.dim = 2;
  ds.meta = {{"layer", "0"}};
  ds.records = {{0, 0, {1.0f, 0.0f}}, {1, 1, {0.0f, 1.0f}}};
  const auto v = mean_diff_oracle(ds).v;
  EXPECT_DOUBLE_EQ(v[0], 1.0 / std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(v[1], -1.0 / std::sqrt(2.0));

  ds.records = {{0, 0, {1.0f, 1.0f}}, {1, 1, {1.0f, 1.0f}}};
  EXPECT_EQ(error_kind_of([&] { mean_diff_oracle(ds); }), ErrorKind::kDegenerate);
  ds.records = {{0, 1, {1.0f, 1.0f}}};
  EXPECT_EQ(error_kind_of([&] { mean_diff_oracle(ds); }), ErrorKind::kSingleClass);
}

}  // namespace
}  // namespace aod
