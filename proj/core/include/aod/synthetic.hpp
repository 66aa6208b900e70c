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

#ifndef AOD_SYNTHETIC_HPP_
#define AOD_SYNTHETIC_HPP_

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <vector>

#include "aod/activation_store.hpp"
#include "aod/disentangler.hpp"
#include "aod/intervention.hpp"

namespace aod {

// Generator parameters for a world with a planted hallucination direction.
// Hallucinated samples (label 0) sit at coefficient mu0 along v_true and the
// hallucination token's head row points along +v_true, so subtracting the
// projection suppresses that token.
struct SyntheticSpec {
  int d = 64;
  int n = 2000;
  double mu0 = 2.0;  // label 0 (hallucinated)
  double mu1 = -2.0;  // label 1 (consistent)
  double sigma_signal = 0.5;
  double sigma_res = 1.0;
  double leakage = 0.0;  // label shift along u_leak
  int vocab_size = 16;
  double kappa = 3.0;  // hallucination row = kappa * v_true + row noise
  // Every head row is N(0, head_scale^2 / d) per entry; the hallucination row
  // gets the same draw scaled by hallucination_row_noise.
  double head_scale = 1.0;
  double hallucination_row_noise = 1.0;
  int layer = 0;
  std::uint64_t seed = 42;
};

void validate(const SyntheticSpec& spec);
nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec spec_from_json(const nlohmann::json& j);

struct SyntheticWorld {
  SyntheticSpec spec;
  std::uint64_t seed = 0;
  std::vector<double> v_true;
  std::vector<double> u_leak;
  LanguageHead head;
  std::size_t hallucination_token = 0;
};

SyntheticWorld generate_world(const SyntheticSpec& spec, std::uint64_t seed);

// Same v_true and head as `base`, fresh u_leak and residual noise scale.
SyntheticWorld derive_world(const SyntheticWorld& base, double sigma_res, std::uint64_t seed);

ActivationDataset generate_dataset(const SyntheticWorld& world, int n, std::uint64_t seed);

Direction planted_direction(const SyntheticWorld& world);

// |cos(v_learned, v_true)|.
double direction_recovery(const Direction& learned, const SyntheticWorld& world);

// Fraction of records decoded to the hallucination token. Without a direction
// the plain argmax of the head is used.
double hallucination_rate(const SyntheticWorld& world, const ActivationDataset& ds,
                          const LanguageHead& head, const Direction* dir,
                          const InterventionConfig& cfg);

// normalize(mean(x | y=0) - mean(x | y=1)).
Direction mean_diff_oracle(const ActivationDataset& ds);

nlohmann::json to_json(const SyntheticWorld& world);
SyntheticWorld world_from_json(const nlohmann::json& j);
void save_world(const SyntheticWorld& world, const std::filesystem::path& path);
SyntheticWorld load_world(const std::filesystem::path& path);

}  // namespace aod

#endif  // AOD_SYNTHETIC_HPP_
