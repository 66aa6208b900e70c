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

#ifndef AOD_INTERVENTION_HPP_
#define AOD_INTERVENTION_HPP_

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aod/activation_store.hpp"
#include "aod/disentangler.hpp"
#include "aod/grad_engine.hpp"

namespace aod {

// Affine readout from hidden states to vocabulary logits.
struct LanguageHead {
  Matrix<double> weights;  // V x d
  Vector<double> bias;     // V
  std::vector<std::string> vocab;
  // Token the synthetic harness treats as the hallucination, if any.
  std::optional<std::size_t> hallucination_token;

  std::size_t vocab_size() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(weights.cols()); }
};

void validate(const LanguageHead& head);

nlohmann::json to_json(const LanguageHead& head);
LanguageHead head_from_json(const nlohmann::json& j);

enum class DecodeMode { kNone, kDirect, kContrastive };

std::string to_string(DecodeMode mode);
DecodeMode parse_decode_mode(const std::string& text);

struct InterventionConfig {
  double gamma = 1.0;      // steering strength
  double beta = 0.5;       // contrastive weight
  double apc_alpha = 0.1;  // plausibility threshold, fraction of max p_plus
  DecodeMode mode = DecodeMode::kContrastive;
  bool calibrate_gamma = false;
};

nlohmann::json to_json(const InterventionConfig& cfg);

enum class Branch : std::uint8_t { kContrastive, kFallback };

struct LogitFrame {
  std::vector<double> logits;
  std::vector<Branch> branch;  // empty unless produced by apply_apc
};

struct SteeredStates {
  std::vector<double> plus;   // z - gamma (z.v) v
  std::vector<double> minus;  // z + gamma (z.v) v
};

SteeredStates steer_states(std::span<const double> z, const Direction& dir, double gamma);

// Single-pass intervention: the plus branch only.
std::vector<double> direct_intervene(std::span<const double> z, const Direction& dir, double gamma);

LogitFrame head_logits(const LanguageHead& head, std::span<const double> z);

// (1 + beta) * plus - beta * minus.
LogitFrame contrastive_logits(const LogitFrame& plus, const LogitFrame& minus, double beta);

// Tokens whose plus-branch probability reaches alpha * max keep the
// contrastive logit; the rest fall back to the plus-branch logit.
LogitFrame apply_apc(const LogitFrame& final_frame, const LogitFrame& plus, double alpha);

std::vector<double> softmax(std::span<const double> logits);

// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);

struct DecodeDiagnostics {
  std::size_t token = 0;
  double coefficient = 0.0;  // z.v
  std::vector<std::size_t> top_plus;
  std::vector<std::size_t> top_minus;
  std::size_t apc_admitted = 0;
};

inline constexpr std::size_t kDiagnosticTopK = 3;

// Greedy token choice. kNone ignores the direction entirely.
std::pair<std::size_t, DecodeDiagnostics> decode_step(const LanguageHead& head,
                                                      std::span<const double> z,
                                                      const Direction& dir,
                                                      const InterventionConfig& cfg);

std::size_t decode_baseline(const LanguageHead& head, std::span<const double> z);

struct GammaCalibration {
  double gamma = 0.0;
  double factor = 1.0;
  std::string formula;
};

// With calibration off returns gamma_nominal unchanged. With it on, scales by
// median(|x.v|) / mean(|x.v|) over the dataset.
GammaCalibration calibrate_gamma(const ActivationDataset& ds, const Direction& dir,
                                 double gamma_nominal, bool enabled);

}  // namespace aod

#endif  // AOD_INTERVENTION_HPP_
