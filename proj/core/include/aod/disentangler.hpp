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

#ifndef AOD_DISENTANGLER_HPP_
#define AOD_DISENTANGLER_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <nlohmann/json.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aod/activation_store.hpp"
#include "aod/grad_engine.hpp"

namespace aod {

struct Provenance {
  std::string method;         // "aod", "mean-diff", "planted", ...
  std::string config_digest;  // hex digest of the resolved training config
  std::string source;         // dataset name the direction was fitted on
  std::uint64_t seed = 0;

  bool operator==(const Provenance&) const = default;
};

// Unit-norm direction in hidden-state space, tied to the layer it was
// learned at.
struct Direction {
  std::vector<double> v;
  int layer = 0;
  Provenance provenance;

  std::size_t dim() const { return v.size(); }

  // Normalizes `raw`; throws kDegenerate for a zero or non-finite vector.
  static Direction from_vector(std::vector<double> raw, int layer = 0, Provenance provenance = {});
};

inline constexpr double kUnitTolerance = 1e-6;
inline constexpr double kLoadUnitTolerance = 1e-4;

void validate(const Direction& dir);

struct Decomposition {
  std::vector<double> h_hallu;
  std::vector<double> h_res;
  double coefficient = 0.0;
};

// h_hallu = (x.v) v, h_res = x - (x.v) v.
Decomposition decompose(std::span<const double> x, const Direction& dir);
Decomposition decompose(std::span<const float> x, const Direction& dir);

enum class Preprocess { kNone, kUnitNorm };

struct TrainConfig {
  double lambda = 1.0;
  double lr = 1e-3;
  int batch_size = 256;
  int epochs = 5;
  int hidden_width = 512;
  double val_ratio = 0.2;
  std::uint64_t seed = 42;
  Preprocess preprocess = Preprocess::kNone;
};

nlohmann::json to_json(const TrainConfig& cfg);
std::string config_digest(const TrainConfig& cfg);

struct AodModel {
  Direction direction;
  ProbeMLP<float> classifier;
  ProbeMLP<float> adversary;
};

struct EpochLosses {
  double cls = 0.0;
  double adv = 0.0;
  bool operator==(const EpochLosses&) const = default;
};

struct TrainingReport {
  std::vector<EpochLosses> epochs;
  double val_cls_accuracy = 0.0;
  double val_adv_accuracy = 0.0;
  // Per optimizer step: norm of v straight after AdamW, and |norm - 1| after
  // the unit-norm projection.
  std::vector<double> pre_projection_norm;
  std::vector<double> norm_drift;
  std::size_t train_size = 0;
  std::size_t val_size = 0;

  bool operator==(const TrainingReport&) const = default;
};

nlohmann::json to_json(const TrainingReport& report);

template <typename T>
struct CompositeLoss {
  double cls = 0.0;  // mean BCE of the classifier on projections
  double adv = 0.0;  // mean BCE of the adversary on residuals
  Vector<T> grad_v;
  ParamGrads<T> grad_classifier;
  ParamGrads<T> grad_adversary;
};

// One forward/backward pass of the GRL composite objective on a batch (rows
// of x). The classifier and adversary gradients descend their own BCE; v
// receives dL_cls/dv plus the GRL-reversed adversary gradient, which is the
// gradient of L_cls - lambda * L_adv with the probes held fixed. With
// adversary_path == false the adversary term never reaches v.
template <typename T>
CompositeLoss<T> composite_loss(const Vector<T>& v, const ProbeMLP<T>& classifier,
                                const ProbeMLP<T>& adversary, const Matrix<T>& x,
                                std::span<const std::uint8_t> labels, double lambda,
                                bool adversary_path = true);

struct TrainHooks {
  bool adversary_path_into_direction = true;
  // Called after every unit-norm projection with the step index and v.
  std::function<void(std::size_t, std::span<const float>)> on_step;
};

// Seeded minibatch AdamW training of (v, classifier, adversary). v never
// receives weight decay and is projected back to the unit sphere after each
// step. The dataset is split internally with cfg.val_ratio for the report.
std::pair<AodModel, TrainingReport> train_direction(const ActivationDataset& train,
                                                    const TrainConfig& cfg,
                                                    const TrainHooks& hooks = {});

struct ProbeAccuracy {
  double classifier = 0.0;
  double adversary = 0.0;
};

// Decision threshold 0.5; p == 0.5 predicts label 1.
ProbeAccuracy evaluate_probe(const AodModel& model, const ActivationDataset& ds);

// Mann-Whitney ROC-AUC with label 1 as the positive class; ties count 1/2.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Trains a fresh probe on {h_res(x), y} and reports held-out ROC-AUC.
double residual_leakage_audit(const Direction& dir, const ActivationDataset& ds,
                              const TrainConfig& cfg);

nlohmann::json to_json(const Direction& dir);
Direction direction_from_json(const nlohmann::json& j);
void save_direction(const Direction& dir, const std::filesystem::path& path);
Direction load_direction(const std::filesystem::path& path);

}  // namespace aod

#endif  // AOD_DISENTANGLER_HPP_
