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

#include "aod/disentangler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "aod/error.hpp"
#include "aod/rng.hpp"

namespace aod {
namespace {

// Seed streams derived from TrainConfig::seed.
enum SeedStream : std::uint64_t {
  kDirectionInit = 1,
  kClassifierInit = 2,
  kAdversaryInit = 3,
  kShuffle = 4,
  kAuditSplit = 10,
  kAuditInit = 11,
  kAuditShuffle = 12,
};

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

Matrix<float> to_matrix(const ActivationDataset& ds, Preprocess preprocess) {
  Matrix<float> x(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(ds.dim));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& rec = ds.records[i];
    std::copy(rec.vector.begin(), rec.vector.end(), x.row(static_cast<Eigen::Index>(i)).data());
  }
  if (preprocess == Preprocess::kUnitNorm) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double n = x.row(i).template cast<double>().norm();
      if (n > 0.0) x.row(i) /= static_cast<float>(n);
    }
  }
  return x;
}

std::vector<std::uint8_t> labels_of(const ActivationDataset& ds) {
  std::vector<std::uint8_t> y(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) y[i] = ds.records[i].label;
  return y;
}

void require_both_labels(const ActivationDataset& ds) {
  if (ds.count_label(0) == 0 || ds.count_label(1) == 0) {
    fail(ErrorKind::kSingleClass, "dataset needs both labels present");
  }
}

Matrix<float> gather_rows(const Matrix<float>& x, std::span<const std::size_t> idx) {
  Matrix<float> out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

// Unit-norm projection of v. The norm is accumulated in double so the
// post-projection drift stays well below 1e-6 even for wide vectors.
double project_to_sphere(Vector<float>& v) {
  const double n = v.template cast<double>().norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    fail(ErrorKind::kDegenerate, "direction collapsed to a zero or non-finite vector");
  }
  v = (v.template cast<double>() / n).template cast<float>();
  return n;
}

Vector<double> probabilities(const ProbeMLP<float>& net, const Matrix<float>& x) {
  constexpr Eigen::Index kChunk = 1024;
  Vector<double> out(x.rows());
  for (Eigen::Index start = 0; start < x.rows(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, x.rows() - start);
    const Matrix<float> block = x.middleRows(start, len);
    const auto cache = probe_forward(net, block);
    out.segment(start, len) = cache.probs.template cast<double>();
  }
  return out;
}

double accuracy_at_half(const Vector<double>& probs, std::span<const std::uint8_t> labels) {
  std::size_t hits = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    const std::uint8_t pred = probs(i) >= 0.5 ? 1 : 0;
    hits += pred == labels[static_cast<std::size_t>(i)] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(probs.size());
}

// Projections and residuals of every row of x onto unit v.
std::pair<Matrix<float>, Matrix<float>> split_components(const Matrix<float>& x,
                                                         const Vector<float>& v) {
  const Vector<float> coef = x * v;
  Matrix<float> proj = coef * v.transpose();
  Matrix<float> res = x - proj;
  return {std::move(proj), std::move(res)};
}

}  // namespace

Direction Direction::from_vector(std::vector<double> raw, int layer, Provenance provenance) {
  const double n = norm2(raw);
  if (!(n > 0.0) || !std::isfinite(n)) {
    fail(ErrorKind::kDegenerate, "cannot normalize a zero or non-finite direction");
  }
  for (double& x : raw) x /= n;
  return Direction{std::move(raw), layer, std::move(provenance)};
}

void validate(const Direction& dir) {
  require(!dir.v.empty(), ErrorKind::kBadSchema, "direction has no components");
  for (double x : dir.v) require(std::isfinite(x), ErrorKind::kNonFinite, "non-finite direction");
  require(std::abs(norm2(dir.v) - 1.0) <= kUnitTolerance, ErrorKind::kNotUnitDirection,
          "not a unit direction");
}

Decomposition decompose(std::span<const double> x, const Direction& dir) {
  if (x.size() != dir.dim()) {
    fail(ErrorKind::kDimensionMismatch, "dimension mismatch: vector has " +
                                            std::to_string(x.size()) + " components, direction " +
                                            std::to_string(dir.dim()));
  }
  Decomposition out;
  out.coefficient = std::inner_product(x.begin(), x.end(), dir.v.begin(), 0.0);
  out.h_hallu.resize(x.size());
  out.h_res.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.h_hallu[i] = out.coefficient * dir.v[i];
    out.h_res[i] = x[i] - out.h_hallu[i];
  }
  return out;
}

Decomposition decompose(std::span<const float> x, const Direction& dir) {
  const std::vector<double> wide(x.begin(), x.end());
  return decompose(std::span<const double>(wide), dir);
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {
      {"lambda", cfg.lambda},
      {"lr", cfg.lr},
      {"batch_size", cfg.batch_size},
      {"epochs", cfg.epochs},
      {"hidden_width", cfg.hidden_width},
      {"val_ratio", cfg.val_ratio},
      {"seed", cfg.seed},
      {"preprocess", cfg.preprocess == Preprocess::kUnitNorm ? "unit-norm" : "none"},
      {"activation", "relu"},
      {"adamw", {{"beta1", 0.9}, {"beta2", 0.999}, {"eps", 1e-8}, {"weight_decay", 0.01},
                 {"direction_weight_decay", 0.0}}},
  };
}

std::string config_digest(const TrainConfig& cfg) { return hex64(fnv1a(to_json(cfg).dump())); }

nlohmann::json to_json(const TrainingReport& report) {
  nlohmann::json epochs = nlohmann::json::array();
  for (std::size_t e = 0; e < report.epochs.size(); ++e) {
    epochs.push_back({{"epoch", e + 1}, {"l_cls", report.epochs[e].cls},
                      {"l_adv", report.epochs[e].adv}});
  }
  double max_drift = 0.0;
  for (double d : report.norm_drift) max_drift = std::max(max_drift, d);
  return {
      {"epochs", epochs},
      {"val_cls_accuracy", report.val_cls_accuracy},
      {"val_adv_accuracy", report.val_adv_accuracy},
      {"train_size", report.train_size},
      {"val_size", report.val_size},
      {"steps", report.norm_drift.size()},
      {"max_norm_drift", max_drift},
      {"pre_projection_norm", report.pre_projection_norm},
      {"norm_drift", report.norm_drift},
  };
}

template <typename T>
CompositeLoss<T> composite_loss(const Vector<T>& v, const ProbeMLP<T>& classifier,
                                const ProbeMLP<T>& adversary, const Matrix<T>& x,
                                std::span<const std::uint8_t> labels, double lambda,
                                bool adversary_path) {
  require(x.rows() > 0, ErrorKind::kEmpty, "composite loss needs a non-empty batch");
  require(static_cast<Eigen::Index>(labels.size()) == x.rows(), ErrorKind::kShapeMismatch,
          "label count does not match batch");
  if (x.cols() != v.size() || classifier.input_width() != v.size() ||
      adversary.input_width() != v.size()) {
    fail(ErrorKind::kDimensionMismatch, "dimension mismatch between direction, probes and batch");
  }

  const Vector<T> coef = x * v;
  const Matrix<T> proj = coef * v.transpose();
  const Matrix<T> res = x - proj;

  const auto cls_cache = probe_forward(classifier, proj);
  const auto adv_cache = probe_forward(adversary, res);

  CompositeLoss<T> out;
  out.cls = mean_bce(cls_cache, labels);
  out.adv = mean_bce(adv_cache, labels);
  out.grad_classifier = probe_backward(classifier, cls_cache, labels);
  out.grad_adversary = probe_backward(adversary, adv_cache, labels);

  // d/dv of (x.v) v applied to an upstream row gradient g: (g.v) x + (x.v) g.
  const Matrix<T>& g_proj = out.grad_classifier.input;
  out.grad_v = x.transpose() * (g_proj * v) + g_proj.transpose() * coef;

  if (adversary_path) {
    // h_res = x - (x.v) v, so its pullback is the negated projection pullback.
    const Matrix<T>& g_res = out.grad_adversary.input;
    const Vector<T> adv_grad_v = -(x.transpose() * (g_res * v) + g_res.transpose() * coef);
    out.grad_v += grl_transform(adv_grad_v, lambda);
  }
  return out;
}

template CompositeLoss<float> composite_loss(const Vector<float>&, const ProbeMLP<float>&,
                                             const ProbeMLP<float>&, const Matrix<float>&,
                                             std::span<const std::uint8_t>, double, bool);
template CompositeLoss<double> composite_loss(const Vector<double>&, const ProbeMLP<double>&,
                                              const ProbeMLP<double>&, const Matrix<double>&,
                                              std::span<const std::uint8_t>, double, bool);

std::pair<AodModel, TrainingReport> train_direction(const ActivationDataset& train,
                                                    const TrainConfig& cfg,
                                                    const TrainHooks& hooks) {
  require(train.dim >= 2, ErrorKind::kInvalidArgument, "training needs d >= 2");
  require(cfg.lambda >= 0.0, ErrorKind::kInvalidArgument, "lambda must be non-negative");
  require(cfg.batch_size > 0 && cfg.epochs > 0 && cfg.hidden_width > 0 && cfg.lr > 0.0,
          ErrorKind::kInvalidArgument, "batch size, epochs, hidden width and lr must be positive");
  require_both_labels(train);

  const SplitPair split = split_dataset(train, cfg.val_ratio, cfg.seed);
  require_both_labels(split.train);

  const int d = static_cast<int>(train.dim);
  const Matrix<float> x_train = to_matrix(split.train, cfg.preprocess);
  const std::vector<std::uint8_t> y_train = labels_of(split.train);

  Vector<float> v(d);
  {
    Rng rng(derive_seed(cfg.seed, kDirectionInit));
    for (int i = 0; i < d; ++i) v(i) = static_cast<float>(rng.normal());
    project_to_sphere(v);
  }
  auto classifier = ProbeMLP<float>::init(d, cfg.hidden_width, derive_seed(cfg.seed, kClassifierInit));
  auto adversary = ProbeMLP<float>::init(d, cfg.hidden_width, derive_seed(cfg.seed, kAdversaryInit));

  AdamWHyper probe_hyper;
  probe_hyper.lr = cfg.lr;
  AdamWHyper direction_hyper = probe_hyper;
  direction_hyper.weight_decay = 0.0;
  AdamWState<float> v_state(direction_hyper);
  AdamWState<float> cls_state(probe_hyper);
  AdamWState<float> adv_state(probe_hyper);

  TrainingReport report;
  report.train_size = split.train.size();
  report.val_size = split.val.size();

  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(cfg.seed, kShuffle));
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double cls_sum = 0.0, adv_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t len = std::min(batch, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      const Matrix<float> xb = gather_rows(x_train, idx);
      std::vector<std::uint8_t> yb(len);
      for (std::size_t i = 0; i < len; ++i) yb[i] = y_train[idx[i]];

      const auto loss = composite_loss<float>(v, classifier, adversary, xb, yb, cfg.lambda,
                                              hooks.adversary_path_into_direction);
      cls_sum += loss.cls * static_cast<double>(len);
      adv_sum += loss.adv * static_cast<double>(len);
      seen += len;

      adamw_step(v, loss.grad_v, v_state);
      adamw_step(classifier, loss.grad_classifier, cls_state);
      adamw_step(adversary, loss.grad_adversary, adv_state);

      report.pre_projection_norm.push_back(project_to_sphere(v));
      report.norm_drift.push_back(std::abs(v.template cast<double>().norm() - 1.0));
      if (hooks.on_step) hooks.on_step(step, std::span<const float>(v.data(), v.size()));
      ++step;
    }
    report.epochs.push_back({cls_sum / static_cast<double>(seen),
                             adv_sum / static_cast<double>(seen)});
  }

  Provenance provenance;
  provenance.method = "aod";
  provenance.config_digest = config_digest(cfg);
  const auto source = train.meta.find("source");
  provenance.source = source != train.meta.end() ? source->second : "";
  provenance.seed = cfg.seed;

  std::vector<double> wide(v.data(), v.data() + v.size());
  AodModel model{Direction::from_vector(std::move(wide), train.layer(), std::move(provenance)),
                 std::move(classifier), std::move(adversary)};

  const Matrix<float> x_val = to_matrix(split.val, cfg.preprocess);
  const std::vector<std::uint8_t> y_val = labels_of(split.val);
  const auto [proj, res] = split_components(x_val, v);
  report.val_cls_accuracy = accuracy_at_half(probabilities(model.classifier, proj), y_val);
  report.val_adv_accuracy = accuracy_at_half(probabilities(model.adversary, res), y_val);
  return {std::move(model), std::move(report)};
}

ProbeAccuracy evaluate_probe(const AodModel& model, const ActivationDataset& ds) {
  require(!ds.empty(), ErrorKind::kEmpty, "evaluation dataset is empty");
  if (ds.dim != model.direction.dim()) {
    fail(ErrorKind::kDimensionMismatch, "dimension mismatch between model and dataset");
  }
  const Matrix<float> x = to_matrix(ds, Preprocess::kNone);
  const Vector<float> v =
      Eigen::Map<const Vector<double>>(model.direction.v.data(),
                                       static_cast<Eigen::Index>(model.direction.dim()))
          .cast<float>();
  const auto [proj, res] = split_components(x, v);
  const auto y = labels_of(ds);
  return {accuracy_at_half(probabilities(model.classifier, proj), y),
          accuracy_at_half(probabilities(model.adversary, res), y)};
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  require(scores.size() == labels.size(), ErrorKind::kShapeMismatch,
          "score and label counts differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double positive_rank_sum = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] != 0) {
        positive_rank_sum += avg_rank;
        ++positives;
      }
    }
    i = j;
  }
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) {
    fail(ErrorKind::kSingleClass, "ROC-AUC needs both labels present");
  }
  const double np = static_cast<double>(positives);
  return (positive_rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(negatives));
}

double residual_leakage_audit(const Direction& dir, const ActivationDataset& ds,
                              const TrainConfig& cfg) {
  require_both_labels(ds);
  if (ds.dim != dir.dim()) {
    fail(ErrorKind::kDimensionMismatch, "dimension mismatch between direction and dataset");
  }
  const SplitPair split = split_dataset(ds, cfg.val_ratio, derive_seed(cfg.seed, kAuditSplit));
  require_both_labels(split.val);

  const Vector<float> v =
      Eigen::Map<const Vector<double>>(dir.v.data(), static_cast<Eigen::Index>(dir.dim()))
          .cast<float>();
  const Matrix<float> x_train = split_components(to_matrix(split.train, Preprocess::kNone), v).second;
  const Matrix<float> x_val = split_components(to_matrix(split.val, Preprocess::kNone), v).second;
  const auto y_train = labels_of(split.train);
  const auto y_val = labels_of(split.val);

  const int d = static_cast<int>(ds.dim);
  auto probe = ProbeMLP<float>::init(d, cfg.hidden_width, derive_seed(cfg.seed, kAuditInit));
  AdamWHyper hyper;
  hyper.lr = cfg.lr;
  AdamWState<float> state(hyper);

  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, kAuditShuffle));
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t len = std::min(batch, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      const Matrix<float> xb = gather_rows(x_train, idx);
      std::vector<std::uint8_t> yb(len);
      for (std::size_t i = 0; i < len; ++i) yb[i] = y_train[idx[i]];
      const auto cache = probe_forward(probe, xb);
      const auto grads = probe_backward(probe, cache, std::span<const std::uint8_t>(yb));
      adamw_step(probe, grads, state);
    }
  }

  const Vector<double> scores = probabilities(probe, x_val);
  return roc_auc(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())),
                 y_val);
}

nlohmann::json to_json(const Direction& dir) {
  return {
      {"format", "aod-direction"},
      {"version", 1},
      {"dim", dir.dim()},
      {"layer", dir.layer},
      {"v", dir.v},
      {"provenance",
       {{"method", dir.provenance.method},
        {"config_digest", dir.provenance.config_digest},
        {"source", dir.provenance.source},
        {"seed", dir.provenance.seed}}},
  };
}

Direction direction_from_json(const nlohmann::json& j) {
  auto schema = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::kBadSchema, "bad direction schema: " + what);
  };
  schema(j.is_object(), "not a JSON object");
  schema(j.value("format", "") == "aod-direction", "format must be \"aod-direction\"");
  schema(j.contains("version") && j["version"].is_number_integer() && j["version"] == 1,
         "version must be 1");
  schema(j.contains("dim") && j["dim"].is_number_unsigned(), "dim must be a positive integer");
  schema(j.contains("layer") && j["layer"].is_number_integer(), "layer must be an integer");
  schema(j.contains("v") && j["v"].is_array(), "v must be an array");

  Direction dir;
  dir.layer = j["layer"].get<int>();
  for (const auto& x : j["v"]) {
    schema(x.is_number(), "v entries must be numbers");
    dir.v.push_back(x.get<double>());
  }
  schema(dir.v.size() == j["dim"].get<std::size_t>() && !dir.v.empty(),
         "dim does not match length of v");
  for (double x : dir.v) require(std::isfinite(x), ErrorKind::kNonFinite, "non-finite direction");

  const double n = norm2(dir.v);
  if (std::abs(n - 1.0) > kLoadUnitTolerance) {
    fail(ErrorKind::kNotUnitDirection, "not a unit direction (norm " + std::to_string(n) + ")");
  }
  for (double& x : dir.v) x /= n;

  if (j.contains("provenance") && j["provenance"].is_object()) {
    const auto& p = j["provenance"];
    dir.provenance.method = p.value("method", "");
    dir.provenance.config_digest = p.value("config_digest", "");
    dir.provenance.source = p.value("source", "");
    dir.provenance.seed = p.value("seed", std::uint64_t{0});
  }
  return dir;
}

void save_direction(const Direction& dir, const std::filesystem::path& path) {
  validate(dir);
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out << to_json(dir).dump(2) << '\n';
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

Direction load_direction(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) fail(ErrorKind::kBadSchema, "bad direction schema: invalid JSON");
  return direction_from_json(j);
}

}  // namespace aod
