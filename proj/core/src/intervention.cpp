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

#include "aod/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "aod/error.hpp"

namespace aod {
namespace {

void require_dim(std::size_t got, std::size_t want) {
  if (got != want) {
    fail(ErrorKind::kDimensionMismatch, "dimension mismatch: got " + std::to_string(got) +
                                            ", expected " + std::to_string(want));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::vector<std::size_t> top_k(std::span<const double> logits, std::size_t k) {
  std::vector<std::size_t> idx(logits.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

}  // namespace

void validate(const LanguageHead& head) {
  require(head.weights.rows() >= 2, ErrorKind::kInvalidArgument, "language head needs V >= 2");
  require(head.weights.cols() >= 1, ErrorKind::kInvalidArgument, "language head needs d >= 1");
  require(head.bias.size() == head.weights.rows(), ErrorKind::kShapeMismatch,
          "head bias length differs from vocabulary size");
  require(head.vocab.size() == head.vocab_size(), ErrorKind::kShapeMismatch,
          "vocab list length differs from vocabulary size");
  require(head.weights.allFinite() && head.bias.allFinite(), ErrorKind::kNonFinite,
          "non-finite head parameters");
  if (head.hallucination_token) {
    require(*head.hallucination_token < head.vocab_size(), ErrorKind::kInvalidArgument,
            "hallucination token outside vocabulary");
  }
}

nlohmann::json to_json(const LanguageHead& head) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < head.weights.rows(); ++r) {
    rows.push_back(std::vector<double>(head.weights.row(r).data(),
                                       head.weights.row(r).data() + head.weights.cols()));
  }
  nlohmann::json j = {
      {"format", "aod-head"},
      {"version", 1},
      {"vocab", head.vocab},
      {"dim", head.dim()},
      {"weights", rows},
      {"bias", std::vector<double>(head.bias.data(), head.bias.data() + head.bias.size())},
  };
  j["hallucination_token"] =
      head.hallucination_token ? nlohmann::json(*head.hallucination_token) : nlohmann::json();
  return j;
}

LanguageHead head_from_json(const nlohmann::json& j) {
  auto schema = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::kBadSchema, "bad head schema: " + what);
  };
  schema(j.is_object() && j.value("format", "") == "aod-head", "format must be \"aod-head\"");
  schema(j.contains("weights") && j["weights"].is_array() && !j["weights"].empty(),
         "weights must be a non-empty array of rows");
  schema(j.contains("bias") && j["bias"].is_array(), "bias must be an array");
  schema(j.contains("vocab") && j["vocab"].is_array(), "vocab must be an array");

  const auto& rows = j["weights"];
  const auto vocab = static_cast<Eigen::Index>(rows.size());
  schema(rows[0].is_array() && !rows[0].empty(), "weights rows must be arrays");
  const auto dim = static_cast<Eigen::Index>(rows[0].size());
  LanguageHead head;
  head.weights.resize(vocab, dim);
  for (Eigen::Index r = 0; r < vocab; ++r) {
    schema(rows[r].is_array() && static_cast<Eigen::Index>(rows[r].size()) == dim,
           "ragged weights rows");
    for (Eigen::Index c = 0; c < dim; ++c) head.weights(r, c) = rows[r][c].get<double>();
  }
  const auto bias = j["bias"].get<std::vector<double>>();
  head.bias = Eigen::Map<const Vector<double>>(bias.data(), static_cast<Eigen::Index>(bias.size()));
  head.vocab = j["vocab"].get<std::vector<std::string>>();
  if (j.contains("hallucination_token") && !j["hallucination_token"].is_null()) {
    head.hallucination_token = j["hallucination_token"].get<std::size_t>();
  }
  validate(head);
  return head;
}

std::string to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::kNone: return "none";
    case DecodeMode::kDirect: return "direct";
    case DecodeMode::kContrastive: return "contrastive";
  }
  return "unknown";
}

DecodeMode parse_decode_mode(const std::string& text) {
  if (text == "none") return DecodeMode::kNone;
  if (text == "direct") return DecodeMode::kDirect;
  if (text == "contrastive") return DecodeMode::kContrastive;
  fail(ErrorKind::kInvalidArgument, "unknown decode mode \"" + text + "\"");
}

nlohmann::json to_json(const InterventionConfig& cfg) {
  return {{"gamma", cfg.gamma},
          {"beta", cfg.beta},
          {"apc_alpha", cfg.apc_alpha},
          {"mode", to_string(cfg.mode)},
          {"calibrate_gamma", cfg.calibrate_gamma}};
}

SteeredStates steer_states(std::span<const double> z, const Direction& dir, double gamma) {
  require_dim(z.size(), dir.dim());
  require(gamma >= 0.0, ErrorKind::kInvalidArgument, "gamma must be non-negative");
  const double shift = gamma * dot(z, dir.v);
  SteeredStates out{std::vector<double>(z.size()), std::vector<double>(z.size())};
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double delta = shift * dir.v[i];
    out.plus[i] = z[i] - delta;
    out.minus[i] = z[i] + delta;
  }
  return out;
}

std::vector<double> direct_intervene(std::span<const double> z, const Direction& dir,
                                     double gamma) {
  return steer_states(z, dir, gamma).plus;
}

LogitFrame head_logits(const LanguageHead& head, std::span<const double> z) {
  require_dim(z.size(), head.dim());
  const Eigen::Map<const Vector<double>> zv(z.data(), static_cast<Eigen::Index>(z.size()));
  const Vector<double> logits = head.weights * zv + head.bias;
  LogitFrame frame;
  frame.logits.assign(logits.data(), logits.data() + logits.size());
  return frame;
}

LogitFrame contrastive_logits(const LogitFrame& plus, const LogitFrame& minus, double beta) {
  if (plus.logits.size() != minus.logits.size()) {
    fail(ErrorKind::kShapeMismatch, "vocab-size mismatch between contrastive branches");
  }
  require(beta >= 0.0, ErrorKind::kInvalidArgument, "beta must be non-negative");
  LogitFrame out;
  out.logits.resize(plus.logits.size());
  for (std::size_t i = 0; i < out.logits.size(); ++i) {
    // (1 + beta) plus - beta minus, arranged so beta = 0 and plus = minus are exact.
    out.logits[i] = plus.logits[i] + beta * (plus.logits[i] - minus.logits[i]);
  }
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  require(!logits.empty(), ErrorKind::kEmpty, "softmax of an empty vector");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    sum += p[i];
  }
  for (double& x : p) x /= sum;
  return p;
}

LogitFrame apply_apc(const LogitFrame& final_frame, const LogitFrame& plus, double alpha) {
  if (final_frame.logits.size() != plus.logits.size()) {
    fail(ErrorKind::kShapeMismatch, "vocab-size mismatch between final and plus logits");
  }
  require(alpha >= 0.0 && alpha <= 1.0, ErrorKind::kInvalidArgument,
          "APC alpha must lie in [0, 1]");
  const auto p = softmax(plus.logits);
  const double tau = alpha * *std::max_element(p.begin(), p.end());
  LogitFrame out;
  out.logits.resize(p.size());
  out.branch.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool admitted = p[i] >= tau;
    out.logits[i] = admitted ? final_frame.logits[i] : plus.logits[i];
    out.branch[i] = admitted ? Branch::kContrastive : Branch::kFallback;
  }
  return out;
}

std::size_t argmax(std::span<const double> values) {
  require(!values.empty(), ErrorKind::kEmpty, "argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) -
                                  values.begin());
}

std::size_t decode_baseline(const LanguageHead& head, std::span<const double> z) {
  return argmax(head_logits(head, z).logits);
}

std::pair<std::size_t, DecodeDiagnostics> decode_step(const LanguageHead& head,
                                                      std::span<const double> z,
                                                      const Direction& dir,
                                                      const InterventionConfig& cfg) {
  DecodeDiagnostics diag;
  if (cfg.mode == DecodeMode::kNone) {
    const auto frame = head_logits(head, z);
    diag.token = argmax(frame.logits);
    diag.top_plus = top_k(frame.logits, kDiagnosticTopK);
    diag.apc_admitted = frame.logits.size();
    return {diag.token, std::move(diag)};
  }

  require_dim(z.size(), dir.dim());
  diag.coefficient = dot(z, dir.v);
  const auto states = steer_states(z, dir, cfg.gamma);
  const auto plus = head_logits(head, states.plus);
  diag.top_plus = top_k(plus.logits, kDiagnosticTopK);

  if (cfg.mode == DecodeMode::kDirect) {
    diag.token = argmax(plus.logits);
    diag.apc_admitted = plus.logits.size();
    return {diag.token, std::move(diag)};
  }

  const auto minus = head_logits(head, states.minus);
  diag.top_minus = top_k(minus.logits, kDiagnosticTopK);
  const auto mixed = apply_apc(contrastive_logits(plus, minus, cfg.beta), plus, cfg.apc_alpha);
  diag.apc_admitted = static_cast<std::size_t>(
      std::count(mixed.branch.begin(), mixed.branch.end(), Branch::kContrastive));
  diag.token = argmax(mixed.logits);
  return {diag.token, std::move(diag)};
}

GammaCalibration calibrate_gamma(const ActivationDataset& ds, const Direction& dir,
                                 double gamma_nominal, bool enabled) {
  GammaCalibration out{gamma_nominal, 1.0, "none"};
  if (!enabled) return out;
  require(!ds.empty(), ErrorKind::kEmpty, "gamma calibration needs a non-empty dataset");
  require_dim(ds.dim, dir.dim());

  std::vector<double> coef;
  coef.reserve(ds.size());
  for (const auto& r : ds.records) {
    double c = 0.0;
    for (std::size_t i = 0; i < r.vector.size(); ++i) c += static_cast<double>(r.vector[i]) * dir.v[i];
    coef.push_back(std::abs(c));
  }
  const double mean = std::accumulate(coef.begin(), coef.end(), 0.0) / static_cast<double>(coef.size());
  if (!(mean > 0.0)) {
    fail(ErrorKind::kDegenerate, "all projection coefficients are zero; direction is degenerate for this data");
  }
  std::sort(coef.begin(), coef.end());
  const std::size_t n = coef.size();
  const double median = n % 2 == 1 ? coef[n / 2] : 0.5 * (coef[n / 2 - 1] + coef[n / 2]);
  out.factor = median / mean;
  out.gamma = gamma_nominal * out.factor;
  out.formula = "median(|x.v|) / mean(|x.v|)";
  return out;
}

}  // namespace aod
