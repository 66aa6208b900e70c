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

#ifndef AOD_ANALYSIS_HPP_
#define AOD_ANALYSIS_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "aod/activation_store.hpp"
#include "aod/disentangler.hpp"
#include "aod/intervention.hpp"

namespace aod {

// Mean and sample standard deviation of max |component| over unit-normalized
// vectors, for one label group at one layer.
struct LayerStats {
  int layer = 0;
  int group = 0;  // label value
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
};

struct LayerStatsResult {
  std::vector<LayerStats> stats;  // ordered by (layer, group)
  std::size_t skipped_zero_vectors = 0;
};

LayerStatsResult layerwise_max_stats(const std::map<int, ActivationDataset>& by_layer);

struct TransferCell {
  std::string source;
  std::string target;
  double baseline = 0.0;
  double intervened = 0.0;
  double delta = 0.0;
  bool valid = true;
};

struct TransferTarget {
  ActivationDataset data;
  LanguageHead head;
};

// Accuracy-like score of a target under an optional direction.
using TransferMetric = std::function<double(const TransferTarget&, const Direction*,
                                            const InterventionConfig&)>;

// 1 - (fraction of records decoded to the head's hallucination token).
double factual_rate(const TransferTarget& target, const Direction* dir,
                    const InterventionConfig& cfg);

// Full source x target matrix, rows in natural order of source name. The
// baseline score is computed once per target. Cells whose dimensions do not
// line up are marked invalid and the run continues.
std::vector<TransferCell> transfer_matrix(const std::map<std::string, Direction>& directions,
                                          const std::map<std::string, TransferTarget>& targets,
                                          const InterventionConfig& cfg,
                                          const TransferMetric& metric = factual_rate);

double accuracy(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> golds);

// |captions with a hallucinated object| / |captions|.
double chair_s(std::span<const std::uint8_t> hallucinated);

// "a2" < "a10": digit runs compare numerically.
bool natural_less(const std::string& a, const std::string& b);

enum class ReportFormat { kCsv, kJson };

// %.9g decimal text, fixed column order. Same input gives identical bytes.
std::string render_report(const std::vector<LayerStats>& stats, ReportFormat format);
std::string render_report(const std::vector<TransferCell>& cells, ReportFormat format);

void emit_report(const std::vector<LayerStats>& stats, const std::filesystem::path& path,
                 ReportFormat format);
void emit_report(const std::vector<TransferCell>& cells, const std::filesystem::path& path,
                 ReportFormat format);

}  // namespace aod

#endif  // AOD_ANALYSIS_HPP_
