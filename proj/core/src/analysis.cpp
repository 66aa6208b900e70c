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

#include "aod/analysis.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <tuple>

#include "aod/error.hpp"

namespace aod {
namespace {

std::string fmt9(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string json_string(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      default: out += c;
    }
  }
  return out + "\"";
}

std::string json_number(double x) { return std::isfinite(x) ? fmt9(x) : "null"; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

}  // namespace

LayerStatsResult layerwise_max_stats(const std::map<int, ActivationDataset>& by_layer) {
  LayerStatsResult result;
  for (const auto& [layer, ds] : by_layer) {
    std::array<std::vector<double>, 2> groups;
    for (const auto& r : ds.records) {
      require(r.vector.size() == ds.dim, ErrorKind::kDimensionMismatch,
              "dimension mismatch inside layer " + std::to_string(layer));
      double sq = 0.0, peak = 0.0;
      for (float x : r.vector) {
        sq += static_cast<double>(x) * x;
        peak = std::max(peak, std::abs(static_cast<double>(x)));
      }
      if (!(sq > 0.0)) {
        ++result.skipped_zero_vectors;
        continue;
      }
      groups[r.label & 1u].push_back(peak / std::sqrt(sq));
    }
    for (int g = 0; g < 2; ++g) {
      const auto& vals = groups[static_cast<std::size_t>(g)];
      if (vals.empty()) continue;
      LayerStats s;
      s.layer = layer;
      s.group = g;
      s.count = vals.size();
      double sum = 0.0;
      for (double v : vals) sum += v;
      s.mean = sum / static_cast<double>(vals.size());
      if (vals.size() > 1) {
        double ss = 0.0;
        for (double v : vals) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(vals.size() - 1));
      }
      result.stats.push_back(s);
    }
  }
  return result;
}

double factual_rate(const TransferTarget& target, const Direction* dir,
                    const InterventionConfig& cfg) {
  require(target.head.hallucination_token.has_value(), ErrorKind::kInvalidArgument,
          "factual rate needs a head with a hallucination token");
  require(!target.data.empty(), ErrorKind::kEmpty, "empty transfer target");
  require(target.data.dim == target.head.dim(), ErrorKind::kDimensionMismatch,
          "dimension mismatch between target data and head");
  InterventionConfig effective = cfg;
  if (dir == nullptr) effective.mode = DecodeMode::kNone;
  const Direction none{};
  std::size_t hits = 0;
  std::vector<double> z(target.data.dim);
  for (const auto& r : target.data.records) {
    std::copy(r.vector.begin(), r.vector.end(), z.begin());
    const auto [token, diag] = decode_step(target.head, z, dir ? *dir : none, effective);
    hits += token == *target.head.hallucination_token ? 1 : 0;
  }
  return 1.0 - static_cast<double>(hits) / static_cast<double>(target.data.size());
}

std::vector<TransferCell> transfer_matrix(const std::map<std::string, Direction>& directions,
                                          const std::map<std::string, TransferTarget>& targets,
                                          const InterventionConfig& cfg,
                                          const TransferMetric& metric) {
  std::vector<std::string> sources, names;
  for (const auto& [k, _] : directions) sources.push_back(k);
  for (const auto& [k, _] : targets) names.push_back(k);
  std::sort(sources.begin(), sources.end(), natural_less);
  std::sort(names.begin(), names.end(), natural_less);

  std::map<std::string, double> baseline;
  for (const auto& t : names) baseline[t] = metric(targets.at(t), nullptr, cfg);

  std::vector<TransferCell> cells;
  for (const auto& s : sources) {
    const Direction& dir = directions.at(s);
    for (const auto& t : names) {
      TransferCell cell{s, t, baseline[t], 0.0, 0.0, true};
      const auto& target = targets.at(t);
      if (dir.dim() != target.data.dim || dir.dim() != target.head.dim()) {
        cell.valid = false;
        cell.intervened = std::nan("");
        cell.delta = std::nan("");
      } else {
        cell.intervened = metric(target, &dir, cfg);
        cell.delta = cell.intervened - cell.baseline;
      }
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

double accuracy(std::span<const std::uint8_t> preds, std::span<const std::uint8_t> golds) {
  require(preds.size() == golds.size(), ErrorKind::kShapeMismatch,
          "accuracy: length mismatch");
  require(!preds.empty(), ErrorKind::kEmpty, "accuracy of an empty list");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double chair_s(std::span<const std::uint8_t> hallucinated) {
  require(!hallucinated.empty(), ErrorKind::kEmpty, "CHAIR_S of an empty caption list");
  std::size_t flagged = 0;
  for (auto f : hallucinated) flagged += f != 0 ? 1 : 0;
  return static_cast<double>(flagged) / static_cast<double>(hallucinated.size());
}

bool natural_less(const std::string& a, const std::string& b) {
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const bool da = std::isdigit(static_cast<unsigned char>(a[i])) != 0;
    const bool db = std::isdigit(static_cast<unsigned char>(b[j])) != 0;
    if (da && db) {
      std::size_t ie = i, je = j;
      while (ie < a.size() && std::isdigit(static_cast<unsigned char>(a[ie]))) ++ie;
      while (je < b.size() && std::isdigit(static_cast<unsigned char>(b[je]))) ++je;
      std::string na = a.substr(i, ie - i), nb = b.substr(j, je - j);
      na.erase(0, std::min(na.find_first_not_of('0'), na.size()));
      nb.erase(0, std::min(nb.find_first_not_of('0'), nb.size()));
      if (na.size() != nb.size()) return na.size() < nb.size();
      if (na != nb) return na < nb;
      i = ie;
      j = je;
    } else {
      if (a[i] != b[j]) return a[i] < b[j];
      ++i;
      ++j;
    }
  }
  if ((a.size() - i) != (b.size() - j)) return (a.size() - i) < (b.size() - j);
  return a < b;
}

std::string render_report(const std::vector<LayerStats>& stats, ReportFormat format) {
  std::vector<LayerStats> rows = stats;
  std::stable_sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) {
    return std::tie(x.layer, x.group) < std::tie(y.layer, y.group);
  });
  std::string out;
  if (format == ReportFormat::kCsv) {
    out = "layer,group,mean,std,count\n";
    for (const auto& s : rows) {
      out += std::to_string(s.layer) + "," + std::to_string(s.group) + "," + fmt9(s.mean) + "," +
             fmt9(s.std) + "," + std::to_string(s.count) + "\n";
    }
    return out;
  }
  out = "[";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& s = rows[i];
    out += i == 0 ? "\n" : ",\n";
    out += "  {\"layer\": " + std::to_string(s.layer) + ", \"group\": " + std::to_string(s.group) +
           ", \"mean\": " + json_number(s.mean) + ", \"std\": " + json_number(s.std) +
           ", \"count\": " + std::to_string(s.count) + "}";
  }
  return out + "\n]\n";
}

std::string render_report(const std::vector<TransferCell>& cells, ReportFormat format) {
  std::vector<TransferCell> rows = cells;
  std::stable_sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) {
    if (x.source != y.source) return natural_less(x.source, y.source);
    return natural_less(x.target, y.target);
  });
  std::string out;
  if (format == ReportFormat::kCsv) {
    out = "source,target,baseline,intervened,delta,valid\n";
    for (const auto& c : rows) {
      out += csv_field(c.source) + "," + csv_field(c.target) + "," + fmt9(c.baseline) + "," +
             (c.valid ? fmt9(c.intervened) : "invalid") + "," +
             (c.valid ? fmt9(c.delta) : "invalid") + "," + (c.valid ? "1" : "0") + "\n";
    }
    return out;
  }
  out = "[";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& c = rows[i];
    out += i == 0 ? "\n" : ",\n";
    out += "  {\"source\": " + json_string(c.source) + ", \"target\": " + json_string(c.target) +
           ", \"baseline\": " + json_number(c.baseline) +
           ", \"intervened\": " + (c.valid ? json_number(c.intervened) : "\"invalid\"") +
           ", \"delta\": " + (c.valid ? json_number(c.delta) : "\"invalid\"") +
           ", \"valid\": " + (c.valid ? "true" : "false") + "}";
  }
  return out + "\n]\n";
}

void emit_report(const std::vector<LayerStats>& stats, const std::filesystem::path& path,
                 ReportFormat format) {
  write_text(path, render_report(stats, format));
}

void emit_report(const std::vector<TransferCell>& cells, const std::filesystem::path& path,
                 ReportFormat format) {
  write_text(path, render_report(cells, format));
}

}  // namespace aod
