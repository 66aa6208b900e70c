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

#ifndef AOD_ACTIVATION_STORE_HPP_
#define AOD_ACTIVATION_STORE_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace aod {

// One hidden-state readout with its consistency label (1 = consistent,
// 0 = inconsistent/hallucinated).
struct ActivationRecord {
  std::uint64_t sample_id = 0;
  std::uint8_t label = 0;
  std::vector<float> vector;

  bool operator==(const ActivationRecord&) const = default;
};

using Metadata = std::map<std::string, std::string>;

// A layer-specific set of labeled hidden states. Metadata must carry a
// non-negative integer "layer" entry; "model", "source" and "split" are
// conventional.
struct ActivationDataset {
  std::uint32_t dim = 0;
  std::vector<ActivationRecord> records;
  Metadata meta;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }

  // Parsed "layer" metadata entry; throws kBadSchema when absent or invalid.
  int layer() const;

  std::size_t count_label(std::uint8_t label) const;

  bool operator==(const ActivationDataset&) const = default;
};

// Throws aod::Error describing the first violated invariant.
void validate(const ActivationDataset& ds);

struct SplitPair {
  ActivationDataset train;
  ActivationDataset val;
  std::uint64_t seed = 0;
  double val_ratio = 0.0;
};

inline constexpr char kAodaMagic[4] = {'A', 'O', 'D', 'A'};
inline constexpr std::uint16_t kAodaVersion = 1;

// AODA v1 container, little-endian, no padding:
//   "AODA" | u16 version | u32 dim | u64 count | u32 meta_len | meta JSON |
//   count x (u64 sample_id | u8 label | dim x f32)
std::vector<std::uint8_t> encode_dataset(const ActivationDataset& ds);
ActivationDataset decode_dataset(const std::vector<std::uint8_t>& bytes);

// Validates before touching the filesystem, so an invalid dataset never
// leaves a partial file behind.
void save_dataset(const ActivationDataset& ds, const std::filesystem::path& path);
ActivationDataset load_dataset(const std::filesystem::path& path);

// Stratified, seeded partition. |val| = round(val_ratio * m); per-label
// validation counts are within one sample of proportional. Records keep their
// source order inside each side.
SplitPair split_dataset(const ActivationDataset& ds, double val_ratio, std::uint64_t seed);

}  // namespace aod

#endif  // AOD_ACTIVATION_STORE_HPP_
