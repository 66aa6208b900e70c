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

#include "aod/activation_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <unordered_set>

#include "aod/error.hpp"
#include "aod/rng.hpp"

namespace aod {
namespace {

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  template <typename T>
  void put(T value) {
    using U = std::make_unsigned_t<T>;
    auto bits = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>(bits & 0xFFu));
      bits = static_cast<U>(bits >> 8);
    }
  }

  void put_f32(float value) { put(std::bit_cast<std::uint32_t>(value)); }

  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }

 private:
  std::vector<std::uint8_t>& out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& in) : in_(in) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::make_unsigned_t<T> bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::make_unsigned_t<T>>(
          static_cast<std::make_unsigned_t<T>>(in_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return static_cast<T>(bits);
  }

  float get_f32(const char* what) { return std::bit_cast<float>(get<std::uint32_t>(what)); }

  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      fail(ErrorKind::kTruncatedPayload,
           std::string("truncated payload while reading ") + what);
    }
  }

  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

std::string encode_meta(const Metadata& meta) {
  nlohmann::json obj = nlohmann::json::object();
  for (const auto& [k, v] : meta) obj[k] = v;
  return obj.dump();
}

Metadata decode_meta(const std::string& text) {
  const auto obj = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (obj.is_discarded() || !obj.is_object()) {
    fail(ErrorKind::kBadSchema, "metadata is not a JSON object");
  }
  Metadata meta;
  for (const auto& [k, v] : obj.items()) {
    if (v.is_string()) {
      meta[k] = v.get<std::string>();
    } else {
      meta[k] = v.dump();
    }
  }
  return meta;
}

bool parse_layer(const std::string& text, int& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && out >= 0;
}

}  // namespace

int ActivationDataset::layer() const {
  const auto it = meta.find("layer");
  int value = -1;
  if (it == meta.end() || !parse_layer(it->second, value)) {
    fail(ErrorKind::kBadSchema, "metadata needs a non-negative integer \"layer\" entry");
  }
  return value;
}

std::size_t ActivationDataset::count_label(std::uint8_t label) const {
  return static_cast<std::size_t>(std::count_if(
      records.begin(), records.end(), [label](const auto& r) { return r.label == label; }));
}

void validate(const ActivationDataset& ds) {
  require(ds.dim > 0, ErrorKind::kInvalidArgument, "dataset dim must be positive");
  std::unordered_set<std::uint64_t> ids;
  ids.reserve(ds.records.size());
  for (const auto& r : ds.records) {
    if (r.vector.size() != ds.dim) {
      fail(ErrorKind::kDimensionMismatch,
           "dimension mismatch: sample " + std::to_string(r.sample_id) + " has length " +
               std::to_string(r.vector.size()) + ", dataset dim is " + std::to_string(ds.dim));
    }
    require(r.label <= 1, ErrorKind::kInvalidArgument,
            "label must be 0 or 1 (sample " + std::to_string(r.sample_id) + ")");
    for (float x : r.vector) {
      require(std::isfinite(x), ErrorKind::kNonFinite,
              "non-finite value in sample " + std::to_string(r.sample_id));
    }
    require(ids.insert(r.sample_id).second, ErrorKind::kInvalidArgument,
            "duplicate sample_id " + std::to_string(r.sample_id));
  }
  (void)ds.layer();
}

std::vector<std::uint8_t> encode_dataset(const ActivationDataset& ds) {
  validate(ds);
  const std::string meta = encode_meta(ds.meta);
  std::vector<std::uint8_t> out;
  out.reserve(4 + 2 + 4 + 8 + 4 + meta.size() +
              ds.records.size() * (9 + 4 * static_cast<std::size_t>(ds.dim)));
  ByteWriter w(out);
  w.put_bytes(kAodaMagic, sizeof(kAodaMagic));
  w.put<std::uint16_t>(kAodaVersion);
  w.put<std::uint32_t>(ds.dim);
  w.put<std::uint64_t>(ds.records.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.put_bytes(meta.data(), meta.size());
  for (const auto& r : ds.records) {
    w.put<std::uint64_t>(r.sample_id);
    w.put<std::uint8_t>(r.label);
    for (float x : r.vector) w.put_f32(x);
  }
  return out;
}

ActivationDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  ByteReader rd(bytes);
  const std::size_t head = std::min<std::size_t>(bytes.size(), 4);
  if (!std::equal(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(head), kAodaMagic) ||
      bytes.empty()) {
    fail(ErrorKind::kBadMagic, "bad magic: not an AODA container");
  }
  if (bytes.size() < 4) {
    fail(ErrorKind::kTruncatedPayload, "truncated payload: file ends inside the magic");
  }
  (void)rd.get_string(4, "magic");
  const auto version = rd.get<std::uint16_t>("version");
  if (version != kAodaVersion) {
    fail(ErrorKind::kUnsupportedVersion,
         "unsupported version " + std::to_string(version) + " (expected 1)");
  }
  ActivationDataset ds;
  ds.dim = rd.get<std::uint32_t>("dim");
  const auto count = rd.get<std::uint64_t>("count");
  const auto meta_len = rd.get<std::uint32_t>("meta_len");
  ds.meta = decode_meta(rd.get_string(meta_len, "metadata"));
  require(ds.dim > 0, ErrorKind::kBadSchema, "dim must be positive");

  const std::uint64_t record_bytes = 9 + 4ull * ds.dim;
  if (count > rd.remaining() / record_bytes) {
    fail(ErrorKind::kTruncatedPayload, "truncated payload: header declares " +
                                           std::to_string(count) + " records");
  }
  ds.records.resize(count);
  for (auto& r : ds.records) {
    r.sample_id = rd.get<std::uint64_t>("sample_id");
    r.label = rd.get<std::uint8_t>("label");
    if (r.label > 1) {
      fail(ErrorKind::kBadSchema, "invalid label " + std::to_string(r.label) + " for sample " +
                                      std::to_string(r.sample_id));
    }
    r.vector.resize(ds.dim);
    for (auto& x : r.vector) {
      x = rd.get_f32("vector");
      if (!std::isfinite(x)) {
        fail(ErrorKind::kNonFinite, "non-finite value in sample " + std::to_string(r.sample_id));
      }
    }
  }
  if (rd.remaining() != 0) {
    fail(ErrorKind::kBadSchema, "trailing bytes after last record");
  }
  validate(ds);
  return ds;
}

void save_dataset(const ActivationDataset& ds, const std::filesystem::path& path) {
  const auto bytes = encode_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

ActivationDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_dataset(bytes);
}

SplitPair split_dataset(const ActivationDataset& ds, double val_ratio, std::uint64_t seed) {
  require(val_ratio > 0.0 && val_ratio < 1.0, ErrorKind::kInvalidArgument,
          "val_ratio must lie in (0, 1)");
  const std::size_t m = ds.size();
  require(m >= 2, ErrorKind::kInvalidArgument, "split needs at least 2 records");
  const auto val_total = static_cast<std::size_t>(std::llround(val_ratio * static_cast<double>(m)));
  if (val_total == 0 || val_total == m) {
    fail(ErrorKind::kInvalidArgument,
         "dataset too small: val_ratio " + std::to_string(val_ratio) + " of " +
             std::to_string(m) + " records leaves an empty split");
  }

  // Per-label quotas by largest remainder, so they sum to val_total.
  std::array<std::vector<std::size_t>, 2> by_label;
  for (std::size_t i = 0; i < m; ++i) by_label[ds.records[i].label].push_back(i);
  std::array<std::size_t, 2> quota{};
  std::array<double, 2> remainder{};
  std::size_t assigned = 0;
  for (int c = 0; c < 2; ++c) {
    const double exact = val_ratio * static_cast<double>(by_label[c].size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    remainder[c] = exact - static_cast<double>(quota[c]);
    assigned += quota[c];
  }
  while (assigned < val_total) {
    const int c = (remainder[1] > remainder[0] ||
                   (remainder[1] == remainder[0] && by_label[1].size() > by_label[0].size()))
                      ? 1
                      : 0;
    const int pick = quota[c] < by_label[c].size() ? c : 1 - c;
    ++quota[pick];
    remainder[pick] = -1.0;
    ++assigned;
  }

  Rng rng(seed);
  std::vector<bool> in_val(m, false);
  for (int c = 0; c < 2; ++c) {
    rng.shuffle(by_label[c]);
    for (std::size_t k = 0; k < quota[c]; ++k) in_val[by_label[c][k]] = true;
  }

  SplitPair out;
  out.seed = seed;
  out.val_ratio = val_ratio;
  out.train.dim = out.val.dim = ds.dim;
  out.train.meta = out.val.meta = ds.meta;
  out.train.meta["split"] = "train";
  out.val.meta["split"] = "val";
  for (std::size_t i = 0; i < m; ++i) {
    (in_val[i] ? out.val : out.train).records.push_back(ds.records[i]);
  }
  return out;
}

}  // namespace aod
