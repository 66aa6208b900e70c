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

#include "aod/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "aod/error.hpp"
#include "aod/rng.hpp"

namespace aod {
namespace {

enum SeedStream : std::uint64_t {
  kDirection = 1001,
  kLeak = 1002,
  kHead = 1003,
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

void normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  if (!(n > 0.0)) fail(ErrorKind::kDegenerate, "cannot normalize a zero vector");
  for (double& x : v) x /= n;
}

std::vector<double> gaussian(Rng& rng, int d) {
  std::vector<double> v(static_cast<std::size_t>(d));
  for (double& x : v) x = rng.normal();
  return v;
}

// Gram-Schmidt against `basis`, then normalize.
std::vector<double> orthogonal_unit(Rng& rng, const std::vector<double>& basis) {
  for (;;) {
    auto u = gaussian(rng, static_cast<int>(basis.size()));
    const double c = dot(u, basis);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] -= c * basis[i];
    // Second pass cleans up cancellation error.
    const double c2 = dot(u, basis);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] -= c2 * basis[i];
    if (dot(u, u) > 1e-12) {
      normalize(u);
      return u;
    }
  }
}

std::vector<double> read_vector(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array()) {
    fail(ErrorKind::kBadSchema, std::string("bad world schema: missing ") + key);
  }
  return j[key].get<std::vector<double>>();
}

}  // namespace

void validate(const SyntheticSpec& spec) {
  require(spec.d >= 3, ErrorKind::kInvalidArgument, "d must be >= 3");
  require(spec.n >= 2, ErrorKind::kInvalidArgument, "n must be >= 2");
  require(spec.vocab_size >= 3, ErrorKind::kInvalidArgument, "vocab size must be >= 3");
  require(spec.sigma_signal > 0.0, ErrorKind::kInvalidArgument, "sigma_signal must be > 0");
  require(spec.sigma_res > 0.0, ErrorKind::kInvalidArgument, "sigma_res must be > 0");
  require(spec.leakage >= 0.0, ErrorKind::kInvalidArgument, "leakage must be >= 0");
  require(spec.head_scale >= 0.0 && spec.hallucination_row_noise >= 0.0,
          ErrorKind::kInvalidArgument, "head noise scales must be >= 0");
  require(spec.layer >= 0, ErrorKind::kInvalidArgument, "layer must be >= 0");
  for (double x : {spec.mu0, spec.mu1, spec.sigma_signal, spec.sigma_res, spec.leakage,
                   spec.kappa, spec.head_scale, spec.hallucination_row_noise}) {
    require(std::isfinite(x), ErrorKind::kNonFinite, "synthetic spec values must be finite");
  }
}

nlohmann::json to_json(const SyntheticSpec& spec) {
  return {{"d", spec.d},
          {"n", spec.n},
          {"mu0", spec.mu0},
          {"mu1", spec.mu1},
          {"sigma_signal", spec.sigma_signal},
          {"sigma_res", spec.sigma_res},
          {"leakage", spec.leakage},
          {"vocab_size", spec.vocab_size},
          {"kappa", spec.kappa},
          {"head_scale", spec.head_scale},
          {"hallucination_row_noise", spec.hallucination_row_noise},
          {"layer", spec.layer},
          {"seed", spec.seed}};
}

SyntheticSpec spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorKind::kBadSchema, "bad spec schema: not an object");
  SyntheticSpec s;
  s.d = j.value("d", s.d);
  s.n = j.value("n", s.n);
  s.mu0 = j.value("mu0", s.mu0);
  s.mu1 = j.value("mu1", s.mu1);
  s.sigma_signal = j.value("sigma_signal", s.sigma_signal);
  s.sigma_res = j.value("sigma_res", s.sigma_res);
  s.leakage = j.value("leakage", s.leakage);
  s.vocab_size = j.value("vocab_size", s.vocab_size);
  s.kappa = j.value("kappa", s.kappa);
  s.head_scale = j.value("head_scale", s.head_scale);
  s.hallucination_row_noise = j.value("hallucination_row_noise", s.hallucination_row_noise);
  s.layer = j.value("layer", s.layer);
  s.seed = j.value("seed", s.seed);
  validate(s);
  return s;
}

SyntheticWorld generate_world(const SyntheticSpec& spec, std::uint64_t seed) {
  validate(spec);
  SyntheticWorld world;
  world.spec = spec;
  world.seed = seed;

  Rng dir_rng(derive_seed(seed, kDirection));
  world.v_true = gaussian(dir_rng, spec.d);
  normalize(world.v_true);

  Rng leak_rng(derive_seed(seed, kLeak));
  world.u_leak = orthogonal_unit(leak_rng, world.v_true);

  const auto vocab = static_cast<Eigen::Index>(spec.vocab_size);
  const auto dim = static_cast<Eigen::Index>(spec.d);
  const double row_sd = spec.head_scale / std::sqrt(static_cast<double>(spec.d));
  Rng head_rng(derive_seed(seed, kHead));
  world.head.weights.resize(vocab, dim);
  for (Eigen::Index r = 0; r < vocab; ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) world.head.weights(r, c) = row_sd * head_rng.normal();
  }
  world.hallucination_token = 0;
  const auto h = static_cast<Eigen::Index>(world.hallucination_token);
  for (Eigen::Index c = 0; c < dim; ++c) {
    world.head.weights(h, c) = spec.kappa * world.v_true[static_cast<std::size_t>(c)] +
                               spec.hallucination_row_noise * world.head.weights(h, c);
  }
  world.head.bias = Vector<double>::Zero(vocab);
  world.head.vocab.resize(static_cast<std::size_t>(vocab));
  for (Eigen::Index r = 0; r < vocab; ++r) {
    world.head.vocab[static_cast<std::size_t>(r)] =
        r == h ? "<hallucination>" : "tok" + std::to_string(r);
  }
  world.head.hallucination_token = world.hallucination_token;
  return world;
}

SyntheticWorld derive_world(const SyntheticWorld& base, double sigma_res, std::uint64_t seed) {
  SyntheticWorld world = base;
  world.spec.sigma_res = sigma_res;
  world.seed = seed;
  validate(world.spec);
  Rng leak_rng(derive_seed(seed, kLeak));
  world.u_leak = orthogonal_unit(leak_rng, world.v_true);
  return world;
}

ActivationDataset generate_dataset(const SyntheticWorld& world, int n, std::uint64_t seed) {
  require(n >= 2, ErrorKind::kInvalidArgument, "n must be >= 2");
  const auto& spec = world.spec;
  const std::size_t d = world.v_true.size();
  Rng rng(seed);

  ActivationDataset ds;
  ds.dim = static_cast<std::uint32_t>(d);
  ds.meta = {{"layer", std::to_string(spec.layer)},
             {"model", "synthetic"},
             {"source", "synthetic-world-" + std::to_string(world.seed)},
             {"split", "all"},
             {"data_seed", std::to_string(seed)}};
  ds.records.reserve(static_cast<std::size_t>(n));

  std::uint8_t pending = 0;
  std::vector<double> g(d);
  for (int i = 0; i < n; ++i) {
    // Labels come in complementary pairs in random order, which keeps the
    // classes balanced within one sample.
    std::uint8_t y;
    if (i % 2 == 0) {
      y = rng.coin() ? 1 : 0;
      pending = static_cast<std::uint8_t>(1 - y);
    } else {
      y = pending;
    }
    const double a = rng.normal(y == 0 ? spec.mu0 : spec.mu1, spec.sigma_signal);
    for (double& x : g) x = rng.normal();
    const double gc = dot(g, world.v_true);
    const double leak = spec.leakage * (2.0 * y - 1.0);

    ActivationRecord rec;
    rec.sample_id = static_cast<std::uint64_t>(i);
    rec.label = y;
    rec.vector.resize(d);
    for (std::size_t k = 0; k < d; ++k) {
      const double residual = spec.sigma_res * (g[k] - gc * world.v_true[k]) + leak * world.u_leak[k];
      rec.vector[k] = static_cast<float>(a * world.v_true[k] + residual);
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

Direction planted_direction(const SyntheticWorld& world) {
  Provenance p;
  p.method = "planted";
  p.source = "synthetic-world-" + std::to_string(world.seed);
  p.seed = world.seed;
  return Direction::from_vector(world.v_true, world.spec.layer, std::move(p));
}

double direction_recovery(const Direction& learned, const SyntheticWorld& world) {
  if (learned.dim() != world.v_true.size()) {
    fail(ErrorKind::kDimensionMismatch, "dimension mismatch between direction and world");
  }
  const double n = std::sqrt(dot(learned.v, learned.v) * dot(world.v_true, world.v_true));
  require(n > 0.0, ErrorKind::kDegenerate, "zero direction");
  return std::min(1.0, std::abs(dot(learned.v, world.v_true)) / n);
}

double hallucination_rate(const SyntheticWorld& world, const ActivationDataset& ds,
                          const LanguageHead& head, const Direction* dir,
                          const InterventionConfig& cfg) {
  require(!ds.empty(), ErrorKind::kEmpty, "hallucination rate of an empty dataset");
  require(ds.dim == head.dim(), ErrorKind::kDimensionMismatch,
          "dimension mismatch between dataset and head");
  InterventionConfig effective = cfg;
  if (dir == nullptr) effective.mode = DecodeMode::kNone;
  const Direction none{};
  std::size_t hits = 0;
  std::vector<double> z(ds.dim);
  for (const auto& r : ds.records) {
    std::copy(r.vector.begin(), r.vector.end(), z.begin());
    const auto [token, diag] = decode_step(head, z, dir ? *dir : none, effective);
    hits += token == world.hallucination_token ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(ds.size());
}

Direction mean_diff_oracle(const ActivationDataset& ds) {
  const std::size_t d = ds.dim;
  std::vector<double> sum0(d, 0.0), sum1(d, 0.0);
  std::size_t n0 = 0, n1 = 0;
  for (const auto& r : ds.records) {
    auto& sum = r.label == 0 ? sum0 : sum1;
    (r.label == 0 ? n0 : n1) += 1;
    for (std::size_t k = 0; k < d; ++k) sum[k] += r.vector[k];
  }
  if (n0 == 0 || n1 == 0) fail(ErrorKind::kSingleClass, "mean difference needs both labels");
  std::vector<double> diff(d);
  for (std::size_t k = 0; k < d; ++k) {
    diff[k] = sum0[k] / static_cast<double>(n0) - sum1[k] / static_cast<double>(n1);
  }
  const double norm = std::sqrt(dot(diff, diff));
  if (!(norm > 1e-12)) {
    fail(ErrorKind::kDegenerate, "class means coincide; mean-difference direction is undefined");
  }
  Provenance p;
  p.method = "mean-diff";
  const auto source = ds.meta.find("source");
  p.source = source != ds.meta.end() ? source->second : "";
  int layer = 0;
  if (ds.meta.count("layer")) layer = ds.layer();
  return Direction::from_vector(std::move(diff), layer, std::move(p));
}

nlohmann::json to_json(const SyntheticWorld& world) {
  return {{"format", "aod-world"},
          {"version", 1},
          {"spec", to_json(world.spec)},
          {"seed", world.seed},
          {"v_true", world.v_true},
          {"u_leak", world.u_leak},
          {"hallucination_token", world.hallucination_token},
          {"sign_convention",
           {{"hallucinated_label", 0},
            {"hallucinated_coefficient_mean", world.spec.mu0},
            {"consistent_coefficient_mean", world.spec.mu1},
            {"hallucination_row", "kappa * v_true + row noise"}}},
          {"head", to_json(world.head)}};
}

SyntheticWorld world_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "aod-world") {
    fail(ErrorKind::kBadSchema, "bad world schema: format must be \"aod-world\"");
  }
  SyntheticWorld world;
  world.spec = spec_from_json(j.at("spec"));
  world.seed = j.value("seed", std::uint64_t{0});
  world.v_true = read_vector(j, "v_true");
  world.u_leak = read_vector(j, "u_leak");
  world.hallucination_token = j.value("hallucination_token", std::size_t{0});
  world.head = head_from_json(j.at("head"));
  if (world.v_true.size() != static_cast<std::size_t>(world.spec.d) ||
      world.u_leak.size() != world.v_true.size() || world.head.dim() != world.v_true.size()) {
    fail(ErrorKind::kBadSchema, "bad world schema: inconsistent dimensions");
  }
  return world;
}

void save_world(const SyntheticWorld& world, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  out << to_json(world).dump(2) << '\n';
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

SyntheticWorld load_world(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) fail(ErrorKind::kBadSchema, "bad world schema: invalid JSON");
  return world_from_json(j);
}

}  // namespace aod
