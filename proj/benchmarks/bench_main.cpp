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


#include <benchmark/benchmark.h>

#include <vector>

#include "aod/aod.hpp"

namespace {

std::vector<double> gaussian(std::size_t n, std::uint64_t seed) {
  aod::Rng rng(seed);
  std::vector<double> out(n);
  for (auto& e : out) e = rng.normal();
  return out;
}

void BM_Decompose(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const auto x = gaussian(d, 1);
  const auto dir = aod::Direction::from_vector(gaussian(d, 2));
  for (auto _ : state) {
    auto parts = aod::decompose(std::span<const double>(x), dir);
    benchmark::DoNotOptimize(parts);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Decompose)->Arg(64)->Arg(4096);

// One training step's probe work: forward plus backward on a default batch.
void BM_ProbeForwardBackward(benchmark::State& state) {
  const int d = static_cast<int>(state.range(0));
  const int batch = 256, hidden = 512;
  auto net = aod::ProbeMLP<float>::init(d, hidden, 3);
  aod::Matrix<float> x(batch, d);
  aod::Rng rng(4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(rng.normal());
  std::vector<std::uint8_t> y(batch);
  for (auto& l : y) l = rng.coin() ? 1 : 0;
  for (auto _ : state) {
    const auto cache = aod::probe_forward(net, x);
    auto grads = aod::probe_backward(net, cache, y);
    benchmark::DoNotOptimize(grads);
  }
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_ProbeForwardBackward)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);

void BM_DecodeStep(benchmark::State& state) {
  aod::SyntheticSpec spec;
  spec.d = static_cast<int>(state.range(0));
  const auto world = aod::generate_world(spec, spec.seed);
  const auto z = gaussian(static_cast<std::size_t>(spec.d), 5);
  const auto dir = aod::planted_direction(world);
  aod::InterventionConfig cfg;
  for (auto _ : state) {
    auto step = aod::decode_step(world.head, z, dir, cfg);
    benchmark::DoNotOptimize(step);
  }
}
BENCHMARK(BM_DecodeStep)->Arg(64)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
