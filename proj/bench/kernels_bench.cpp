// Copyright 2026 The PruneCD Engine Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Serial reference kernels against their OpenMP versions, and end-to-end
// decoding modes on the seeded tiny model.

#include <random>

#include <benchmark/benchmark.h>

#include "prunecd/decoding.hpp"
#include "prunecd/numerics.hpp"

using namespace prunecd;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Matrix m(r, c);
  for (auto& v : m.data()) v = n(rng);
  return m;
}

// rows x d_model times d_model x d_ff, a feed-forward projection.
template <bool kSerial>
void BM_Linear(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(rows, 256, 1);
  const Matrix w = random_matrix(256, 1024, 2);
  const Vector b(1024, 0.1f);
  for (auto _ : state) {
    Matrix y = kSerial ? serial::linear(x, w, b) : linear(x, w, b);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows));
}
BENCHMARK(BM_Linear<true>)->Name("linear/serial")->Arg(1)->Arg(64)->Arg(512);
BENCHMARK(BM_Linear<false>)->Name("linear/openmp")->Arg(1)->Arg(64)->Arg(512);

template <bool kSerial>
void BM_LayerNorm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const Matrix x = random_matrix(rows, 256, 3);
  const Vector g(256, 1.0f), b(256, 0.0f);
  for (auto _ : state) {
    Matrix y = kSerial ? serial::layer_norm_rows(x, g, b) : layer_norm_rows(x, g, b);
    benchmark::DoNotOptimize(y.data().data());
  }
}
BENCHMARK(BM_LayerNorm<true>)->Name("layer_norm/serial")->Arg(64)->Arg(512);
BENCHMARK(BM_LayerNorm<false>)->Name("layer_norm/openmp")->Arg(64)->Arg(512);

template <bool kSerial>
void BM_Gelu(benchmark::State& state) {
  Matrix x = random_matrix(static_cast<std::size_t>(state.range(0)), 1024, 4);
  for (auto _ : state) {
    if (kSerial) {
      serial::gelu_inplace(x.data());
    } else {
      gelu_inplace(x.data());
    }
    benchmark::DoNotOptimize(x.data().data());
  }
}
BENCHMARK(BM_Gelu<true>)->Name("gelu/serial")->Arg(64)->Arg(512);
BENCHMARK(BM_Gelu<false>)->Name("gelu/openmp")->Arg(64)->Arg(512);

const Model& tiny() {
  static const Model m(tiny_config(), make_random_weights(tiny_config(), 42));
  return m;
}

void BM_Decode(benchmark::State& state, DecodeMode mode, DualPathImpl dual) {
  ByteTokenizer tok;
  DecodeConfig c;
  c.mode = mode;
  c.max_new_tokens = 64;
  c.lambda = mode == DecodeMode::dola ? 1.0 : 0.5;
  c.prune_set = LayerSet({2, 5});
  c.dual_path = dual;
  const Generator gen(tiny(), tok);
  for (auto _ : state) {
    auto r = gen.generate("The history of the city begins", c);
    benchmark::DoNotOptimize(r.tokens.data());
  }
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK_CAPTURE(BM_Decode, greedy, DecodeMode::greedy, DualPathImpl::batched)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Decode, dola, DecodeMode::dola, DualPathImpl::batched)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Decode, prunecd_batched, DecodeMode::prunecd, DualPathImpl::batched)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Decode, prunecd_sequential, DecodeMode::prunecd, DualPathImpl::sequential)
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
