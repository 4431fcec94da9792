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

// Independent oracles for the test suites: a naive double-precision forward
// pass and an unbatched contrastive decoder built on it. Nothing here calls
// the engine's kernels.

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "prunecd/model.hpp"

namespace reftest {

using prunecd::LayerSet;
using prunecd::TokenId;

// Logits at every position, running only `layers` in ascending order.
std::vector<std::vector<double>> reference_logits(const prunecd::Model& model,
                                                  std::span<const TokenId> tokens,
                                                  const LayerSet& layers);

std::vector<double> reference_last_logits(const prunecd::Model& model,
                                          std::span<const TokenId> tokens, const LayerSet& layers);

struct OracleDecode {
  double lambda = 0.0;
  double alpha = 0.1;
  double theta = 1.2;
  bool penalize_amateur = true;
  std::size_t max_new = 32;
};

// Contrastive decoding with two separate full-prefix forwards per step
// (expert over every layer, amateur without `prune_set`), selection rule
// written out directly. Returns the generated ids.
std::vector<TokenId> oracle_contrastive(const prunecd::Model& model,
                                        std::span<const TokenId> prompt,
                                        const LayerSet& prune_set, const OracleDecode& cfg);

// Log-softmax in double.
std::vector<double> log_softmax_ref(std::span<const double> logits);
std::vector<double> log_softmax_ref(std::span<const float> logits);

std::filesystem::path fixture(const std::string& name);

// Deterministic random prompt of `len` byte tokens, BOS first.
std::vector<TokenId> random_prompt(std::uint32_t seed, std::size_t len);

}  // namespace reftest
