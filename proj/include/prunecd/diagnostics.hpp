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

// Amateur-quality diagnostics: how flat (entropy) and how informative (top-k
// overlap with the full model's logits) early-exit and layer-pruned outputs
// are, and per-layer JSD from the final distribution along a generation.

#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "prunecd/decoding.hpp"
#include "prunecd/divergence.hpp"
#include "prunecd/model.hpp"
#include "prunecd/tokenizer.hpp"

namespace prunecd {

inline constexpr std::size_t kDefaultTopK = 25;

struct DiagnosticsReport {
  double entropy_full = 0.0;
  double entropy_early_exit = 0.0;
  double entropy_pruned = 0.0;
  double overlap_early_exit = 0.0;  // mean |Top_k(exit) ∩ Top_k(full)|
  double overlap_pruned = 0.0;
  std::size_t k = kDefaultTopK;
  std::size_t sample_count = 0;
  std::size_t exit_layer = 0;
  LayerSet prune_set;
  std::size_t positions_per_prompt = 1;
};

nlohmann::json to_json(const DiagnosticsReport& r);

// Averages over the first `positions_per_prompt` generated positions of each
// prompt. Positions past the first follow the full model's argmax. Overlap is
// measured on logits.
DiagnosticsReport flatness_informativeness_sweep(const Model& model, const Tokenizer& tok,
                                                 std::span<const std::string> prompts,
                                                 std::size_t exit_layer,
                                                 const LayerSet& prune_set,
                                                 std::size_t k = kDefaultTopK,
                                                 std::size_t positions_per_prompt = 1);

struct JsdMatrix {
  std::vector<std::size_t> positions;  // sequence index of each generated token
  std::vector<TokenId> tokens;         // the generated token at that position
  std::vector<std::vector<double>> values;  // [token][layer]
};

// Generates with `config`, then replays the sequence and records
// JSD(exit at layer l, final) for every layer at every generated position.
JsdMatrix jsd_matrix(const Model& model, const Tokenizer& tok, const std::string& prompt,
                     const DecodeConfig& config);

// Rows are tokens, columns layers. Header: prompt,position,token,L0..L{n-1}.
void write_jsd_csv(std::ostream& out, std::span<const JsdMatrix> matrices);

struct ExitHistogram {
  LayerSet bucket;
  std::vector<std::size_t> counts;  // indexed by layer
  std::size_t total = 0;
};

// Per token, the bucket layer with the largest JSD (lowest layer on ties).
ExitHistogram exit_layer_histogram(std::span<const JsdMatrix> matrices, const LayerSet& bucket);

nlohmann::json to_json(const ExitHistogram& h);

}  // namespace prunecd
