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

// Choosing the amateur's pruning set.
//
// Each candidate layer is removed on its own and scored by how much MC1
// degrades (delta = MC1 with every layer - MC1 without it); the k layers
// whose removal hurts most form the pruning set. An optional
// perplexity-driven pre-filter (greedy block removal) narrows the candidates
// first, and a brute-force search over small subsets serves as a reference.

#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "prunecd/eval.hpp"
#include "prunecd/model.hpp"
#include "prunecd/tokenizer.hpp"

namespace prunecd {

struct AblationRecord {
  std::size_t layer = 0;
  double mc1_full = 0.0;
  double mc1_ablated = 0.0;
  double delta = 0.0;
};

// Fraction of items whose best option strictly outscores all others.
double mc1_score(const Model& model, const Tokenizer& tok, std::span<const McItem> items,
                 const LayerSet& layers, OptionScoring scoring = OptionScoring::sum);

// One record per candidate, in candidate order. MC1 with every layer is
// computed once and shared.
std::vector<AblationRecord> single_layer_ablation(const Model& model, const Tokenizer& tok,
                                                  std::span<const McItem> items,
                                                  const LayerSet& candidates,
                                                  OptionScoring scoring = OptionScoring::sum);

// The k records with the largest delta; equal deltas keep the lower layer.
LayerSet select_pruning_set(std::span<const AblationRecord> records, std::size_t k);

inline constexpr std::size_t kExhaustiveSubsetLimit = 50000;

struct ExhaustiveResult {
  LayerSet best;
  double delta = 0.0;
  std::size_t subsets_evaluated = 0;
};

// Scores every subset S of `candidates` with min_size <= |S| < k_max and
// returns the one with the largest MC1 degradation; needs k_max > min_size.
// Subsets are visited by size, then lexicographically, and the first maximum
// wins. More than kExhaustiveSubsetLimit subsets is a CapacityError.
ExhaustiveResult exhaustive_search(const Model& model, const Tokenizer& tok,
                                   std::span<const McItem> items, std::size_t k_max,
                                   const LayerSet& candidates, std::size_t min_size = 1,
                                   OptionScoring scoring = OptionScoring::sum);

// Number of subsets exhaustive_search would score.
std::size_t exhaustive_subset_count(std::size_t n_candidates, std::size_t k_max,
                                    std::size_t min_size = 1);

// Splits a token stream into consecutive windows of at most `window` tokens.
// A trailing window shorter than 2 tokens is dropped.
std::vector<std::vector<TokenId>> make_windows(std::span<const TokenId> tokens,
                                               std::size_t window);

// exp(mean next-token NLL) over all windows.
double perplexity(const Model& model, const LayerSet& layers,
                  std::span<const std::vector<TokenId>> windows);

struct PerplexityRecord {
  std::size_t layer = 0;  // layer tentatively removed
  double ppl = 0.0;
};

struct SlebStep {
  std::vector<PerplexityRecord> candidates;
  std::size_t removed = 0;
  double ppl = 0.0;
};

struct SlebResult {
  double base_ppl = 0.0;
  LayerSet removed;
  std::vector<SlebStep> steps;
};

// Removes `count` layers one at a time, each step dropping the layer whose
// removal gives the lowest perplexity (lower layer on ties).
SlebResult sleb_filter(const Model& model, std::span<const std::vector<TokenId>> windows,
                       std::size_t count);

struct SearchOptions {
  std::size_t k = 4;
  OptionScoring scoring = OptionScoring::sum;
  bool exhaustive = false;
  // Pre-filter: with a corpus, sleb_filter selects `filter_count` layers
  // (0 means n/2) and only those are ablated.
  std::optional<std::vector<TokenId>> corpus;
  std::size_t filter_count = 0;
  std::size_t window = 512;
};

struct SearchReport {
  LayerSet candidates;
  std::vector<AblationRecord> records;
  std::optional<SlebResult> sleb;
  std::optional<ExhaustiveResult> exhaustive;
  LayerSet chosen;
  std::size_t k = 0;
  nlohmann::json config;  // echo of the resolved request
};

SearchReport run_search(const Model& model, const Tokenizer& tok, std::span<const McItem> items,
                        const SearchOptions& options);

nlohmann::json to_json(const SearchReport& r);
// Reads the "chosen" set back from a persisted report.
LayerSet load_chosen_set(const std::filesystem::path& report_path);

}  // namespace prunecd
