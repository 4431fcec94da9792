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

// Token selection: greedy, layer-pruned contrastive decoding, and the
// early-exit (DoLa) baseline. All three share one pipeline:
//
//   repetition penalty -> plausibility gate on the expert ->
//   score = log p_expert - lambda * log p_amateur -> argmax
//
// Greedy is the lambda = 0 case with the expert standing in as amateur.

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "prunecd/model.hpp"
#include "prunecd/tokenizer.hpp"

namespace prunecd {

enum class DecodeMode { greedy, dola, prunecd };
enum class DolaBucket { lower, upper, custom };
// How the prunecd expert/amateur pair is computed.
enum class DualPathImpl { batched, sequential };
// Which logits the repetition penalty touches.
enum class PenaltyTarget { expert_only, both };

std::string to_string(DecodeMode m);
std::string to_string(DolaBucket b);
std::string to_string(DualPathImpl d);
std::string to_string(PenaltyTarget p);
DecodeMode parse_decode_mode(std::string_view s);
DolaBucket parse_dola_bucket(std::string_view s);
DualPathImpl parse_dual_path(std::string_view s);
PenaltyTarget parse_penalty_target(std::string_view s);

inline constexpr double kDefaultAlpha = 0.1;
inline constexpr double kDefaultRepPenalty = 1.2;
// Amateur probabilities are floored here before taking the log.
inline constexpr double kAmateurProbFloor = 1e-30;

struct DecodeConfig {
  DecodeMode mode = DecodeMode::greedy;
  double lambda = 0.0;
  double alpha = kDefaultAlpha;
  double rep_penalty = kDefaultRepPenalty;
  std::size_t max_new_tokens = 32;
  LayerSet prune_set;                        // prunecd
  DolaBucket dola_bucket = DolaBucket::upper;
  LayerSet dola_layers;                      // dola with DolaBucket::custom
  std::vector<TokenId> stop_ids;
  PenaltyTarget penalty_target = PenaltyTarget::both;
  DualPathImpl dual_path = DualPathImpl::batched;
  // false: recompute the whole prefix every step (cache exactness oracle).
  bool use_cache = true;

  void validate(const ModelConfig& model) const;
};

nlohmann::json to_json(const DecodeConfig& c);

struct StepTrace {
  std::size_t position = 0;            // index of the generated token in the full sequence
  TokenDist expert;                    // raw model output
  std::optional<TokenDist> amateur;    // raw model output
  std::vector<TokenId> plausible_set;  // ascending ids
  TokenId chosen = 0;
  std::optional<std::size_t> dola_exit_layer;
};

nlohmann::json to_json(const StepTrace& t);

struct GenerationResult {
  std::string text;
  std::vector<TokenId> prompt_tokens;
  std::vector<TokenId> tokens;  // generated, excluding a terminating stop id
  std::vector<StepTrace> traces;
};

// {i : p(i) >= alpha * max_w p(w)}, ascending. Always holds the argmax.
std::vector<TokenId> plausible_set(const TokenDist& expert, double alpha);

// log p_e(i) - lambda * log max(p_a(i), floor) for each candidate.
std::vector<double> cd_score(const TokenDist& expert, const TokenDist& amateur, double lambda,
                             std::span<const TokenId> candidates);

// Each distinct history token: positive logit / theta, otherwise * theta.
Vector apply_repetition_penalty(std::span<const float> logits, std::span<const TokenId> history,
                                double theta);

// Lower bucket [0, n/2), upper [n/2, n-1); custom uses `custom`.
LayerSet dola_candidate_layers(DolaBucket bucket, std::size_t n_layers,
                               const LayerSet& custom = {});

// Position in `per_layer` of the distribution with the largest JSD from
// `final`; the first one wins ties.
std::size_t select_dola_layer(std::span<const TokenDist> per_layer, const TokenDist& final);

struct Choice {
  std::vector<TokenId> plausible;
  TokenId token = 0;
};

// One selection step given raw expert/amateur outputs and the token history.
// A missing amateur means greedy: lambda is ignored and the expert is used.
Choice choose_token(const TokenDist& expert, const std::optional<TokenDist>& amateur,
                    std::span<const TokenId> history, const DecodeConfig& config);

class Generator {
 public:
  Generator(const Model& model, const Tokenizer& tokenizer) : model_(model), tokenizer_(tokenizer) {}

  GenerationResult generate(std::string_view prompt, const DecodeConfig& config) const;
  GenerationResult generate_ids(std::span<const TokenId> prompt, const DecodeConfig& config) const;

 private:
  const Model& model_;
  const Tokenizer& tokenizer_;
};

}  // namespace prunecd
