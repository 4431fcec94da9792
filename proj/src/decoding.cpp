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

#include "prunecd/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <set>

#include "prunecd/divergence.hpp"
#include "prunecd/errors.hpp"

namespace prunecd {

// ---------------------------------------------------------------------------
// Enum names

std::string to_string(DecodeMode m) {
  switch (m) {
    case DecodeMode::greedy: return "greedy";
    case DecodeMode::dola: return "dola";
    case DecodeMode::prunecd: return "prunecd";
  }
  return "?";
}

std::string to_string(DolaBucket b) {
  switch (b) {
    case DolaBucket::lower: return "lower";
    case DolaBucket::upper: return "upper";
    case DolaBucket::custom: return "custom";
  }
  return "?";
}

std::string to_string(DualPathImpl d) {
  return d == DualPathImpl::batched ? "batched" : "sequential";
}

std::string to_string(PenaltyTarget p) {
  return p == PenaltyTarget::both ? "both" : "expert";
}

DecodeMode parse_decode_mode(std::string_view s) {
  if (s == "greedy") return DecodeMode::greedy;
  if (s == "dola") return DecodeMode::dola;
  if (s == "prunecd") return DecodeMode::prunecd;
  throw ContractViolation("unknown decode mode \"" + std::string(s) + "\"");
}

DolaBucket parse_dola_bucket(std::string_view s) {
  if (s == "lower") return DolaBucket::lower;
  if (s == "upper") return DolaBucket::upper;
  if (s == "custom") return DolaBucket::custom;
  throw ContractViolation("unknown DoLa bucket \"" + std::string(s) + "\"");
}

DualPathImpl parse_dual_path(std::string_view s) {
  if (s == "batched") return DualPathImpl::batched;
  if (s == "sequential") return DualPathImpl::sequential;
  throw ContractViolation("unknown dual-path implementation \"" + std::string(s) + "\"");
}

PenaltyTarget parse_penalty_target(std::string_view s) {
  if (s == "both") return PenaltyTarget::both;
  if (s == "expert") return PenaltyTarget::expert_only;
  throw ContractViolation("unknown penalty target \"" + std::string(s) + "\"");
}

// ---------------------------------------------------------------------------
// Config

void DecodeConfig::validate(const ModelConfig& model) const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ContractViolation("alpha must lie in (0, 1]");
  if (!(rep_penalty >= 1.0)) throw ContractViolation("repetition penalty must be >= 1");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ContractViolation("lambda must be a finite value >= 0");
  }
  if (max_new_tokens == 0) throw ContractViolation("max_new_tokens must be >= 1");
  if (mode == DecodeMode::prunecd) prune_set.check_bounds(model.n_layers);
  if (mode == DecodeMode::dola) {
    const LayerSet bucket = dola_candidate_layers(dola_bucket, model.n_layers, dola_layers);
    if (bucket.empty()) throw ContractViolation("DoLa bucket is empty for this model");
  }
}

nlohmann::json to_json(const DecodeConfig& c) {
  nlohmann::json j{{"mode", to_string(c.mode)},
                   {"lambda", c.lambda},
                   {"alpha", c.alpha},
                   {"rep_penalty", c.rep_penalty},
                   {"max_new_tokens", c.max_new_tokens},
                   {"stop_ids", c.stop_ids},
                   {"penalty_target", to_string(c.penalty_target)},
                   {"use_cache", c.use_cache}};
  if (c.mode == DecodeMode::prunecd) {
    j["prune_set"] = c.prune_set.indices();
    j["dual_path"] = to_string(c.dual_path);
  }
  if (c.mode == DecodeMode::dola) {
    j["dola_bucket"] = to_string(c.dola_bucket);
    if (c.dola_bucket == DolaBucket::custom) j["dola_layers"] = c.dola_layers.indices();
  }
  return j;
}

nlohmann::json to_json(const StepTrace& t) {
  nlohmann::json j{{"position", t.position},
                   {"chosen", t.chosen},
                   {"plausible_set", t.plausible_set},
                   {"expert_logits", t.expert.logits()}};
  if (t.amateur) j["amateur_logits"] = t.amateur->logits();
  if (t.dola_exit_layer) j["dola_exit_layer"] = *t.dola_exit_layer;
  return j;
}

// ---------------------------------------------------------------------------
// Strategy functions

std::vector<TokenId> plausible_set(const TokenDist& expert, double alpha) {
  const auto& p = expert.probs();
  const float pmax = *std::max_element(p.begin(), p.end());
  const double cut = alpha * static_cast<double>(pmax);
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (static_cast<double>(p[i]) >= cut) out.push_back(static_cast<TokenId>(i));
  }
  return out;
}

std::vector<double> cd_score(const TokenDist& expert, const TokenDist& amateur, double lambda,
                             std::span<const TokenId> candidates) {
  require(!candidates.empty(), "cd_score: empty candidate set");
  require(expert.size() == amateur.size(), "cd_score: vocabulary mismatch");
  const auto le = expert.log_probs();
  const auto la = amateur.log_probs();
  const double floor = std::log(kAmateurProbFloor);
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (TokenId id : candidates) {
    const auto i = static_cast<std::size_t>(id);
    require(i < le.size(), "cd_score: candidate outside vocabulary");
    scores.push_back(le[i] - lambda * std::max(la[i], floor));
  }
  return scores;
}

Vector apply_repetition_penalty(std::span<const float> logits, std::span<const TokenId> history,
                                double theta) {
  Vector out(logits.begin(), logits.end());
  if (theta == 1.0) return out;
  const auto t = static_cast<float>(theta);
  std::vector<bool> seen(out.size(), false);
  for (TokenId id : history) {
    if (id < 0 || static_cast<std::size_t>(id) >= out.size()) continue;
    const auto i = static_cast<std::size_t>(id);
    if (seen[i]) continue;
    seen[i] = true;
    out[i] = out[i] > 0.0f ? out[i] / t : out[i] * t;
  }
  return out;
}

LayerSet dola_candidate_layers(DolaBucket bucket, std::size_t n_layers, const LayerSet& custom) {
  switch (bucket) {
    case DolaBucket::lower: return LayerSet::range(0, n_layers / 2);
    case DolaBucket::upper: return LayerSet::range(n_layers / 2, n_layers - 1);
    case DolaBucket::custom: custom.check_bounds(n_layers); return custom;
  }
  return {};
}

std::size_t select_dola_layer(std::span<const TokenDist> per_layer, const TokenDist& final) {
  require(!per_layer.empty(), "select_dola_layer: empty bucket");
  std::size_t best = 0;
  double best_jsd = -1.0;
  for (std::size_t i = 0; i < per_layer.size(); ++i) {
    const double d = jsd(per_layer[i].probs(), final.probs());
    if (d > best_jsd) {
      best_jsd = d;
      best = i;
    }
  }
  return best;
}

Choice choose_token(const TokenDist& expert, const std::optional<TokenDist>& amateur,
                    std::span<const TokenId> history, const DecodeConfig& config) {
  const TokenDist penalized(apply_repetition_penalty(expert.logits(), history, config.rep_penalty));
  Choice choice;
  choice.plausible = plausible_set(penalized, config.alpha);

  std::vector<double> scores;
  if (amateur) {
    const TokenDist contrast =
        config.penalty_target == PenaltyTarget::both
            ? TokenDist(apply_repetition_penalty(amateur->logits(), history, config.rep_penalty))
            : *amateur;
    scores = cd_score(penalized, contrast, config.lambda, choice.plausible);
  } else {
    scores = cd_score(penalized, penalized, 0.0, choice.plausible);
  }
  choice.token = choice.plausible[argmax(std::span<const double>(scores))];
  return choice;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

struct StepOutput {
  TokenDist expert;
  std::optional<TokenDist> amateur;
  std::optional<std::size_t> exit_layer;
};

// Produces the model outputs for the next position. `sequence` is the full
// token history; the last `n_new` entries have not been fed yet.
class PathRunner {
 public:
  virtual ~PathRunner() = default;
  virtual StepOutput step(std::span<const TokenId> sequence, std::size_t n_new) = 0;
  // Sizes the caches for a whole generation up front.
  virtual void reserve(std::size_t positions) = 0;
};

class GreedyRunner final : public PathRunner {
 public:
  GreedyRunner(const Model& m, bool use_cache) : model_(m), use_cache_(use_cache) {
    if (use_cache_) cache_.emplace(m.config(), m.all_layers());
  }
  StepOutput step(std::span<const TokenId> seq, std::size_t n_new) override {
    if (!use_cache_) return {model_.forward_subset(seq, model_.all_layers()), {}, {}};
    return {model_.forward_subset(seq.last(n_new), model_.all_layers(), &*cache_), {}, {}};
  }
  void reserve(std::size_t positions) override {
    if (cache_) cache_->reserve(positions);
  }

 private:
  const Model& model_;
  bool use_cache_;
  std::optional<KVCache> cache_;
};

class BatchedPruneRunner final : public PathRunner {
 public:
  BatchedPruneRunner(const Model& m, LayerSet prune, bool use_cache)
      : model_(m), prune_(std::move(prune)), use_cache_(use_cache), caches_(m.config(), prune_) {}
  StepOutput step(std::span<const TokenId> seq, std::size_t n_new) override {
    if (!use_cache_) {
      DualPathCache fresh(model_.config(), prune_);
      DualDist d = model_.dual_path_step(seq, prune_, fresh);
      return {std::move(d.expert), std::move(d.amateur), {}};
    }
    DualDist d = model_.dual_path_step(seq.last(n_new), prune_, caches_);
    return {std::move(d.expert), std::move(d.amateur), {}};
  }
  void reserve(std::size_t positions) override {
    if (!use_cache_) return;
    caches_.expert.reserve(positions);
    caches_.amateur.reserve(positions);
  }

 private:
  const Model& model_;
  LayerSet prune_;
  bool use_cache_;
  DualPathCache caches_;
};

class SequentialPruneRunner final : public PathRunner {
 public:
  SequentialPruneRunner(const Model& m, const LayerSet& prune, bool use_cache)
      : model_(m),
        expert_layers_(m.all_layers()),
        amateur_layers_(m.all_layers().without(prune)),
        use_cache_(use_cache),
        expert_cache_(m.config(), expert_layers_, PathId::expert),
        amateur_cache_(m.config(), amateur_layers_, PathId::amateur) {}
  StepOutput step(std::span<const TokenId> seq, std::size_t n_new) override {
    if (!use_cache_) {
      return {model_.forward_subset(seq, expert_layers_),
              model_.forward_subset(seq, amateur_layers_), {}};
    }
    const auto fresh = seq.last(n_new);
    TokenDist e = model_.forward_subset(fresh, expert_layers_, &expert_cache_);
    TokenDist a = model_.forward_subset(fresh, amateur_layers_, &amateur_cache_);
    return {std::move(e), std::move(a), {}};
  }
  void reserve(std::size_t positions) override {
    if (!use_cache_) return;
    expert_cache_.reserve(positions);
    amateur_cache_.reserve(positions);
  }

 private:
  const Model& model_;
  LayerSet expert_layers_;
  LayerSet amateur_layers_;
  bool use_cache_;
  KVCache expert_cache_;
  KVCache amateur_cache_;
};

class DolaRunner final : public PathRunner {
 public:
  DolaRunner(const Model& m, const LayerSet& bucket, bool use_cache)
      : model_(m), bucket_(bucket.indices()), use_cache_(use_cache) {
    if (use_cache_) cache_.emplace(m.config(), m.all_layers());
  }
  StepOutput step(std::span<const TokenId> seq, std::size_t n_new) override {
    ExitSweep sweep = use_cache_ ? model_.forward_with_exits(seq.last(n_new), bucket_, &*cache_)
                                 : model_.forward_with_exits(seq, bucket_);
    const std::size_t pick = select_dola_layer(sweep.exits, sweep.final);
    return {std::move(sweep.final), std::move(sweep.exits[pick]), bucket_[pick]};
  }
  void reserve(std::size_t positions) override {
    if (cache_) cache_->reserve(positions);
  }

 private:
  const Model& model_;
  std::vector<std::size_t> bucket_;
  bool use_cache_;
  std::optional<KVCache> cache_;
};

std::unique_ptr<PathRunner> make_runner(const Model& model, const DecodeConfig& c) {
  switch (c.mode) {
    case DecodeMode::greedy: return std::make_unique<GreedyRunner>(model, c.use_cache);
    case DecodeMode::prunecd:
      if (c.dual_path == DualPathImpl::batched) {
        return std::make_unique<BatchedPruneRunner>(model, c.prune_set, c.use_cache);
      }
      return std::make_unique<SequentialPruneRunner>(model, c.prune_set, c.use_cache);
    case DecodeMode::dola:
      return std::make_unique<DolaRunner>(
          model, dola_candidate_layers(c.dola_bucket, model.config().n_layers, c.dola_layers),
          c.use_cache);
  }
  throw ContractViolation("unhandled decode mode");
}

}  // namespace

GenerationResult Generator::generate(std::string_view prompt, const DecodeConfig& config) const {
  const auto ids = tokenizer_.encode(prompt, tokenizer_.bos().has_value());
  return generate_ids(ids, config);
}

GenerationResult Generator::generate_ids(std::span<const TokenId> prompt,
                                         const DecodeConfig& config) const {
  config.validate(model_.config());
  require(!prompt.empty(), "generate: empty prompt");
  if (prompt.size() + config.max_new_tokens > model_.config().max_seq) {
    throw CapacityError("generate: prompt of " + std::to_string(prompt.size()) +
                        " tokens plus " + std::to_string(config.max_new_tokens) +
                        " new tokens exceeds max_seq " + std::to_string(model_.config().max_seq));
  }
  const std::set<TokenId> stops(config.stop_ids.begin(), config.stop_ids.end());

  GenerationResult result;
  result.prompt_tokens.assign(prompt.begin(), prompt.end());
  std::vector<TokenId> sequence = result.prompt_tokens;
  auto runner = make_runner(model_, config);
  runner->reserve(prompt.size() + config.max_new_tokens);

  std::size_t n_new = sequence.size();
  for (std::size_t step = 0; step < config.max_new_tokens; ++step) {
    StepOutput out = runner->step(sequence, n_new);
    const std::optional<TokenDist> contrast =
        config.mode == DecodeMode::greedy ? std::nullopt : out.amateur;
    Choice choice = choose_token(out.expert, contrast, sequence, config);

    StepTrace trace;
    trace.position = sequence.size();
    trace.expert = std::move(out.expert);
    trace.amateur = std::move(out.amateur);
    trace.plausible_set = std::move(choice.plausible);
    trace.chosen = choice.token;
    trace.dola_exit_layer = out.exit_layer;
    result.traces.push_back(std::move(trace));

    if (stops.contains(choice.token)) break;
    sequence.push_back(choice.token);
    result.tokens.push_back(choice.token);
    n_new = 1;
  }
  result.text = tokenizer_.decode(result.tokens);
  return result;
}

}  // namespace prunecd
