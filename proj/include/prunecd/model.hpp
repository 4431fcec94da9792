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

// GPT-2 style pre-norm decoder that can run any ascending subset of its
// layers. Excluded layers are the identity on the residual stream; the final
// layer norm and unembedding always run.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prunecd/numerics.hpp"

namespace prunecd {

using TokenId = std::int32_t;

struct ModelConfig {
  std::size_t n_layers = 0;
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  std::size_t d_ff = 0;
  std::size_t vocab_size = 0;
  std::size_t max_seq = 0;
  bool tie_unembedding = false;

  std::size_t head_dim() const { return d_model / n_heads; }
  // Throws ValidationError when the hyperparameters are inconsistent.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  Vector ln1_g, ln1_b;
  Matrix wq, wk, wv, wo;  // [d_model x d_model], input-major
  Vector bq, bk, bv, bo;
  Vector ln2_g, ln2_b;
  Matrix w_in;  // [d_model x d_ff]
  Vector b_in;
  Matrix w_out;  // [d_ff x d_model]
  Vector b_out;

  friend bool operator==(const LayerWeights&, const LayerWeights&) = default;
};

struct Weights {
  Matrix tok_emb;  // [V x d_model]
  Matrix pos_emb;  // [max_seq x d_model]
  std::vector<LayerWeights> layers;
  Vector final_ln_g, final_ln_b;
  Matrix unemb;  // [d_model x V]; transpose of tok_emb when tied

  friend bool operator==(const Weights&, const Weights&) = default;
};

// Strictly increasing set of decoder layer indices.
class LayerSet {
 public:
  LayerSet() = default;
  // Sorts the input; duplicates are a contract violation.
  explicit LayerSet(std::vector<std::size_t> indices);

  static LayerSet full(std::size_t n_layers);
  static LayerSet range(std::size_t begin, std::size_t end);
  // Parses "6,7,9,12". Empty string is the empty set. Malformed items
  // ("6,,9", "x", "-1") throw ContractViolation.
  static LayerSet parse(std::string_view csv);

  const std::vector<std::size_t>& indices() const { return indices_; }
  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  bool contains(std::size_t layer) const;
  bool is_subset_of(const LayerSet& other) const;

  LayerSet without(const LayerSet& removed) const;
  LayerSet united(const LayerSet& other) const;

  // Throws ContractViolation unless every index < n_layers.
  void check_bounds(std::size_t n_layers) const;
  std::string to_string() const;

  auto begin() const { return indices_.begin(); }
  auto end() const { return indices_.end(); }

  friend bool operator==(const LayerSet&, const LayerSet&) = default;

 private:
  std::vector<std::size_t> indices_;
};

// Next-token distribution: raw logits plus their softmax.
class TokenDist {
 public:
  TokenDist() = default;
  explicit TokenDist(Vector logits);

  const Vector& logits() const { return logits_; }
  const Vector& probs() const { return probs_; }
  std::vector<double> log_probs() const;
  std::size_t size() const { return logits_.size(); }
  TokenId argmax() const;

 private:
  Vector logits_;
  Vector probs_;
};

enum class PathId { expert, amateur };

// Per-layer key/value rows for one decoding path. Rows are stored
// position-major ([seq][n_heads * head_dim]); head h of position t lives at
// offset t * d_model + h * head_dim.
class KVCache {
 public:
  KVCache(const ModelConfig& config, LayerSet layers, PathId path = PathId::expert);

  std::size_t length() const { return length_; }
  const LayerSet& layers() const { return layers_; }
  PathId path() const { return path_; }
  std::size_t d_model() const { return d_model_; }

  // Storage for one layer; rows beyond length() are pending until advance().
  std::vector<float>& keys(std::size_t layer) { return keys_.at(layer); }
  std::vector<float>& values(std::size_t layer) { return values_.at(layer); }
  const std::vector<float>& keys(std::size_t layer) const { return keys_.at(layer); }
  const std::vector<float>& values(std::size_t layer) const { return values_.at(layer); }

  void advance(std::size_t n_new);
  // Preallocates room for `positions` rows in every layer of the set.
  void reserve(std::size_t positions);

 private:
  LayerSet layers_;
  PathId path_;
  std::size_t d_model_;
  std::size_t length_ = 0;
  std::vector<std::vector<float>> keys_;
  std::vector<std::vector<float>> values_;
};

// Expert and amateur caches of one PruneCD generation. The pruning set is
// fixed at construction and must match every dual_path_step call.
class DualPathCache {
 public:
  DualPathCache(const ModelConfig& config, LayerSet prune_set);

  const LayerSet& prune_set() const { return prune_set_; }
  std::size_t length() const { return expert.length(); }
  // Layers below the first pruned one, where both paths coincide. The
  // amateur cache holds only the layers after it that the amateur runs.
  std::size_t shared_prefix() const { return shared_prefix_; }

  KVCache expert;
  KVCache amateur;

 private:
  LayerSet prune_set_;
  std::size_t shared_prefix_ = 0;
};

struct DualDist {
  TokenDist expert;
  TokenDist amateur;
};

struct ExitSweep {
  TokenDist final;
  std::vector<std::size_t> exit_layers;
  std::vector<TokenDist> exits;  // parallel to exit_layers
};

class Model {
 public:
  Model(ModelConfig config, Weights weights);

  const ModelConfig& config() const { return config_; }
  const Weights& weights() const { return weights_; }
  LayerSet all_layers() const { return LayerSet::full(config_.n_layers); }

  // Next-token distribution after running `tokens` through `layers`.
  // With a cache, `tokens` are appended after the cached prefix and the cache
  // must have been created for the same layer set.
  TokenDist forward_subset(std::span<const TokenId> tokens, const LayerSet& layers,
                           KVCache* cache = nullptr) const;

  // Logit-lens read-out after layer `exit_layer` (inclusive), through the
  // final norm and unembedding. The cache, if any, covers layers
  // [0, exit_layer].
  TokenDist forward_early_exit(std::span<const TokenId> tokens, std::size_t exit_layer,
                               KVCache* cache = nullptr) const;

  // Full forward that also reads out early exits at `exit_layers` from the
  // same pass. The cache, if any, covers all layers.
  ExitSweep forward_with_exits(std::span<const TokenId> tokens,
                               std::span<const std::size_t> exit_layers,
                               KVCache* cache = nullptr) const;

  // One batched pass: lane 0 runs every layer, lane 1 takes the skip
  // connection around each layer in `prune_set` (output = input).
  DualDist dual_path_step(std::span<const TokenId> tokens, const LayerSet& prune_set,
                          DualPathCache& caches) const;

  // Logits at every position of `tokens` ([T x V]), no cache.
  Matrix sequence_logits(std::span<const TokenId> tokens, const LayerSet& layers) const;

 private:
  struct Lane {
    KVCache* cache;
    const LayerSet* skipped;  // layers this lane passes through unchanged; may be null
  };

  Matrix embed(std::span<const TokenId> tokens, std::size_t pos0) const;
  void check_tokens(std::span<const TokenId> tokens, std::size_t pos0) const;
  // Runs layer `layer` over hidden rows laid out lane-major (lane b owns rows
  // [b*T, (b+1)*T)). Appends to each lane's cache but does not advance it.
  void apply_layer(std::size_t layer, Matrix& hidden, std::size_t tokens_per_lane,
                   std::span<const Lane> lanes) const;
  TokenDist read_out(std::span<const float> hidden_row) const;
  Matrix read_out_rows(const Matrix& hidden) const;

  ModelConfig config_;
  Weights weights_;
};

struct LoadedWeights {
  ModelConfig config;
  Weights weights;
};

// PCDW container: "PCDW", u32 version, u64 header length, JSON header, raw
// little-endian f32 tensor data.
LoadedWeights load_weights(const std::filesystem::path& path);
void save_weights(const std::filesystem::path& path, const ModelConfig& config,
                  const Weights& weights);
Model load_model(const std::filesystem::path& path);

// Zero-initialised weights with every shape set from `config`.
Weights make_zero_weights(const ModelConfig& config);

// Seeded N(0, 0.02) weights with unit layer-norm gains, as used for the test
// fixture. Uses its own Box-Muller transform over mt19937 so the bytes do not
// depend on the standard library's distribution implementation.
Weights make_random_weights(const ModelConfig& config, std::uint32_t seed, float stddev = 0.02f);

// 8 layers, d_model 64, 4 heads, d_ff 256, byte-level vocab 259, max_seq 512.
ModelConfig tiny_config();

}  // namespace prunecd
