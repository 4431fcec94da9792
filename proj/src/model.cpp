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

#include "prunecd/model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <optional>

#include "prunecd/errors.hpp"

namespace prunecd {

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  if (n_layers < 1) throw ValidationError("config: n_layers must be >= 1");
  if (vocab_size < 2) throw ValidationError("config: vocab_size must be >= 2");
  if (n_heads < 1 || d_model == 0 || d_model % n_heads != 0) {
    throw ValidationError("config: d_model (" + std::to_string(d_model) +
                          ") must be a positive multiple of n_heads (" +
                          std::to_string(n_heads) + ")");
  }
  if (d_ff < 1) throw ValidationError("config: d_ff must be >= 1");
  if (max_seq < 1) throw ValidationError("config: max_seq must be >= 1");
}

ModelConfig tiny_config() {
  ModelConfig c;
  c.n_layers = 8;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_ff = 256;
  c.vocab_size = 259;
  c.max_seq = 512;
  c.tie_unembedding = false;
  return c;
}

// ---------------------------------------------------------------------------
// LayerSet

LayerSet::LayerSet(std::vector<std::size_t> indices) : indices_(std::move(indices)) {
  std::sort(indices_.begin(), indices_.end());
  if (std::adjacent_find(indices_.begin(), indices_.end()) != indices_.end()) {
    throw ContractViolation("LayerSet: duplicate layer index");
  }
}

LayerSet LayerSet::full(std::size_t n_layers) { return range(0, n_layers); }

LayerSet LayerSet::range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) idx.push_back(i);
  return LayerSet(std::move(idx));
}

LayerSet LayerSet::parse(std::string_view csv) {
  std::vector<std::size_t> idx;
  if (csv.empty()) return LayerSet{};
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = csv.find(',', start);
    const std::string_view item =
        csv.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    std::size_t value = 0;
    const auto* first = item.data();
    const auto* last = item.data() + item.size();
    const auto res = std::from_chars(first, last, value);
    if (item.empty() || res.ec != std::errc{} || res.ptr != last) {
      throw ContractViolation("malformed layer list \"" + std::string(csv) + "\"");
    }
    idx.push_back(value);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return LayerSet(std::move(idx));
}

bool LayerSet::contains(std::size_t layer) const {
  return std::binary_search(indices_.begin(), indices_.end(), layer);
}

bool LayerSet::is_subset_of(const LayerSet& other) const {
  return std::includes(other.indices_.begin(), other.indices_.end(), indices_.begin(),
                       indices_.end());
}

LayerSet LayerSet::without(const LayerSet& removed) const {
  std::vector<std::size_t> out;
  std::set_difference(indices_.begin(), indices_.end(), removed.indices_.begin(),
                      removed.indices_.end(), std::back_inserter(out));
  return LayerSet(std::move(out));
}

LayerSet LayerSet::united(const LayerSet& other) const {
  std::vector<std::size_t> out;
  std::set_union(indices_.begin(), indices_.end(), other.indices_.begin(), other.indices_.end(),
                 std::back_inserter(out));
  return LayerSet(std::move(out));
}

void LayerSet::check_bounds(std::size_t n_layers) const {
  if (!indices_.empty() && indices_.back() >= n_layers) {
    throw ContractViolation("layer index " + std::to_string(indices_.back()) +
                            " out of range for a " + std::to_string(n_layers) + "-layer model");
  }
}

std::string LayerSet::to_string() const {
  std::string s;
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(indices_[i]);
  }
  return s;
}

// ---------------------------------------------------------------------------
// TokenDist

TokenDist::TokenDist(Vector logits) : logits_(std::move(logits)), probs_(softmax(logits_)) {}

std::vector<double> TokenDist::log_probs() const { return log_softmax(logits_); }

TokenId TokenDist::argmax() const { return static_cast<TokenId>(prunecd::argmax(logits_)); }

// ---------------------------------------------------------------------------
// Caches

KVCache::KVCache(const ModelConfig& config, LayerSet layers, PathId path)
    : layers_(std::move(layers)),
      path_(path),
      d_model_(config.d_model),
      keys_(config.n_layers),
      values_(config.n_layers) {
  layers_.check_bounds(config.n_layers);
}

void KVCache::advance(std::size_t n_new) {
  const std::size_t next = length_ + n_new;
  for (std::size_t l : layers_) {
    if (keys_[l].size() != next * d_model_ || values_[l].size() != next * d_model_) {
      throw ContractViolation("KVCache: inconsistent sequence length at layer " +
                              std::to_string(l));
    }
  }
  length_ = next;
}

void KVCache::reserve(std::size_t positions) {
  for (std::size_t l : layers_) {
    keys_[l].reserve(positions * d_model_);
    values_[l].reserve(positions * d_model_);
  }
}

namespace {

std::size_t first_pruned(const ModelConfig& config, const LayerSet& prune_set) {
  return prune_set.empty() ? config.n_layers
                           : std::min(prune_set.indices().front(), config.n_layers);
}

}  // namespace

DualPathCache::DualPathCache(const ModelConfig& config, LayerSet prune_set)
    : expert(config, LayerSet::full(config.n_layers), PathId::expert),
      amateur(config,
              LayerSet::range(first_pruned(config, prune_set), config.n_layers).without(prune_set),
              PathId::amateur),
      prune_set_(std::move(prune_set)),
      shared_prefix_(first_pruned(config, prune_set_)) {
  prune_set_.check_bounds(config.n_layers);
}

// ---------------------------------------------------------------------------
// Model

namespace {

void check_shape(const std::string& name, const Matrix& m, std::size_t rows, std::size_t cols) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ValidationError("tensor " + name + ": shape [" + std::to_string(m.rows()) + "," +
                          std::to_string(m.cols()) + "], expected [" + std::to_string(rows) +
                          "," + std::to_string(cols) + "]");
  }
}

void check_len(const std::string& name, const Vector& v, std::size_t n) {
  if (v.size() != n) {
    throw ValidationError("tensor " + name + ": length " + std::to_string(v.size()) +
                          ", expected " + std::to_string(n));
  }
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) t(c, r) = m(r, c);
  }
  return t;
}

// Attention work (query rows x heads x keys x head_dim) below which the
// kernel stays on the calling thread.
constexpr std::size_t kAttentionParallelWork = std::size_t{1} << 15;

}  // namespace

Model::Model(ModelConfig config, Weights weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  config_.validate();
  const std::size_t d = config_.d_model;
  const std::size_t V = config_.vocab_size;
  if (config_.tie_unembedding && weights_.unemb.size() == 0) {
    weights_.unemb = transpose(weights_.tok_emb);
  }
  check_shape("tok_emb", weights_.tok_emb, V, d);
  check_shape("pos_emb", weights_.pos_emb, config_.max_seq, d);
  if (weights_.layers.size() != config_.n_layers) {
    throw ValidationError("weights: " + std::to_string(weights_.layers.size()) +
                          " layers, config says " + std::to_string(config_.n_layers));
  }
  for (std::size_t i = 0; i < weights_.layers.size(); ++i) {
    const auto& L = weights_.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    check_len(p + "ln1.g", L.ln1_g, d);
    check_len(p + "ln1.b", L.ln1_b, d);
    check_shape(p + "attn.wq", L.wq, d, d);
    check_shape(p + "attn.wk", L.wk, d, d);
    check_shape(p + "attn.wv", L.wv, d, d);
    check_shape(p + "attn.wo", L.wo, d, d);
    check_len(p + "attn.bq", L.bq, d);
    check_len(p + "attn.bk", L.bk, d);
    check_len(p + "attn.bv", L.bv, d);
    check_len(p + "attn.bo", L.bo, d);
    check_len(p + "ln2.g", L.ln2_g, d);
    check_len(p + "ln2.b", L.ln2_b, d);
    check_shape(p + "mlp.w_in", L.w_in, d, config_.d_ff);
    check_len(p + "mlp.b_in", L.b_in, config_.d_ff);
    check_shape(p + "mlp.w_out", L.w_out, config_.d_ff, d);
    check_len(p + "mlp.b_out", L.b_out, d);
  }
  check_len("final_ln.g", weights_.final_ln_g, d);
  check_len("final_ln.b", weights_.final_ln_b, d);
  check_shape("unemb", weights_.unemb, d, V);
}

void Model::check_tokens(std::span<const TokenId> tokens, std::size_t pos0) const {
  require(!tokens.empty(), "forward: empty token sequence");
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
      throw ContractViolation("forward: token id " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(config_.vocab_size));
    }
  }
  if (pos0 + tokens.size() > config_.max_seq) {
    throw CapacityError("forward: sequence length " + std::to_string(pos0 + tokens.size()) +
                        " exceeds max_seq " + std::to_string(config_.max_seq));
  }
}

Matrix Model::embed(std::span<const TokenId> tokens, std::size_t pos0) const {
  const std::size_t d = config_.d_model;
  Matrix h(tokens.size(), d);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto te = weights_.tok_emb.row(static_cast<std::size_t>(tokens[t]));
    const auto pe = weights_.pos_emb.row(pos0 + t);
    auto out = h.row(t);
    for (std::size_t j = 0; j < d; ++j) out[j] = te[j] + pe[j];
  }
  return h;
}

void Model::apply_layer(std::size_t layer, Matrix& hidden, std::size_t T,
                        std::span<const Lane> lanes) const {
  const LayerWeights& w = weights_.layers[layer];
  const std::size_t d = config_.d_model;
  const std::size_t H = config_.n_heads;
  const std::size_t hd = config_.head_dim();
  const std::size_t B = lanes.size();

  // A lane that skips this layer keeps its rows unchanged, so only the
  // remaining lanes are gathered and run.
  std::vector<std::size_t> active;
  for (std::size_t b = 0; b < B; ++b) {
    if (!(lanes[b].skipped && lanes[b].skipped->contains(layer))) active.push_back(b);
  }
  if (active.size() < B) {
    if (active.empty()) return;
    Matrix sub(active.size() * T, d);
    std::vector<Lane> sub_lanes;
    for (std::size_t i = 0; i < active.size(); ++i) {
      const auto src = hidden.data().subspan(active[i] * T * d, T * d);
      std::copy(src.begin(), src.end(),
                sub.data().begin() + static_cast<std::ptrdiff_t>(i * T * d));
      sub_lanes.push_back({lanes[active[i]].cache, nullptr});
    }
    apply_layer(layer, sub, T, sub_lanes);
    for (std::size_t i = 0; i < active.size(); ++i) {
      const auto src = sub.data().subspan(i * T * d, T * d);
      std::copy(src.begin(), src.end(),
                hidden.data().begin() + static_cast<std::ptrdiff_t>(active[i] * T * d));
    }
    return;
  }

  const Matrix x = layer_norm_rows(hidden, w.ln1_g, w.ln1_b);
  const Matrix q = linear(x, w.wq, w.bq);
  const Matrix k = linear(x, w.wk, w.bk);
  const Matrix v = linear(x, w.wv, w.bv);

  std::vector<std::size_t> pos0(B);
  for (std::size_t b = 0; b < B; ++b) {
    KVCache& cache = *lanes[b].cache;
    pos0[b] = cache.length();
    const auto kb = k.data().subspan(b * T * d, T * d);
    const auto vb = v.data().subspan(b * T * d, T * d);
    cache.keys(layer).insert(cache.keys(layer).end(), kb.begin(), kb.end());
    cache.values(layer).insert(cache.values(layer).end(), vb.begin(), vb.end());
  }

  Matrix attn(B * T, d);
  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  const long total = static_cast<long>(B * T * H);
  const bool parallel =
      static_cast<std::size_t>(total) * (pos0.back() + T) * hd >= kAttentionParallelWork;
#pragma omp parallel if (parallel)
  {
    // Per-thread scratch. Masked positions (after the query) are never
    // scored; they would only add exact zeros to the softmax sum.
    std::vector<float> scores;
    std::vector<double> e;
#pragma omp for schedule(static)
    for (long idx = 0; idx < total; ++idx) {
      const std::size_t b = static_cast<std::size_t>(idx) / (T * H);
      const std::size_t t = (static_cast<std::size_t>(idx) / H) % T;
      const std::size_t h = static_cast<std::size_t>(idx) % H;
      const KVCache& cache = *lanes[b].cache;
      const float* K = cache.keys(layer).data();
      const float* Vv = cache.values(layer).data();
      const std::size_t visible = pos0[b] + t + 1;
      const float* qrow = q.row(b * T + t).data() + h * hd;

      scores.resize(visible);
      e.resize(visible);
      // Four keys at a time: independent add chains, each summed in order.
      std::size_t j = 0;
      for (; j + 4 <= visible; j += 4) {
        const float* k0 = K + j * d + h * hd;
        const float* k1 = k0 + d;
        const float* k2 = k1 + d;
        const float* k3 = k2 + d;
        float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
        for (std::size_t x = 0; x < hd; ++x) {
          s0 += qrow[x] * k0[x];
          s1 += qrow[x] * k1[x];
          s2 += qrow[x] * k2[x];
          s3 += qrow[x] * k3[x];
        }
        scores[j] = s0 * scale;
        scores[j + 1] = s1 * scale;
        scores[j + 2] = s2 * scale;
        scores[j + 3] = s3 * scale;
      }
      for (; j < visible; ++j) {
        const float* krow = K + j * d + h * hd;
        float dot = 0.0f;
        for (std::size_t x = 0; x < hd; ++x) dot += qrow[x] * krow[x];
        scores[j] = dot * scale;
      }
      // Same arithmetic as softmax(): double exponentials and sum.
      const double m = *std::max_element(scores.begin(), scores.end());
      double sum = 0.0;
      for (std::size_t j = 0; j < visible; ++j) {
        e[j] = std::exp(static_cast<double>(scores[j]) - m);
        sum += e[j];
      }
      float* out = attn.row(b * T + t).data() + h * hd;
      for (std::size_t j = 0; j < visible; ++j) {
        const float pj = static_cast<float>(e[j] / sum);
        const float* vrow = Vv + j * d + h * hd;
        for (std::size_t x = 0; x < hd; ++x) out[x] += pj * vrow[x];
      }
    }
  }

  const Matrix proj = linear(attn, w.wo, w.bo);
  add_inplace(hidden.data(), proj.data());

  const Matrix x2 = layer_norm_rows(hidden, w.ln2_g, w.ln2_b);
  Matrix ff = linear(x2, w.w_in, w.b_in);
  gelu_inplace(ff.data());
  const Matrix ff_out = linear(ff, w.w_out, w.b_out);
  add_inplace(hidden.data(), ff_out.data());
}

Matrix Model::read_out_rows(const Matrix& hidden) const {
  const Matrix normed = layer_norm_rows(hidden, weights_.final_ln_g, weights_.final_ln_b);
  return linear(normed, weights_.unemb, {});
}

TokenDist Model::read_out(std::span<const float> hidden_row) const {
  Matrix h(1, hidden_row.size(), Vector(hidden_row.begin(), hidden_row.end()));
  Matrix logits = read_out_rows(h);
  const auto row = logits.row(0);
  return TokenDist(Vector(row.begin(), row.end()));
}

TokenDist Model::forward_subset(std::span<const TokenId> tokens, const LayerSet& layers,
                                KVCache* cache) const {
  layers.check_bounds(config_.n_layers);
  std::optional<KVCache> local;
  if (cache == nullptr) {
    local.emplace(config_, layers);
    cache = &*local;
  } else if (!(cache->layers() == layers)) {
    throw ContractViolation("forward_subset: cache was built for layers {" +
                            cache->layers().to_string() + "}, called with {" + layers.to_string() +
                            "}");
  }
  const std::size_t pos0 = cache->length();
  check_tokens(tokens, pos0);
  Matrix hidden = embed(tokens, pos0);
  const Lane lane{cache, nullptr};
  for (std::size_t l : layers) apply_layer(l, hidden, tokens.size(), {&lane, 1});
  cache->advance(tokens.size());
  return read_out(hidden.row(tokens.size() - 1));
}

TokenDist Model::forward_early_exit(std::span<const TokenId> tokens, std::size_t exit_layer,
                                   KVCache* cache) const {
  if (exit_layer >= config_.n_layers) {
    throw ContractViolation("forward_early_exit: exit layer " + std::to_string(exit_layer) +
                            " out of range for a " + std::to_string(config_.n_layers) +
                            "-layer model");
  }
  return forward_subset(tokens, LayerSet::range(0, exit_layer + 1), cache);
}

ExitSweep Model::forward_with_exits(std::span<const TokenId> tokens,
                                    std::span<const std::size_t> exit_layers,
                                    KVCache* cache) const {
  const LayerSet all = all_layers();
  for (std::size_t l : exit_layers) {
    if (l >= config_.n_layers) {
      throw ContractViolation("forward_with_exits: exit layer " + std::to_string(l) +
                              " out of range");
    }
  }
  std::optional<KVCache> local;
  if (cache == nullptr) {
    local.emplace(config_, all);
    cache = &*local;
  } else if (!(cache->layers() == all)) {
    throw ContractViolation("forward_with_exits: cache must cover every layer");
  }
  const std::size_t pos0 = cache->length();
  check_tokens(tokens, pos0);
  const std::size_t T = tokens.size();
  Matrix hidden = embed(tokens, pos0);
  const Lane lane{cache, nullptr};

  std::vector<Vector> captured(config_.n_layers);
  std::vector<bool> wanted(config_.n_layers, false);
  for (std::size_t l : exit_layers) wanted[l] = true;
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    apply_layer(l, hidden, T, {&lane, 1});
    if (wanted[l]) {
      const auto row = hidden.row(T - 1);
      captured[l].assign(row.begin(), row.end());
    }
  }
  cache->advance(T);

  ExitSweep sweep;
  sweep.final = read_out(hidden.row(T - 1));
  sweep.exit_layers.assign(exit_layers.begin(), exit_layers.end());
  for (std::size_t l : exit_layers) sweep.exits.push_back(read_out(captured[l]));
  return sweep;
}

DualDist Model::dual_path_step(std::span<const TokenId> tokens, const LayerSet& prune_set,
                               DualPathCache& caches) const {
  if (!(prune_set == caches.prune_set())) {
    throw ContractViolation("dual_path_step: prune set {" + prune_set.to_string() +
                            "} differs from the set the caches were built with {" +
                            caches.prune_set().to_string() + "}");
  }
  prune_set.check_bounds(config_.n_layers);
  if (caches.expert.length() != caches.amateur.length()) {
    throw ContractViolation("dual_path_step: expert and amateur caches out of step");
  }
  const std::size_t pos0 = caches.expert.length();
  check_tokens(tokens, pos0);
  const std::size_t T = tokens.size();
  const std::size_t d = config_.d_model;

  // Both lanes are identical up to the first pruned layer, so that prefix
  // runs once on the expert lane and is then copied into the amateur lane.
  const std::size_t shared = caches.shared_prefix();
  Matrix single = embed(tokens, pos0);
  const Lane expert_lane{&caches.expert, nullptr};
  for (std::size_t l = 0; l < shared; ++l) apply_layer(l, single, T, {&expert_lane, 1});

  Matrix last(2, d);
  if (shared == config_.n_layers) {
    caches.expert.advance(T);
    caches.amateur.advance(T);
    std::copy_n(single.row(T - 1).begin(), d, last.row(0).begin());
    std::copy_n(single.row(T - 1).begin(), d, last.row(1).begin());
  } else {
    Matrix hidden(2 * T, d);
    std::copy(single.data().begin(), single.data().end(), hidden.data().begin());
    std::copy(single.data().begin(), single.data().end(),
              hidden.data().begin() + static_cast<std::ptrdiff_t>(T * d));
    const Lane lanes[2] = {{&caches.expert, nullptr}, {&caches.amateur, &prune_set}};
    for (std::size_t l = shared; l < config_.n_layers; ++l) apply_layer(l, hidden, T, lanes);
    caches.expert.advance(T);
    caches.amateur.advance(T);
    std::copy_n(hidden.row(T - 1).begin(), d, last.row(0).begin());
    std::copy_n(hidden.row(2 * T - 1).begin(), d, last.row(1).begin());
  }

  // Read out the last position of both lanes in one batched unembedding.
  const Matrix logits = read_out_rows(last);
  return DualDist{TokenDist(Vector(logits.row(0).begin(), logits.row(0).end())),
                  TokenDist(Vector(logits.row(1).begin(), logits.row(1).end()))};
}

Matrix Model::sequence_logits(std::span<const TokenId> tokens, const LayerSet& layers) const {
  layers.check_bounds(config_.n_layers);
  KVCache cache(config_, layers);
  check_tokens(tokens, 0);
  Matrix hidden = embed(tokens, 0);
  const Lane lane{&cache, nullptr};
  for (std::size_t l : layers) apply_layer(l, hidden, tokens.size(), {&lane, 1});
  return read_out_rows(hidden);
}

}  // namespace prunecd
