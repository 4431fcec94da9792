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

#include "prunecd/diagnostics.hpp"

#include <cstdio>
#include <ostream>

#include "parallel.hpp"
#include "prunecd/errors.hpp"

namespace prunecd {

using nlohmann::json;

json to_json(const DiagnosticsReport& r) {
  return json{{"entropy_full", r.entropy_full},
              {"entropy_early_exit", r.entropy_early_exit},
              {"entropy_pruned", r.entropy_pruned},
              {"overlap_early_exit", r.overlap_early_exit},
              {"overlap_pruned", r.overlap_pruned},
              {"k", r.k},
              {"sample_count", r.sample_count},
              {"exit_layer", r.exit_layer},
              {"prune_set", r.prune_set.indices()},
              {"positions_per_prompt", r.positions_per_prompt}};
}

namespace {

struct Sample {
  double h_full = 0.0, h_exit = 0.0, h_pruned = 0.0;
  double o_exit = 0.0, o_pruned = 0.0;
};

}  // namespace

DiagnosticsReport flatness_informativeness_sweep(const Model& model, const Tokenizer& tok,
                                                 std::span<const std::string> prompts,
                                                 std::size_t exit_layer,
                                                 const LayerSet& prune_set, std::size_t k,
                                                 std::size_t positions_per_prompt) {
  const ModelConfig& cfg = model.config();
  require(!prompts.empty(), "diagnostics: no prompts");
  require(positions_per_prompt >= 1, "diagnostics: need at least one position per prompt");
  if (exit_layer >= cfg.n_layers) {
    throw ContractViolation("diagnostics: exit layer " + std::to_string(exit_layer) +
                            " out of range");
  }
  prune_set.check_bounds(cfg.n_layers);
  if (k == 0 || k > cfg.vocab_size) throw ContractViolation("diagnostics: k out of range");

  const LayerSet kept = model.all_layers().without(prune_set);
  std::vector<std::vector<Sample>> per_prompt(prompts.size());
  detail::parallel_for(prompts.size(), [&](std::size_t p) {
    std::vector<TokenId> ids = tok.encode(prompts[p], tok.bos().has_value());
    if (ids.size() + positions_per_prompt - 1 > cfg.max_seq) {
      throw CapacityError("diagnostics: prompt " + std::to_string(p) + " too long");
    }
    KVCache full_cache(cfg, model.all_layers());
    KVCache exit_cache(cfg, LayerSet::range(0, exit_layer + 1));
    KVCache pruned_cache(cfg, kept);
    std::span<const TokenId> step = ids;
    for (std::size_t pos = 0; pos < positions_per_prompt; ++pos) {
      const TokenDist full = model.forward_subset(step, model.all_layers(), &full_cache);
      const TokenDist exit = model.forward_early_exit(step, exit_layer, &exit_cache);
      const TokenDist pruned = model.forward_subset(step, kept, &pruned_cache);
      Sample s;
      s.h_full = entropy(full.probs());
      s.h_exit = entropy(exit.probs());
      s.h_pruned = entropy(pruned.probs());
      s.o_exit = static_cast<double>(topk_overlap(exit.logits(), full.logits(), k));
      s.o_pruned = static_cast<double>(topk_overlap(pruned.logits(), full.logits(), k));
      per_prompt[p].push_back(s);
      ids.push_back(full.argmax());
      step = std::span<const TokenId>(ids).last(1);
    }
  });

  DiagnosticsReport r;
  r.k = k;
  r.exit_layer = exit_layer;
  r.prune_set = prune_set;
  r.positions_per_prompt = positions_per_prompt;
  for (const auto& samples : per_prompt) {
    for (const auto& s : samples) {
      r.entropy_full += s.h_full;
      r.entropy_early_exit += s.h_exit;
      r.entropy_pruned += s.h_pruned;
      r.overlap_early_exit += s.o_exit;
      r.overlap_pruned += s.o_pruned;
      ++r.sample_count;
    }
  }
  const double n = static_cast<double>(r.sample_count);
  r.entropy_full /= n;
  r.entropy_early_exit /= n;
  r.entropy_pruned /= n;
  r.overlap_early_exit /= n;
  r.overlap_pruned /= n;
  return r;
}

JsdMatrix jsd_matrix(const Model& model, const Tokenizer& tok, const std::string& prompt,
                     const DecodeConfig& config) {
  const GenerationResult gen = Generator(model, tok).generate(prompt, config);
  const std::size_t n = model.config().n_layers;
  std::vector<std::size_t> exits(n);
  for (std::size_t l = 0; l < n; ++l) exits[l] = l;

  JsdMatrix m;
  std::vector<TokenId> seq = gen.prompt_tokens;
  KVCache cache(model.config(), model.all_layers());
  std::span<const TokenId> step = seq;
  for (const auto& trace : gen.traces) {
    const ExitSweep sweep = model.forward_with_exits(step, exits, &cache);
    std::vector<double> row(n);
    for (std::size_t l = 0; l < n; ++l) row[l] = jsd(sweep.exits[l].probs(), sweep.final.probs());
    m.positions.push_back(trace.position);
    m.tokens.push_back(trace.chosen);
    m.values.push_back(std::move(row));
    seq.push_back(trace.chosen);
    step = std::span<const TokenId>(seq).last(1);
  }
  return m;
}

void write_jsd_csv(std::ostream& out, std::span<const JsdMatrix> matrices) {
  const std::size_t n = matrices.empty() || matrices[0].values.empty()
                            ? 0
                            : matrices[0].values[0].size();
  out << "prompt,position,token";
  for (std::size_t l = 0; l < n; ++l) out << ",L" << l;
  out << '\n';
  char buf[32];
  for (std::size_t p = 0; p < matrices.size(); ++p) {
    const auto& m = matrices[p];
    for (std::size_t r = 0; r < m.values.size(); ++r) {
      out << p << ',' << m.positions[r] << ',' << m.tokens[r];
      for (double v : m.values[r]) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << ',' << buf;
      }
      out << '\n';
    }
  }
}

ExitHistogram exit_layer_histogram(std::span<const JsdMatrix> matrices, const LayerSet& bucket) {
  require(!bucket.empty(), "exit histogram: empty bucket");
  ExitHistogram h;
  h.bucket = bucket;
  for (const auto& m : matrices) {
    for (const auto& row : m.values) {
      if (h.counts.empty()) h.counts.assign(row.size(), 0);
      bucket.check_bounds(row.size());
      std::size_t best = bucket.indices().front();
      for (std::size_t l : bucket) {
        if (row[l] > row[best]) best = l;
      }
      ++h.counts[best];
      ++h.total;
    }
  }
  return h;
}

json to_json(const ExitHistogram& h) {
  return json{{"bucket", h.bucket.indices()}, {"counts", h.counts}, {"total", h.total}};
}

}  // namespace prunecd
