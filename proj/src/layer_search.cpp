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

#include "prunecd/layer_search.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "parallel.hpp"
#include "prunecd/errors.hpp"

namespace prunecd {

using nlohmann::json;

double mc1_score(const Model& model, const Tokenizer& tok, std::span<const McItem> items,
                 const LayerSet& layers, OptionScoring scoring) {
  require(!items.empty(), "mc1_score: no items");
  for (const auto& item : items) {
    require(item.options.size() >= 2, "mc1_score: every item needs at least two options");
  }
  const auto scores = score_options(model, tok, items, layers, scoring);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < items.size(); ++i) correct += mc1_correct(items[i], scores[i]);
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

std::vector<AblationRecord> single_layer_ablation(const Model& model, const Tokenizer& tok,
                                                  std::span<const McItem> items,
                                                  const LayerSet& candidates,
                                                  OptionScoring scoring) {
  require(!candidates.empty(), "single_layer_ablation: no candidate layers");
  candidates.check_bounds(model.config().n_layers);
  const LayerSet all = model.all_layers();
  const double full = mc1_score(model, tok, items, all, scoring);

  const auto& layers = candidates.indices();
  std::vector<AblationRecord> records(layers.size());
  detail::parallel_for(layers.size(), [&](std::size_t i) {
    const double ablated =
        mc1_score(model, tok, items, all.without(LayerSet({layers[i]})), scoring);
    records[i] = AblationRecord{layers[i], full, ablated, full - ablated};
  });
  return records;
}

LayerSet select_pruning_set(std::span<const AblationRecord> records, std::size_t k) {
  if (k > records.size()) {
    throw ContractViolation("select_pruning_set: k=" + std::to_string(k) + " exceeds " +
                            std::to_string(records.size()) + " records");
  }
  std::vector<AblationRecord> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(), [](const AblationRecord& a, const AblationRecord& b) {
    return a.delta > b.delta || (a.delta == b.delta && a.layer < b.layer);
  });
  std::vector<std::size_t> chosen;
  for (std::size_t i = 0; i < k; ++i) chosen.push_back(sorted[i].layer);
  return LayerSet(std::move(chosen));
}

// ---------------------------------------------------------------------------
// Exhaustive reference

std::size_t exhaustive_subset_count(std::size_t n_candidates, std::size_t k_max,
                                    std::size_t min_size) {
  std::size_t total = 0;
  for (std::size_t s = min_size; s < k_max && s <= n_candidates; ++s) {
    // C(n, s) built incrementally; exact for the sizes the guard admits.
    double c = 1.0;
    for (std::size_t i = 0; i < s; ++i) {
      c = c * static_cast<double>(n_candidates - i) / static_cast<double>(i + 1);
    }
    const double next = static_cast<double>(total) + std::round(c);
    if (next > static_cast<double>(kExhaustiveSubsetLimit) * 2) return kExhaustiveSubsetLimit + 1;
    total = static_cast<std::size_t>(next);
  }
  return total;
}

ExhaustiveResult exhaustive_search(const Model& model, const Tokenizer& tok,
                                   std::span<const McItem> items, std::size_t k_max,
                                   const LayerSet& candidates, std::size_t min_size,
                                   OptionScoring scoring) {
  require(min_size >= 1, "exhaustive_search: subsets must be non-empty");
  require(k_max > min_size, "exhaustive_search: k_max must exceed the minimum subset size");
  candidates.check_bounds(model.config().n_layers);
  const std::size_t n = candidates.size();
  const std::size_t count = exhaustive_subset_count(n, k_max, min_size);
  if (count > kExhaustiveSubsetLimit) {
    throw CapacityError("exhaustive_search: " + std::to_string(count) +
                        " subsets exceed the limit of " + std::to_string(kExhaustiveSubsetLimit));
  }
  require(count > 0, "exhaustive_search: no subsets in range");

  // Combinations by size, each size in lexicographic order.
  std::vector<LayerSet> subsets;
  subsets.reserve(count);
  const auto& pool = candidates.indices();
  for (std::size_t s = min_size; s < k_max && s <= n; ++s) {
    std::vector<std::size_t> pick(s);
    std::iota(pick.begin(), pick.end(), std::size_t{0});
    while (true) {
      std::vector<std::size_t> layers;
      for (std::size_t p : pick) layers.push_back(pool[p]);
      subsets.emplace_back(std::move(layers));
      std::size_t i = s;
      while (i > 0 && pick[i - 1] == n - s + i - 1) --i;
      if (i == 0) break;
      ++pick[i - 1];
      for (std::size_t j = i; j < s; ++j) pick[j] = pick[j - 1] + 1;
    }
  }

  const LayerSet all = model.all_layers();
  const double full = mc1_score(model, tok, items, all, scoring);
  std::vector<double> deltas(subsets.size());
  detail::parallel_for(subsets.size(), [&](std::size_t i) {
    deltas[i] = full - mc1_score(model, tok, items, all.without(subsets[i]), scoring);
  });

  std::size_t best = 0;
  for (std::size_t i = 1; i < deltas.size(); ++i) {
    if (deltas[i] > deltas[best]) best = i;
  }
  return ExhaustiveResult{subsets[best], deltas[best], subsets.size()};
}

// ---------------------------------------------------------------------------
// Perplexity filter

std::vector<std::vector<TokenId>> make_windows(std::span<const TokenId> tokens,
                                               std::size_t window) {
  require(window >= 2, "make_windows: window must hold at least two tokens");
  std::vector<std::vector<TokenId>> out;
  for (std::size_t start = 0; start < tokens.size(); start += window) {
    const std::size_t len = std::min(window, tokens.size() - start);
    if (len < 2) break;
    out.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(start),
                     tokens.begin() + static_cast<std::ptrdiff_t>(start + len));
  }
  return out;
}

double perplexity(const Model& model, const LayerSet& layers,
                  std::span<const std::vector<TokenId>> windows) {
  require(!windows.empty(), "perplexity: empty corpus");
  std::vector<double> nll(windows.size());
  std::vector<std::size_t> counts(windows.size());
  detail::parallel_for(windows.size(), [&](std::size_t w) {
    const auto& ids = windows[w];
    require(ids.size() >= 2, "perplexity: window needs at least two tokens");
    const Matrix logits = model.sequence_logits(ids, layers);
    double sum = 0.0;
    for (std::size_t t = 1; t < ids.size(); ++t) {
      sum -= log_softmax(logits.row(t - 1))[static_cast<std::size_t>(ids[t])];
    }
    nll[w] = sum;
    counts[w] = ids.size() - 1;
  });
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t w = 0; w < windows.size(); ++w) {
    total += nll[w];
    n += counts[w];
  }
  return std::exp(total / static_cast<double>(n));
}

SlebResult sleb_filter(const Model& model, std::span<const std::vector<TokenId>> windows,
                       std::size_t count) {
  const std::size_t n = model.config().n_layers;
  if (count >= n) {
    throw ContractViolation("sleb_filter: target " + std::to_string(count) +
                            " must be below the layer count " + std::to_string(n));
  }
  const LayerSet all = model.all_layers();
  SlebResult result;
  result.base_ppl = perplexity(model, all, windows);

  for (std::size_t step = 0; step < count; ++step) {
    const LayerSet remaining = all.without(result.removed);
    const auto& layers = remaining.indices();
    SlebStep s;
    s.candidates.resize(layers.size());
    detail::parallel_for(layers.size(), [&](std::size_t i) {
      const LayerSet kept = remaining.without(LayerSet({layers[i]}));
      s.candidates[i] = PerplexityRecord{layers[i], perplexity(model, kept, windows)};
    });
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.candidates.size(); ++i) {
      if (s.candidates[i].ppl < s.candidates[best].ppl) best = i;
    }
    s.removed = s.candidates[best].layer;
    s.ppl = s.candidates[best].ppl;
    result.removed = result.removed.united(LayerSet({s.removed}));
    result.steps.push_back(std::move(s));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Pipeline

SearchReport run_search(const Model& model, const Tokenizer& tok, std::span<const McItem> items,
                        const SearchOptions& options) {
  const std::size_t n = model.config().n_layers;
  SearchReport report;
  report.k = options.k;
  require(options.k >= 1, "search: k must be at least 1");

  report.candidates = model.all_layers();
  std::size_t filter_count = 0;
  if (options.corpus) {
    filter_count = options.filter_count == 0 ? n / 2 : options.filter_count;
    const auto windows = make_windows(*options.corpus, options.window);
    require(!windows.empty(), "search: filter corpus is shorter than two tokens");
    report.sleb = sleb_filter(model, windows, filter_count);
    report.candidates = report.sleb->removed;
  }
  if (options.k > report.candidates.size()) {
    throw ContractViolation("search: k=" + std::to_string(options.k) + " exceeds the " +
                            std::to_string(report.candidates.size()) + " candidate layers");
  }

  report.records = single_layer_ablation(model, tok, items, report.candidates, options.scoring);
  if (options.exhaustive) {
    report.exhaustive = exhaustive_search(model, tok, items, options.k + 1, report.candidates,
                                          options.k, options.scoring);
    report.chosen = report.exhaustive->best;
  } else {
    report.chosen = select_pruning_set(report.records, options.k);
  }

  report.config = json{{"k", options.k},
                       {"scoring", to_string(options.scoring)},
                       {"method", options.exhaustive ? "exhaustive" : "greedy-topk"},
                       {"filter", options.corpus.has_value()},
                       {"filter_count", filter_count},
                       {"window", options.window},
                       {"items", items.size()}};
  return report;
}

namespace {

json layers_json(const LayerSet& s) { return json(s.indices()); }

}  // namespace

json to_json(const SearchReport& r) {
  json records = json::array();
  for (const auto& rec : r.records) {
    records.push_back({{"layer", rec.layer},
                       {"mc1_full", rec.mc1_full},
                       {"mc1_ablated", rec.mc1_ablated},
                       {"delta", rec.delta}});
  }
  json j{{"config", r.config},
         {"method", r.exhaustive ? "exhaustive" : "greedy-topk"},
         {"k", r.k},
         {"candidates", layers_json(r.candidates)},
         {"records", records},
         {"chosen", layers_json(r.chosen)}};
  if (r.sleb) {
    json steps = json::array();
    for (const auto& s : r.sleb->steps) {
      json cands = json::array();
      for (const auto& c : s.candidates) cands.push_back({{"layer", c.layer}, {"ppl", c.ppl}});
      steps.push_back({{"removed", s.removed}, {"ppl", s.ppl}, {"candidates", cands}});
    }
    j["filtered_candidates"] = layers_json(r.sleb->removed);
    j["sleb"] = {{"base_ppl", r.sleb->base_ppl}, {"steps", steps}};
  } else {
    j["filtered_candidates"] = nullptr;
  }
  if (r.exhaustive) {
    j["exhaustive"] = {{"best", layers_json(r.exhaustive->best)},
                       {"delta", r.exhaustive->delta},
                       {"subsets_evaluated", r.exhaustive->subsets_evaluated}};
  }
  return j;
}

LayerSet load_chosen_set(const std::filesystem::path& report_path) {
  std::ifstream in(report_path);
  if (!in) throw Error("cannot open " + report_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(report_path.string() + ": invalid JSON: " + e.what());
  }
  auto it = j.find("chosen");
  if (it == j.end() || !it->is_array()) {
    throw FormatError(report_path.string() + ": no \"chosen\" layer list");
  }
  std::vector<std::size_t> layers;
  for (const auto& e : *it) {
    if (!e.is_number_unsigned()) {
      throw FormatError(report_path.string() + ": \"chosen\" must hold layer indices");
    }
    layers.push_back(e.get<std::size_t>());
  }
  return LayerSet(std::move(layers));
}

}  // namespace prunecd
