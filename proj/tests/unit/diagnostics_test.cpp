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

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "prunecd/diagnostics.hpp"
#include "prunecd/errors.hpp"
#include "reference.hpp"

using namespace prunecd;

namespace {

const Model& tiny() {
  static const Model m = load_model(reftest::fixture("tiny.pcdw"));
  return m;
}

const std::vector<std::string> kPrompts{"The capital of France is", "Once upon a time",
                                        "2 + 2 =", "Q: Why is the sky blue?\nA:"};

}  // namespace

TEST_SUITE("diagnostics") {

TEST_CASE("empty prune set agrees with the full model") {
  ByteTokenizer tok;
  const auto r = flatness_informativeness_sweep(tiny(), tok, kPrompts, 3, LayerSet{}, 10, 3);
  CHECK(r.sample_count == 12);
  CHECK(r.entropy_pruned == r.entropy_full);
  CHECK(r.overlap_pruned == 10.0);
  CHECK(r.overlap_early_exit <= 10.0);
}

TEST_CASE("exit at the last layer is the full model") {
  ByteTokenizer tok;
  const auto r = flatness_informativeness_sweep(tiny(), tok, kPrompts, 7, LayerSet({1, 2}), 25);
  CHECK(r.overlap_early_exit == 25.0);
  CHECK(std::abs(r.entropy_early_exit - r.entropy_full) < 1e-9);
}

TEST_CASE("sweep statistics match direct computation") {
  ByteTokenizer tok;
  const LayerSet prune({2, 5});
  const auto r = flatness_informativeness_sweep(tiny(), tok, kPrompts, 2, prune, 5);
  double h_full = 0, h_exit = 0, h_pruned = 0, o_exit = 0, o_pruned = 0;
  for (const auto& p : kPrompts) {
    const auto ids = tok.encode(p, true);
    const TokenDist full = tiny().forward_subset(ids, tiny().all_layers());
    const TokenDist exit = tiny().forward_subset(ids, LayerSet::range(0, 3));
    const TokenDist pruned = tiny().forward_subset(ids, tiny().all_layers().without(prune));
    h_full += entropy(full.probs());
    h_exit += entropy(exit.probs());
    h_pruned += entropy(pruned.probs());
    o_exit += topk_overlap(exit.logits(), full.logits(), 5);
    o_pruned += topk_overlap(pruned.logits(), full.logits(), 5);
  }
  const double n = kPrompts.size();
  CHECK(r.entropy_full == doctest::Approx(h_full / n).epsilon(1e-12));
  CHECK(r.entropy_early_exit == doctest::Approx(h_exit / n).epsilon(1e-12));
  CHECK(r.entropy_pruned == doctest::Approx(h_pruned / n).epsilon(1e-12));
  CHECK(r.overlap_early_exit == doctest::Approx(o_exit / n));
  CHECK(r.overlap_pruned == doctest::Approx(o_pruned / n));
}

TEST_CASE("sweep input validation") {
  ByteTokenizer tok;
  CHECK_THROWS_AS(flatness_informativeness_sweep(tiny(), tok, kPrompts, 8, LayerSet{}),
                  ContractViolation);
  CHECK_THROWS_AS(flatness_informativeness_sweep(tiny(), tok, kPrompts, 2, LayerSet({9})),
                  ContractViolation);
  CHECK_THROWS_AS(flatness_informativeness_sweep(tiny(), tok, kPrompts, 2, LayerSet{}, 0),
                  ContractViolation);
  CHECK_THROWS_AS(flatness_informativeness_sweep(tiny(), tok, {}, 2, LayerSet{}),
                  ContractViolation);
}

TEST_CASE("JSD matrix, CSV and histogram") {
  ByteTokenizer tok;
  DecodeConfig cfg;
  cfg.mode = DecodeMode::dola;
  cfg.lambda = 1.0;
  cfg.dola_bucket = DolaBucket::lower;
  cfg.max_new_tokens = 12;
  cfg.stop_ids.clear();

  std::vector<JsdMatrix> ms;
  std::vector<GenerationResult> gens;
  for (const auto& p : kPrompts) {
    ms.push_back(jsd_matrix(tiny(), tok, p, cfg));
    gens.push_back(Generator(tiny(), tok).generate(p, cfg));
  }

  for (std::size_t i = 0; i < ms.size(); ++i) {
    const auto& m = ms[i];
    REQUIRE(m.values.size() == gens[i].traces.size());
    for (std::size_t r = 0; r < m.values.size(); ++r) {
      REQUIRE(m.values[r].size() == 8);
      CHECK(m.values[r][7] == doctest::Approx(0.0));
      for (double v : m.values[r]) {
        CHECK(v >= 0.0);
        CHECK(v <= std::log(2.0) + 1e-12);
      }
      // Generation picked the layer the matrix says is most divergent.
      std::size_t best = 0;
      for (std::size_t l = 1; l < 4; ++l) {
        if (m.values[r][l] > m.values[r][best]) best = l;
      }
      CHECK(gens[i].traces[r].dola_exit_layer == best);
    }
  }

  // Spot-check a cell against a fresh uncached computation.
  {
    const auto& g = gens[1];
    std::vector<TokenId> seq = g.prompt_tokens;
    seq.insert(seq.end(), g.tokens.begin(), g.tokens.begin() + 3);
    const TokenDist exit = tiny().forward_subset(seq, LayerSet::range(0, 2));
    const TokenDist full = tiny().forward_subset(seq, tiny().all_layers());
    CHECK(ms[1].values[3][1] == doctest::Approx(jsd(exit.probs(), full.probs())).epsilon(1e-6));
  }

  std::ostringstream csv;
  write_jsd_csv(csv, ms);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "prompt,position,token,L0,L1,L2,L3,L4,L5,L6,L7");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    REQUIRE(cells.size() == 11);
    const std::size_t p = std::stoul(cells[0]);
    std::size_t r = 0;
    while (ms[p].positions[r] != std::stoul(cells[1])) ++r;
    CHECK(static_cast<TokenId>(std::stoul(cells[2])) == ms[p].tokens[r]);
    for (std::size_t l = 0; l < 8; ++l) CHECK(std::stod(cells[3 + l]) == ms[p].values[r][l]);
    ++rows;
  }

  const ExitHistogram h = exit_layer_histogram(ms, LayerSet::range(0, 4));
  std::size_t total = 0;
  for (const auto& m : ms) total += m.values.size();
  CHECK(rows == total);
  CHECK(h.total == total);
  std::size_t sum = 0;
  for (std::size_t l = 0; l < h.counts.size(); ++l) {
    sum += h.counts[l];
    if (l >= 4) CHECK(h.counts[l] == 0);
  }
  CHECK(sum == total);
  const auto j = to_json(h);
  CHECK(j["total"] == total);
}

TEST_CASE("histogram ties go to the lower layer") {
  JsdMatrix m;
  m.positions = {5};
  m.tokens = {1};
  m.values = {{0.2, 0.3, 0.3, 0.1}};
  const ExitHistogram h = exit_layer_histogram(std::span(&m, 1), LayerSet({0, 1, 2}));
  CHECK(h.counts == std::vector<std::size_t>{0, 1, 0, 0});
  CHECK_THROWS_AS(exit_layer_histogram(std::span(&m, 1), LayerSet{}), ContractViolation);
}

}  // TEST_SUITE
