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
#include <fstream>

#include "doctest.h"
#include "prunecd/errors.hpp"
#include "prunecd/eval.hpp"
#include "reference.hpp"

using namespace prunecd;

namespace {

const Model& tiny() {
  static const Model m = load_model(reftest::fixture("tiny.pcdw"));
  return m;
}

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / ("prunecd_test_" + name);
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

McItem item(std::size_t n_options, std::vector<std::size_t> correct) {
  McItem it;
  it.question = "q";
  for (std::size_t i = 0; i < n_options; ++i) it.options.push_back("o" + std::to_string(i));
  it.best = correct.front();
  it.correct_set = std::move(correct);
  return it;
}

// log p(option | question) recomputed with the double-precision reference.
double oracle_loglik(const McItem& it, std::size_t o, const LayerSet& layers) {
  ByteTokenizer tok;
  auto ids = tok.encode(it.question, true);
  const std::size_t ctx = ids.size();
  for (unsigned char ch : " " + it.options[o]) ids.push_back(ch);
  const auto logits = reftest::reference_logits(tiny(), ids, layers);
  double s = 0.0;
  for (std::size_t t = ctx; t < ids.size(); ++t) {
    s += reftest::log_softmax_ref(std::span<const double>(logits[t - 1]))[ids[t]];
  }
  return s;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("answer normalization and EM/F1") {
  const std::vector<std::string> apple{"apple"};
  CHECK(normalize_answer("The  Apple!") == "apple");
  const EmF1 a = em_f1("The Apple!", apple);
  CHECK(a.em == 1);
  CHECK(a.f1 == 1.0);

  const std::vector<std::string> x{"x"};
  const EmF1 e = em_f1("", x);
  CHECK(e.em == 0);
  CHECK(e.f1 == 0.0);

  const std::vector<std::string> empty{""};
  CHECK(em_f1("", empty).em == 1);
  CHECK(em_f1("", empty).f1 == 1.0);

  // Two of three tokens shared: P = R = 2/3.
  const std::vector<std::string> bcd{"b c d"};
  const EmF1 partial = em_f1("x b c", bcd);
  CHECK(partial.em == 0);
  CHECK(std::abs(partial.f1 - 2.0 / 3.0) < 1e-12);

  // "a" is an article and is dropped before counting: P = 1, R = 2/3.
  const EmF1 article = em_f1("a b c", bcd);
  CHECK(article.em == 0);
  CHECK(std::abs(article.f1 - 0.8) < 1e-12);
}

TEST_CASE("EM/F1 properties") {
  const std::vector<std::string> golds{"the cat sat", "a dog", "cat"};
  std::vector<std::string> reversed(golds.rbegin(), golds.rend());
  for (const char* pred : {"cat", "the dog sat", "bird", "Cat!"}) {
    const EmF1 a = em_f1(pred, golds), b = em_f1(pred, reversed);
    CHECK(a.em == b.em);
    CHECK(a.f1 == b.f1);
    CHECK(a.f1 >= 0.0);
    CHECK(a.f1 <= 1.0);
    if (a.em == 1) CHECK(a.f1 == 1.0);
  }
}

TEST_CASE("MC metrics from scores") {
  const McItem dominant = item(3, {0});
  const std::vector<double> s{0.0, -50.0, -60.0};
  CHECK(mc1_correct(dominant, s));
  CHECK(mc2_item(dominant, s) > 0.999999);
  CHECK(mc3_item(dominant, s) == 1.0);

  // Correct options ranked 1st and 3rd.
  const McItem two = item(4, {0, 2});
  const std::vector<double> r{-1.0, -2.0, -3.0, -4.0};
  CHECK(mc3_item(two, r) == 0.5);
  const double z = std::exp(-1.0) + std::exp(-2.0) + std::exp(-3.0) + std::exp(-4.0);
  CHECK(std::abs(mc2_item(two, r) - (std::exp(-1.0) + std::exp(-3.0)) / z) < 1e-12);

  const std::vector<double> tie{-1.0, -1.0, -5.0};
  CHECK_FALSE(mc1_correct(dominant, tie));

  McItem bare = dominant;
  bare.correct_set.reset();
  const std::vector<McItem> items{bare};
  const std::vector<std::vector<double>> scores{s};
  CHECK_THROWS_AS(mc_metrics(items, scores, true), ContractViolation);
  CHECK(mc_metrics(items, scores, false).mc1 == 1.0);
}

TEST_CASE("JSON-lines loaders") {
  const auto good = write_temp(
      "mc3.jsonl",
      "{\"question\":\"q1\",\"options\":[\"a\",\"b\"],\"best\":0}\n"
      "{\"question\":\"q2\",\"options\":[\"a\",\"b\",\"c\"],\"best\":2,\"correct_set\":[2,1]}\n"
      "{\"question\":\"q3\",\"options\":[\"a\",\"b\"],\"best\":1}\n");
  const auto items = load_mc_jsonl(good);
  REQUIRE(items.size() == 3);
  CHECK(items[1].correct_set == std::vector<std::size_t>{1, 2});
  CHECK(items[2].line == 3);

  const auto again = std::filesystem::temp_directory_path() / "prunecd_test_mc_roundtrip.jsonl";
  save_mc_jsonl(again, items);
  CHECK(load_mc_jsonl(again) == items);

  const auto bad = write_temp("mc_bad.jsonl",
                              "{\"question\":\"q1\",\"options\":[\"a\",\"b\"],\"best\":0}\n"
                              "{\"question\":\"q2\",\"options\":[\"a\",\"b\"]}\n");
  try {
    load_mc_jsonl(bad);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
    CHECK(e.field() == "best");
  }

  const auto qa = write_temp("qa_bad.jsonl", "{\"question\":\"q\",\"gold_answers\":[]}\n");
  CHECK_THROWS_AS(load_qa_jsonl(qa), ParseError);
  CHECK(load_qa_jsonl(reftest::fixture("qa5.jsonl")).size() == 5);
  CHECK(load_prompts(reftest::fixture("prompts.jsonl")).size() == 20);

  for (const auto& p : {good, again, bad, qa}) std::filesystem::remove(p);
}

TEST_CASE("option log-likelihoods match the reference forward") {
  ByteTokenizer tok;
  const auto items = load_mc_jsonl(reftest::fixture("mc20.jsonl"));
  const LayerSet all = tiny().all_layers();
  const auto scores = score_options(tiny(), tok, items, all);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t o = 0; o < items[i].options.size(); ++o) {
      const double ref = oracle_loglik(items[i], o, all);
      CHECK(std::abs(scores[i][o] - ref) < 1e-4 * std::abs(ref));
    }
  }
}

TEST_CASE("metrics from persisted scores equal metrics computed online") {
  ByteTokenizer tok;
  const auto items = load_mc_jsonl(reftest::fixture("mc20.jsonl"));
  const LayerSet layers = tiny().all_layers().without(LayerSet({3}));
  const McMetrics online = mc_scores(tiny(), tok, items, layers);

  const auto path = std::filesystem::temp_directory_path() / "prunecd_test_scores.json";
  std::ofstream(path) << nlohmann::json(score_options(tiny(), tok, items, layers)).dump();
  std::ifstream in(path);
  const auto stored = nlohmann::json::parse(in).get<std::vector<std::vector<double>>>();
  std::filesystem::remove(path);

  double mc1 = 0, mc2 = 0, mc3 = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& s = stored[i];
    const auto& c = *items[i].correct_set;
    bool strict = true;
    for (std::size_t o = 0; o < s.size(); ++o) {
      if (o != items[i].best && s[o] >= s[items[i].best]) strict = false;
    }
    mc1 += strict;
    double total = 0, mass = 0, worst_wrong = -1e300;
    for (std::size_t o = 0; o < s.size(); ++o) {
      total += std::exp(s[o]);
      const bool ok = std::find(c.begin(), c.end(), o) != c.end();
      if (ok) mass += std::exp(s[o]);
      else worst_wrong = std::max(worst_wrong, s[o]);
    }
    mc2 += mass / total;
    double above = 0;
    for (std::size_t o : c) above += s[o] > worst_wrong;
    mc3 += above / c.size();
  }
  CHECK(online.mc1 == doctest::Approx(mc1 / 20).epsilon(1e-12));
  CHECK(*online.mc2 == doctest::Approx(mc2 / 20).epsilon(1e-9));
  CHECK(*online.mc3 == doctest::Approx(mc3 / 20).epsilon(1e-12));
}

TEST_CASE("bench is deterministic in token count") {
  ByteTokenizer tok;
  const std::vector<std::string> prompts{"Hello", "The sky"};
  DecodeConfig c;
  c.max_new_tokens = 8;
  const BenchResult a = bench(tiny(), tok, prompts, c, 1, "tiny");
  const BenchResult b = bench(tiny(), tok, prompts, c, 1, "tiny");
  CHECK(a.tokens_generated == 16);
  CHECK(a.tokens_generated == b.tokens_generated);
  CHECK(a.tokens_per_second == doctest::Approx(a.tokens_generated / a.wall_seconds));
  CHECK(a.model_id == "tiny");
  CHECK_THROWS_AS(bench(tiny(), tok, prompts, c, 0), ContractViolation);
}

TEST_CASE("QA evaluation fills the template") {
  ByteTokenizer tok;
  const auto items = load_qa_jsonl(reftest::fixture("qa5.jsonl"));
  DecodeConfig c;
  c.max_new_tokens = 6;
  const QaReport r = evaluate_qa(tiny(), tok, items, c, "Q: {question}\nA:");
  CHECK(r.count == 5);
  CHECK(r.predictions.size() == 5);
  CHECK(r.em >= 0.0);
  CHECK(r.f1 <= 1.0);
  CHECK_THROWS_AS(evaluate_qa(tiny(), tok, items, c, "no placeholder"), ContractViolation);
}

}  // TEST_SUITE
