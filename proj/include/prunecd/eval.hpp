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

// Datasets and metrics: multiple-choice likelihood scoring (MC1/MC2/MC3),
// extractive-QA exact match / F1, and decode throughput.
//
// MC2 and MC3 follow the TruthfulQA conventions: MC2 is the normalized
// likelihood mass on the correct options, MC3 the fraction of correct options
// that outscore every incorrect one.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "prunecd/decoding.hpp"
#include "prunecd/model.hpp"
#include "prunecd/tokenizer.hpp"

namespace prunecd {

struct McItem {
  std::string question;
  std::vector<std::string> options;
  std::size_t best = 0;
  std::optional<std::vector<std::size_t>> correct_set;
  std::size_t line = 0;  // 1-based source line, 0 when built in code

  friend bool operator==(const McItem& a, const McItem& b) {
    return a.question == b.question && a.options == b.options && a.best == b.best &&
           a.correct_set == b.correct_set;
  }
};

struct QaItem {
  std::string question;
  std::vector<std::string> gold_answers;
  std::size_t line = 0;
};

std::vector<McItem> load_mc_jsonl(const std::filesystem::path& path);
void save_mc_jsonl(const std::filesystem::path& path, std::span<const McItem> items);
std::vector<QaItem> load_qa_jsonl(const std::filesystem::path& path);
// One JSON string per line.
std::vector<std::string> load_prompts(const std::filesystem::path& path);

// Option scoring: summed continuation log-likelihood, or its per-token mean.
enum class OptionScoring { sum, mean };
std::string to_string(OptionScoring s);
OptionScoring parse_option_scoring(std::string_view s);

// log p(option | question) under `layers`. The question is encoded with BOS
// (when the tokenizer has one); the option is encoded as " " + option.
double option_loglik(const Model& model, const Tokenizer& tok, const McItem& item,
                     std::size_t option, const LayerSet& layers,
                     OptionScoring scoring = OptionScoring::sum);

// Per-item option scores, parallel over items.
std::vector<std::vector<double>> score_options(const Model& model, const Tokenizer& tok,
                                               std::span<const McItem> items,
                                               const LayerSet& layers,
                                               OptionScoring scoring = OptionScoring::sum);

// True iff the best option scores strictly above every other option.
bool mc1_correct(const McItem& item, std::span<const double> scores);
double mc2_item(const McItem& item, std::span<const double> scores);
double mc3_item(const McItem& item, std::span<const double> scores);

struct McMetrics {
  double mc1 = 0.0;
  std::optional<double> mc2;
  std::optional<double> mc3;
};

// Metrics from already computed option scores. With want_mc23, every item
// needs a correct_set.
McMetrics mc_metrics(std::span<const McItem> items, std::span<const std::vector<double>> scores,
                     bool want_mc23);

McMetrics mc_scores(const Model& model, const Tokenizer& tok, std::span<const McItem> items,
                    const LayerSet& layers, bool want_mc23 = true,
                    OptionScoring scoring = OptionScoring::sum);

// Lowercase, strip ASCII punctuation, drop the articles a/an/the, collapse
// whitespace.
std::string normalize_answer(std::string_view s);

struct EmF1 {
  int em = 0;
  double f1 = 0.0;
};

EmF1 em_f1(std::string_view prediction, std::span<const std::string> golds);

struct QaReport {
  double em = 0.0;
  double f1 = 0.0;
  std::size_t count = 0;
  std::vector<std::string> predictions;
};

// Fills `{question}` in the template, generates, keeps the first line of the
// output as the answer, and averages EM/F1.
QaReport evaluate_qa(const Model& model, const Tokenizer& tok, std::span<const QaItem> items,
                     const DecodeConfig& config, const std::string& prompt_template);

struct BenchResult {
  DecodeMode mode = DecodeMode::greedy;
  std::string model_id;
  std::size_t tokens_generated = 0;
  double wall_seconds = 0.0;
  double tokens_per_second = 0.0;
};

nlohmann::json to_json(const BenchResult& r);

// Times generation (tokenization excluded) over all prompts after `warmup`
// discarded runs on the first prompt. Zero generated tokens is a contract
// violation.
BenchResult bench(const Model& model, const Tokenizer& tok, std::span<const std::string> prompts,
                  const DecodeConfig& config, std::size_t warmup,
                  const std::string& model_id = "");

}  // namespace prunecd
