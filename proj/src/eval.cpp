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

#include "prunecd/eval.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "parallel.hpp"
#include "prunecd/errors.hpp"

namespace prunecd {

using nlohmann::json;

namespace {

// Calls fn(json, line_number) for each non-blank line.
template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path.string(), lineno, "<line>", std::string("invalid JSON: ") + e.what());
    }
    fn(j, lineno);
  }
}

const json& field(const json& j, const char* name, const std::filesystem::path& path,
                  std::size_t line) {
  if (!j.is_object()) throw ParseError(path.string(), line, "<line>", "expected a JSON object");
  auto it = j.find(name);
  if (it == j.end()) throw ParseError(path.string(), line, name, "missing");
  return *it;
}

std::vector<std::string> string_list(const json& j, const char* name,
                                     const std::filesystem::path& path, std::size_t line) {
  if (!j.is_array()) throw ParseError(path.string(), line, name, "expected an array of strings");
  std::vector<std::string> out;
  for (const auto& e : j) {
    if (!e.is_string()) throw ParseError(path.string(), line, name, "expected an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

std::size_t index_value(const json& j, const char* name, const std::filesystem::path& path,
                        std::size_t line) {
  if (!j.is_number_integer() || j.get<long long>() < 0) {
    throw ParseError(path.string(), line, name, "expected a non-negative integer");
  }
  return j.get<std::size_t>();
}

}  // namespace

// ---------------------------------------------------------------------------
// Datasets

std::vector<McItem> load_mc_jsonl(const std::filesystem::path& path) {
  std::vector<McItem> items;
  for_each_json_line(path, [&](const json& j, std::size_t line) {
    McItem item;
    item.line = line;
    const json& q = field(j, "question", path, line);
    if (!q.is_string()) throw ParseError(path.string(), line, "question", "expected a string");
    item.question = q.get<std::string>();
    item.options = string_list(field(j, "options", path, line), "options", path, line);
    if (item.options.empty()) throw ParseError(path.string(), line, "options", "empty");
    item.best = index_value(field(j, "best", path, line), "best", path, line);
    if (item.best >= item.options.size()) {
      throw ParseError(path.string(), line, "best", "index out of range");
    }
    if (auto it = j.find("correct_set"); it != j.end()) {
      if (!it->is_array()) throw ParseError(path.string(), line, "correct_set", "expected an array");
      std::vector<std::size_t> set;
      for (const auto& e : *it) {
        const std::size_t idx = index_value(e, "correct_set", path, line);
        if (idx >= item.options.size()) {
          throw ParseError(path.string(), line, "correct_set", "index out of range");
        }
        set.push_back(idx);
      }
      std::sort(set.begin(), set.end());
      if (std::adjacent_find(set.begin(), set.end()) != set.end()) {
        throw ParseError(path.string(), line, "correct_set", "duplicate index");
      }
      item.correct_set = std::move(set);
    }
    items.push_back(std::move(item));
  });
  return items;
}

void save_mc_jsonl(const std::filesystem::path& path, std::span<const McItem> items) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& item : items) {
    json j{{"question", item.question}, {"options", item.options}, {"best", item.best}};
    if (item.correct_set) j["correct_set"] = *item.correct_set;
    out << j.dump() << '\n';
  }
}

std::vector<QaItem> load_qa_jsonl(const std::filesystem::path& path) {
  std::vector<QaItem> items;
  for_each_json_line(path, [&](const json& j, std::size_t line) {
    QaItem item;
    item.line = line;
    const json& q = field(j, "question", path, line);
    if (!q.is_string()) throw ParseError(path.string(), line, "question", "expected a string");
    item.question = q.get<std::string>();
    item.gold_answers =
        string_list(field(j, "gold_answers", path, line), "gold_answers", path, line);
    if (item.gold_answers.empty()) {
      throw ParseError(path.string(), line, "gold_answers", "needs at least one answer");
    }
    items.push_back(std::move(item));
  });
  return items;
}

std::vector<std::string> load_prompts(const std::filesystem::path& path) {
  std::vector<std::string> prompts;
  for_each_json_line(path, [&](const json& j, std::size_t line) {
    if (!j.is_string()) throw ParseError(path.string(), line, "<line>", "expected a JSON string");
    prompts.push_back(j.get<std::string>());
  });
  return prompts;
}

// ---------------------------------------------------------------------------
// Multiple choice

std::string to_string(OptionScoring s) { return s == OptionScoring::sum ? "sum" : "mean"; }

OptionScoring parse_option_scoring(std::string_view s) {
  if (s == "sum") return OptionScoring::sum;
  if (s == "mean") return OptionScoring::mean;
  throw ContractViolation("unknown option scoring \"" + std::string(s) + "\"");
}

double option_loglik(const Model& model, const Tokenizer& tok, const McItem& item,
                     std::size_t option, const LayerSet& layers, OptionScoring scoring) {
  require(option < item.options.size(), "option index out of range");
  std::vector<TokenId> ids = tok.encode(item.question, tok.bos().has_value());
  const std::size_t context = ids.size();
  const std::vector<TokenId> cont = tok.encode(" " + item.options[option], false);
  if (context == 0) throw ContractViolation("MC scoring needs a non-empty context");
  if (cont.empty()) throw ContractViolation("MC option encodes to no tokens");
  ids.insert(ids.end(), cont.begin(), cont.end());
  if (ids.size() > model.config().max_seq) {
    throw CapacityError("MC item of " + std::to_string(ids.size()) + " tokens exceeds max_seq");
  }

  const Matrix logits = model.sequence_logits(ids, layers);
  double total = 0.0;
  for (std::size_t t = context; t < ids.size(); ++t) {
    const auto lp = log_softmax(logits.row(t - 1));
    total += lp[static_cast<std::size_t>(ids[t])];
  }
  return scoring == OptionScoring::sum ? total : total / static_cast<double>(cont.size());
}

std::vector<std::vector<double>> score_options(const Model& model, const Tokenizer& tok,
                                               std::span<const McItem> items,
                                               const LayerSet& layers, OptionScoring scoring) {
  std::vector<std::vector<double>> scores(items.size());
  detail::parallel_for(items.size(), [&](std::size_t i) {
    std::vector<double> s(items[i].options.size());
    for (std::size_t o = 0; o < s.size(); ++o) {
      s[o] = option_loglik(model, tok, items[i], o, layers, scoring);
    }
    scores[i] = std::move(s);
  });
  return scores;
}

bool mc1_correct(const McItem& item, std::span<const double> scores) {
  require(scores.size() == item.options.size(), "MC1: score count mismatch");
  for (std::size_t o = 0; o < scores.size(); ++o) {
    if (o != item.best && !(scores[item.best] > scores[o])) return false;
  }
  return true;
}

namespace {

const std::vector<std::size_t>& correct_set_of(const McItem& item) {
  if (!item.correct_set) {
    throw ContractViolation("MC2/MC3 need correct_set (item \"" + item.question + "\")");
  }
  return *item.correct_set;
}

}  // namespace

double mc2_item(const McItem& item, std::span<const double> scores) {
  const auto& correct = correct_set_of(item);
  require(scores.size() == item.options.size(), "MC2: score count mismatch");
  const double mx = *std::max_element(scores.begin(), scores.end());
  double total = 0.0;
  for (double s : scores) total += std::exp(s - mx);
  double mass = 0.0;
  for (std::size_t o : correct) mass += std::exp(scores[o] - mx);
  return mass / total;
}

double mc3_item(const McItem& item, std::span<const double> scores) {
  const auto& correct = correct_set_of(item);
  require(scores.size() == item.options.size(), "MC3: score count mismatch");
  if (correct.empty()) return 0.0;
  double best_incorrect = -INFINITY;
  for (std::size_t o = 0; o < scores.size(); ++o) {
    if (!std::binary_search(correct.begin(), correct.end(), o)) {
      best_incorrect = std::max(best_incorrect, scores[o]);
    }
  }
  std::size_t above = 0;
  for (std::size_t o : correct) above += scores[o] > best_incorrect ? 1 : 0;
  return static_cast<double>(above) / static_cast<double>(correct.size());
}

McMetrics mc_metrics(std::span<const McItem> items, std::span<const std::vector<double>> scores,
                     bool want_mc23) {
  require(items.size() == scores.size(), "mc_metrics: item/score count mismatch");
  require(!items.empty(), "mc_metrics: no items");
  McMetrics m;
  double mc1 = 0.0, mc2 = 0.0, mc3 = 0.0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    mc1 += mc1_correct(items[i], scores[i]) ? 1.0 : 0.0;
    if (want_mc23) {
      mc2 += mc2_item(items[i], scores[i]);
      mc3 += mc3_item(items[i], scores[i]);
    }
  }
  const double n = static_cast<double>(items.size());
  m.mc1 = mc1 / n;
  if (want_mc23) {
    m.mc2 = mc2 / n;
    m.mc3 = mc3 / n;
  }
  return m;
}

McMetrics mc_scores(const Model& model, const Tokenizer& tok, std::span<const McItem> items,
                    const LayerSet& layers, bool want_mc23, OptionScoring scoring) {
  if (want_mc23) {
    for (const auto& item : items) correct_set_of(item);
  }
  const auto scores = score_options(model, tok, items, layers, scoring);
  return mc_metrics(items, scores, want_mc23);
}

// ---------------------------------------------------------------------------
// Extractive QA

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
  if (pred.empty() || gold.empty()) return pred == gold ? 1.0 : 0.0;
  std::map<std::string, int> counts;
  for (const auto& w : gold) ++counts[w];
  int common = 0;
  for (const auto& w : pred) {
    if (auto it = counts.find(w); it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double p = static_cast<double>(common) / static_cast<double>(pred.size());
  const double r = static_cast<double>(common) / static_cast<double>(gold.size());
  return 2.0 * p * r / (p + r);
}

}  // namespace

std::string normalize_answer(std::string_view s) {
  std::string lowered;
  lowered.reserve(s.size());
  for (unsigned char c : s) {
    if (c < 0x80 && std::ispunct(c)) continue;
    lowered.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
  }
  std::string out;
  for (const auto& w : split_ws(lowered)) {
    if (w == "a" || w == "an" || w == "the") continue;
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

EmF1 em_f1(std::string_view prediction, std::span<const std::string> golds) {
  EmF1 r;
  const std::string pred = normalize_answer(prediction);
  const auto pred_tokens = split_ws(pred);
  for (const auto& g : golds) {
    const std::string gold = normalize_answer(g);
    if (pred == gold) r.em = 1;
    r.f1 = std::max(r.f1, token_f1(pred_tokens, split_ws(gold)));
  }
  return r;
}

QaReport evaluate_qa(const Model& model, const Tokenizer& tok, std::span<const QaItem> items,
                     const DecodeConfig& config, const std::string& prompt_template) {
  const std::string placeholder = "{question}";
  const auto at = prompt_template.find(placeholder);
  if (at == std::string::npos) throw ContractViolation("QA template lacks {question}");
  require(!items.empty(), "evaluate_qa: no items");

  Generator gen(model, tok);
  QaReport report;
  double em = 0.0, f1 = 0.0;
  for (const auto& item : items) {
    std::string prompt = prompt_template;
    prompt.replace(at, placeholder.size(), item.question);
    const std::string text = gen.generate(prompt, config).text;
    std::string answer = text.substr(0, text.find('\n'));
    const EmF1 s = em_f1(answer, item.gold_answers);
    em += s.em;
    f1 += s.f1;
    report.predictions.push_back(std::move(answer));
  }
  report.count = items.size();
  report.em = em / static_cast<double>(items.size());
  report.f1 = f1 / static_cast<double>(items.size());
  return report;
}

// ---------------------------------------------------------------------------
// Throughput

json to_json(const BenchResult& r) {
  return json{{"mode", to_string(r.mode)},
              {"model_id", r.model_id},
              {"tokens_generated", r.tokens_generated},
              {"wall_seconds", r.wall_seconds},
              {"tokens_per_second", r.tokens_per_second}};
}

BenchResult bench(const Model& model, const Tokenizer& tok, std::span<const std::string> prompts,
                  const DecodeConfig& config, std::size_t warmup, const std::string& model_id) {
  require(!prompts.empty(), "bench: no prompts");
  require(warmup >= 1, "bench: warmup must be at least 1");
  config.validate(model.config());

  std::vector<std::vector<TokenId>> encoded;
  for (const auto& p : prompts) encoded.push_back(tok.encode(p, tok.bos().has_value()));

  Generator gen(model, tok);
  for (std::size_t w = 0; w < warmup; ++w) gen.generate_ids(encoded.front(), config);

  std::size_t tokens = 0;
  const auto start = std::chrono::steady_clock::now();
  for (const auto& ids : encoded) tokens += gen.generate_ids(ids, config).traces.size();
  const auto stop = std::chrono::steady_clock::now();

  if (tokens == 0) throw ContractViolation("bench: no tokens generated");
  BenchResult r;
  r.mode = config.mode;
  r.model_id = model_id;
  r.tokens_generated = tokens;
  r.wall_seconds = std::chrono::duration<double>(stop - start).count();
  r.tokens_per_second = static_cast<double>(tokens) / r.wall_seconds;
  return r;
}

}  // namespace prunecd
