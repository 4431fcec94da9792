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

#include "prunecd/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "prunecd/decoding.hpp"
#include "prunecd/diagnostics.hpp"
#include "prunecd/errors.hpp"
#include "prunecd/eval.hpp"
#include "prunecd/layer_search.hpp"
#include "prunecd/model.hpp"
#include "prunecd/tokenizer.hpp"

namespace prunecd {

using nlohmann::json;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GlobalFlags {
  std::string model;
  std::string tokenizer;
  std::uint32_t seed = 42;
  std::string out;
};

struct DecodeFlags {
  std::string mode = "greedy";
  std::string prune_layers;
  std::string search_report;
  double lambda = 0.0;
  double alpha = kDefaultAlpha;
  double rep_penalty = kDefaultRepPenalty;
  std::size_t max_new = 32;
  std::string dola_bucket = "upper";
  std::string dola_layers;
  std::string penalty_target = "both";
  std::string dual_path = "batched";
  bool ignore_eos = false;
};

void add_decode_flags(CLI::App* cmd, DecodeFlags& f) {
  cmd->add_option("--mode", f.mode, "greedy | dola | prunecd")
      ->check(CLI::IsMember({"greedy", "dola", "prunecd"}))
      ->capture_default_str();
  auto* prune = cmd->add_option("--prune-layers", f.prune_layers,
                                "Amateur pruning set, e.g. 6,7,9,12");
  auto* report = cmd->add_option("--search-report", f.search_report,
                                 "Take the pruning set from a search report");
  prune->excludes(report);
  cmd->add_option("--lambda", f.lambda, "Contrast strength")->capture_default_str();
  cmd->add_option("--alpha", f.alpha, "Plausibility threshold")->capture_default_str();
  cmd->add_option("--rep-penalty", f.rep_penalty, "Repetition penalty")->capture_default_str();
  cmd->add_option("--max-new", f.max_new, "Tokens to generate")->capture_default_str();
  cmd->add_option("--dola-bucket", f.dola_bucket, "lower | upper | custom")
      ->check(CLI::IsMember({"lower", "upper", "custom"}))
      ->capture_default_str();
  cmd->add_option("--dola-layers", f.dola_layers, "Candidate layers for --dola-bucket custom");
  cmd->add_option("--penalty-target", f.penalty_target, "both | expert")
      ->check(CLI::IsMember({"both", "expert"}))
      ->capture_default_str();
  cmd->add_option("--dual-path", f.dual_path, "batched | sequential")
      ->check(CLI::IsMember({"batched", "sequential"}))
      ->capture_default_str();
  cmd->add_flag("--ignore-eos", f.ignore_eos, "Do not stop at the end-of-text token");
}

LayerSet parse_layers_flag(const std::string& flag, const std::string& value) {
  try {
    return LayerSet::parse(value);
  } catch (const ContractViolation& e) {
    throw UsageError(flag + ": " + e.what());
  }
}

// Pruning set from --prune-layers or --search-report; empty when neither.
LayerSet prune_set_from(const DecodeFlags& f) {
  if (!f.search_report.empty()) return load_chosen_set(f.search_report);
  return parse_layers_flag("--prune-layers", f.prune_layers);
}

DecodeConfig resolve_decode(const DecodeFlags& f, const Model& model, const Tokenizer& tok) {
  DecodeConfig c;
  c.mode = parse_decode_mode(f.mode);
  c.lambda = f.lambda;
  c.alpha = f.alpha;
  c.rep_penalty = f.rep_penalty;
  c.max_new_tokens = f.max_new;
  c.dola_bucket = parse_dola_bucket(f.dola_bucket);
  c.penalty_target = parse_penalty_target(f.penalty_target);
  c.dual_path = parse_dual_path(f.dual_path);
  c.prune_set = prune_set_from(f);
  if (c.mode == DecodeMode::prunecd && f.prune_layers.empty() && f.search_report.empty()) {
    throw UsageError("--mode prunecd needs --prune-layers or --search-report");
  }
  if (c.dola_bucket == DolaBucket::custom) {
    if (f.dola_layers.empty()) throw UsageError("--dola-bucket custom needs --dola-layers");
    c.dola_layers = parse_layers_flag("--dola-layers", f.dola_layers);
  }
  if (!f.ignore_eos && tok.eos()) c.stop_ids.push_back(*tok.eos());
  try {
    c.validate(model.config());
  } catch (const ContractViolation& e) {
    throw UsageError(e.what());
  }
  return c;
}

Model require_model(const GlobalFlags& g) {
  if (g.model.empty()) throw UsageError("--model is required");
  return load_model(g.model);
}

json global_echo(const GlobalFlags& g) {
  return json{{"model", g.model}, {"tokenizer", g.tokenizer.empty() ? "byte" : g.tokenizer},
              {"seed", g.seed}};
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f << contents;
  if (!f) throw Error("failed writing " + path);
}

// Generated text from a byte-level model need not be valid UTF-8; token ids stay exact.
void write_json(const std::string& path, const json& j) {
  write_file(path, j.dump(2, ' ', false, json::error_handler_t::replace) + "\n");
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// Commands

struct GenerateFlags {
  DecodeFlags decode;
  std::string prompt;
  std::string trace;
};

int cmd_generate(const GlobalFlags& g, const GenerateFlags& f, std::ostream& out) {
  const Model model = require_model(g);
  const auto tok = make_tokenizer(g.tokenizer);
  const DecodeConfig config = resolve_decode(f.decode, model, *tok);
  const GenerationResult r = Generator(model, *tok).generate(f.prompt, config);
  out << r.text << '\n';
  if (!f.trace.empty()) {
    std::string lines;
    for (const auto& t : r.traces) {
      lines += to_json(t).dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
    }
    write_file(f.trace, lines);
  }
  if (!g.out.empty()) {
    write_json(g.out, json{{"config", {{"global", global_echo(g)}, {"decode", to_json(config)}}},
                           {"prompt", f.prompt},
                           {"prompt_tokens", r.prompt_tokens},
                           {"tokens", r.tokens},
                           {"text", r.text}});
  }
  return kExitOk;
}

struct SearchFlags {
  std::string mc;
  std::size_t k = 4;
  std::string filter_corpus;
  std::size_t filter_count = 0;
  std::size_t window = 512;
  bool exhaustive = false;
  std::string scoring = "sum";
};

int cmd_search(const GlobalFlags& g, const SearchFlags& f, std::ostream& out) {
  const Model model = require_model(g);
  const auto tok = make_tokenizer(g.tokenizer);
  const auto items = load_mc_jsonl(f.mc);
  SearchOptions opt;
  opt.k = f.k;
  opt.scoring = parse_option_scoring(f.scoring);
  opt.exhaustive = f.exhaustive;
  opt.filter_count = f.filter_count;
  opt.window = f.window;
  if (!f.filter_corpus.empty()) opt.corpus = tok->encode(read_text(f.filter_corpus), false);

  SearchReport report = run_search(model, *tok, items, opt);
  report.config["global"] = global_echo(g);
  report.config["mc"] = f.mc;
  report.config["filter_corpus"] = f.filter_corpus;
  out << "chosen pruning set: " << report.chosen.to_string() << '\n';
  for (const auto& r : report.records) {
    out << "  layer " << r.layer << "  delta " << fixed(r.delta) << '\n';
  }
  if (!g.out.empty()) write_json(g.out, to_json(report));
  return kExitOk;
}

struct DiagnoseFlags {
  DecodeFlags decode;
  std::string prompts;
  std::size_t exit_layer = 0;
  std::size_t topk = kDefaultTopK;
  std::size_t positions = 1;
  std::string jsd_csv;
  std::string histogram;
};

int cmd_diagnose(const GlobalFlags& g, const DiagnoseFlags& f, std::ostream& out) {
  const Model model = require_model(g);
  const auto tok = make_tokenizer(g.tokenizer);
  const auto prompts = load_prompts(f.prompts);
  const LayerSet prune = prune_set_from(f.decode);
  const DiagnosticsReport report = flatness_informativeness_sweep(
      model, *tok, prompts, f.exit_layer, prune, f.topk, f.positions);

  out << "samples " << report.sample_count << '\n'
      << "entropy  full " << fixed(report.entropy_full) << "  early-exit "
      << fixed(report.entropy_early_exit) << "  pruned " << fixed(report.entropy_pruned) << '\n'
      << "top-" << report.k << " overlap  early-exit " << fixed(report.overlap_early_exit)
      << "  pruned " << fixed(report.overlap_pruned) << '\n';

  json j{{"config", {{"global", global_echo(g)},
                     {"prompts", f.prompts},
                     {"exit_layer", f.exit_layer},
                     {"prune_set", prune.indices()},
                     {"topk", f.topk},
                     {"positions", f.positions}}},
         {"report", to_json(report)}};

  if (!f.jsd_csv.empty() || !f.histogram.empty()) {
    const DecodeConfig config = resolve_decode(f.decode, model, *tok);
    std::vector<JsdMatrix> matrices;
    for (const auto& p : prompts) matrices.push_back(jsd_matrix(model, *tok, p, config));
    j["config"]["decode"] = to_json(config);
    if (!f.jsd_csv.empty()) {
      std::ostringstream csv;
      write_jsd_csv(csv, matrices);
      write_file(f.jsd_csv, csv.str());
    }
    const LayerSet bucket = dola_candidate_layers(config.dola_bucket, model.config().n_layers,
                                                  config.dola_layers);
    const ExitHistogram h = exit_layer_histogram(matrices, bucket);
    j["histogram"] = to_json(h);
    if (!f.histogram.empty()) write_json(f.histogram, to_json(h));
    out << "exit-layer histogram over " << h.total << " tokens:";
    for (std::size_t l : bucket) out << ' ' << l << ':' << h.counts.at(l);
    out << '\n';
  }
  if (!g.out.empty()) write_json(g.out, j);
  return kExitOk;
}

struct EvalFlags {
  DecodeFlags decode;
  std::string mc;
  std::string metrics = "all";
  std::string scoring = "sum";
  std::string scores_out;
  std::string qa;
  std::string qa_template;
};

int cmd_eval(const GlobalFlags& g, const EvalFlags& f, std::ostream& out) {
  if (f.mc.empty() && f.qa.empty()) throw UsageError("eval needs --mc and/or --qa");
  if (!f.qa.empty() && f.qa_template.empty()) throw UsageError("--qa needs --template");
  const Model model = require_model(g);
  const auto tok = make_tokenizer(g.tokenizer);
  json j{{"config", {{"global", global_echo(g)}}}};

  if (!f.mc.empty()) {
    const auto items = load_mc_jsonl(f.mc);
    const LayerSet layers = model.all_layers().without(prune_set_from(f.decode));
    const bool want_mc23 = f.metrics == "all";
    const OptionScoring scoring = parse_option_scoring(f.scoring);
    const auto scores = score_options(model, *tok, items, layers, scoring);
    const McMetrics m = mc_metrics(items, scores, want_mc23);
    j["config"]["mc"] = {{"path", f.mc}, {"layers", layers.indices()},
                         {"scoring", f.scoring}, {"metrics", f.metrics}};
    j["mc"] = {{"mc1", m.mc1}, {"items", items.size()}};
    out << "MC1 " << fixed(m.mc1);
    if (want_mc23) {
      j["mc"]["mc2"] = *m.mc2;
      j["mc"]["mc3"] = *m.mc3;
      out << "  MC2 " << fixed(*m.mc2) << "  MC3 " << fixed(*m.mc3);
    }
    out << '\n';
    if (!f.scores_out.empty()) write_json(f.scores_out, json{{"scores", scores}});
  }
  if (!f.qa.empty()) {
    const auto items = load_qa_jsonl(f.qa);
    const DecodeConfig config = resolve_decode(f.decode, model, *tok);
    const QaReport r = evaluate_qa(model, *tok, items, config, read_text(f.qa_template));
    j["config"]["qa"] = {{"path", f.qa}, {"template", f.qa_template}, {"decode", to_json(config)}};
    j["qa"] = {{"em", r.em}, {"f1", r.f1}, {"items", r.count}, {"predictions", r.predictions}};
    out << "EM " << fixed(r.em) << "  F1 " << fixed(r.f1) << '\n';
  }
  if (!g.out.empty()) write_json(g.out, j);
  return kExitOk;
}

struct BenchFlags {
  DecodeFlags decode;
  std::string prompts;
  std::size_t warmup = 1;
  std::size_t runs = 5;
};

int cmd_bench(const GlobalFlags& g, const BenchFlags& f, std::ostream& out) {
  const Model model = require_model(g);
  const auto tok = make_tokenizer(g.tokenizer);
  const auto prompts = load_prompts(f.prompts);
  const DecodeConfig config = resolve_decode(f.decode, model, *tok);
  if (f.runs == 0) throw UsageError("--runs must be at least 1");
  if (f.warmup == 0) throw UsageError("--warmup must be at least 1");

  std::vector<BenchResult> results;
  for (std::size_t i = 0; i < f.runs; ++i) {
    results.push_back(bench(model, *tok, prompts, config, f.warmup, g.model));
  }
  std::vector<double> walls;
  for (const auto& r : results) walls.push_back(r.wall_seconds);
  std::sort(walls.begin(), walls.end());
  const double median = walls[walls.size() / 2];
  const std::size_t tokens = results.front().tokens_generated;

  out << to_string(config.mode) << ": " << tokens << " tokens, median "
      << fixed(median, 6) << " s, " << fixed(static_cast<double>(tokens) / median, 1)
      << " tokens/s\n";
  if (!g.out.empty()) {
    json runs = json::array();
    for (const auto& r : results) runs.push_back(to_json(r));
    write_json(g.out, json{{"config", {{"global", global_echo(g)},
                                       {"decode", to_json(config)},
                                       {"prompts", f.prompts},
                                       {"warmup", f.warmup},
                                       {"runs", f.runs}}},
                           {"tokens_generated", tokens},
                           {"timing", {{"runs", runs},
                                       {"median_wall_seconds", median},
                                       {"median_tokens_per_second",
                                        static_cast<double>(tokens) / median}}}});
  }
  return kExitOk;
}

int cmd_init_tiny(const GlobalFlags& g, std::ostream& out) {
  if (g.out.empty()) throw UsageError("init-tiny needs --out");
  const ModelConfig config = tiny_config();
  save_weights(g.out, config, make_random_weights(config, g.seed));
  out << "wrote " << g.out << " (seed " << g.seed << ")\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layer-pruned contrastive decoding engine", "prunecd"};
  app.fallthrough();
  app.require_subcommand(1);

  GlobalFlags g;
  app.add_option("--model", g.model, "Weights file (.pcdw)");
  app.add_option("--tokenizer", g.tokenizer,
                 "Directory with vocab.json and merges.txt; byte-level when omitted");
  app.add_option("--seed", g.seed, "Seed for init-tiny; echoed in reports")->capture_default_str();
  app.add_option("--out", g.out, "Output file");

  GenerateFlags gen;
  auto* generate = app.add_subcommand("generate", "Generate a continuation");
  generate->add_option("--prompt", gen.prompt, "Prompt text")->required();
  generate->add_option("--trace", gen.trace, "Write per-step traces (JSON lines)");
  add_decode_flags(generate, gen.decode);

  SearchFlags sf;
  auto* search = app.add_subcommand("search", "Search the amateur pruning set");
  search->add_option("--mc", sf.mc, "Multiple-choice validation set (JSON lines)")->required();
  search->add_option("--k", sf.k, "Number of layers to prune")->required();
  search->add_option("--filter-corpus", sf.filter_corpus, "Plain text for perplexity filtering");
  search->add_option("--filter-count", sf.filter_count, "Layers kept by the filter (0: n/2)")
      ->capture_default_str();
  search->add_option("--window", sf.window, "Filter window in tokens")->capture_default_str();
  search->add_flag("--exhaustive", sf.exhaustive, "Score every k-subset (small models only)");
  search->add_option("--scoring", sf.scoring, "sum | mean")
      ->check(CLI::IsMember({"sum", "mean"}))
      ->capture_default_str();

  DiagnoseFlags df;
  auto* diagnose = app.add_subcommand("diagnose", "Entropy, top-k overlap and JSD diagnostics");
  diagnose->add_option("--prompts", df.prompts, "Prompts (JSON string per line)")->required();
  diagnose->add_option("--exit-layer", df.exit_layer, "Early-exit layer")->required();
  diagnose->add_option("--topk", df.topk, "Top-k size for overlap")->capture_default_str();
  diagnose->add_option("--positions", df.positions, "Generated positions per prompt")
      ->capture_default_str();
  diagnose->add_option("--jsd-csv", df.jsd_csv, "Write the per-token, per-layer JSD matrix");
  diagnose->add_option("--histogram", df.histogram, "Write the exit-layer histogram");
  add_decode_flags(diagnose, df.decode);

  EvalFlags ef;
  auto* eval = app.add_subcommand("eval", "Multiple-choice and QA metrics");
  eval->add_option("--mc", ef.mc, "Multiple-choice set (JSON lines)");
  eval->add_option("--metrics", ef.metrics, "mc1 | all")
      ->check(CLI::IsMember({"mc1", "all"}))
      ->capture_default_str();
  eval->add_option("--scoring", ef.scoring, "sum | mean")
      ->check(CLI::IsMember({"sum", "mean"}))
      ->capture_default_str();
  eval->add_option("--scores-out", ef.scores_out, "Write per-option log-likelihoods");
  eval->add_option("--qa", ef.qa, "QA set (JSON lines)");
  eval->add_option("--template", ef.qa_template, "Prompt template file with {question}");
  add_decode_flags(eval, ef.decode);

  BenchFlags bf;
  auto* benchc = app.add_subcommand("bench", "Decoding throughput");
  benchc->add_option("--prompts", bf.prompts, "Prompts (JSON string per line)")->required();
  benchc->add_option("--warmup", bf.warmup, "Discarded warm-up runs")->capture_default_str();
  benchc->add_option("--runs", bf.runs, "Timed runs (median reported)")->capture_default_str();
  add_decode_flags(benchc, bf.decode);

  auto* init = app.add_subcommand("init-tiny", "Write the seeded 8-layer test model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*generate) return cmd_generate(g, gen, out);
    if (*search) return cmd_search(g, sf, out);
    if (*diagnose) return cmd_diagnose(g, df, out);
    if (*eval) return cmd_eval(g, ef, out);
    if (*benchc) return cmd_bench(g, bf, out);
    if (*init) return cmd_init_tiny(g, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace prunecd
