// SPDX-License-Identifier: Apache-2.0
// Command-line driver: synth, pretrain, unlearn, eval, sweep, report, pipeline.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "unlearn/checkpoint.hpp"
#include "unlearn/config.hpp"
#include "unlearn/corpus.hpp"
#include "unlearn/engine.hpp"
#include "unlearn/error.hpp"
#include "unlearn/report.hpp"
#include "unlearn/rundir.hpp"

namespace fs = std::filesystem;
using namespace unlearn;

namespace {

enum Exit : int { kOk = 0, kFailure = 1, kConfig = 2, kNotConverged = 3, kNumeric = 4 };

// Raised to leave a command with a specific exit code after reporting.
struct ExitWith {
  int code;
};

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string data;
  std::string out;
};

struct Paths {
  fs::path corpus, heldout, pretrained, pretrain_log;
};

Paths data_paths(const fs::path& dir) {
  return {dir / "corpus.jsonl", dir / "heldout.jsonl", dir / "pretrained.ckpt", dir / "pretrain_log.jsonl"};
}

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_config(c.config);
  if (c.config.empty()) {
    cfg.pretrain.model.vocab_size = cfg.corpus.vocab_size;
    cfg.validate();
  }
  if (!c.data.empty()) cfg.data_dir = c.data;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

void require(const fs::path& p, const char* hint) {
  if (!fs::exists(p)) throw ConfigError(p.string() + " does not exist; " + hint);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void print_epoch(const EpochReport& r) {
  std::fprintf(stderr, "epoch %3d  EL %.4f  MA %.4f  BLEU %.4f  embed %.4f  H %.3f  PPL %.3f  active %d%s\n", r.epoch,
               r.el, r.ma, r.bleu, r.embed_f1, r.entropy, r.ppl, r.n_active, r.stop_reached ? "  stop" : "");
}

struct ProgressObserver : RunObserver {
  void on_epoch(const EpochReport& r) override { print_epoch(r); }
};

// ---- synth --------------------------------------------------------------

int cmd_synth(const Common& c) {
  auto cfg = load(c);
  if (c.seed) cfg.corpus.seed = *c.seed;
  const auto paths = data_paths(c.out.empty() ? cfg.data_dir : fs::path(c.out));
  fs::create_directories(paths.corpus.parent_path());
  const Corpus corpus = synthesize_corpus(cfg.corpus);
  const Corpus heldout = synthesize_heldout(cfg.corpus, cfg.heldout_samples);
  save_corpus(corpus, paths.corpus);
  save_corpus(heldout, paths.heldout);
  std::cout << "wrote " << corpus.samples.size() << " samples (" << corpus.forget_ids.size() << " secret) to "
            << paths.corpus << " and " << heldout.samples.size() << " held-out samples to " << paths.heldout << "\n";
  return kOk;
}

// ---- pretrain -----------------------------------------------------------

int cmd_pretrain(const Common& c) {
  auto cfg = load(c);
  if (c.seed) cfg.pretrain.seed = *c.seed;
  const auto paths = data_paths(cfg.data_dir);
  require(paths.corpus, "run 'unlearn synth' first");
  const Corpus corpus = load_corpus(paths.corpus);
  const fs::path out = c.out.empty() ? paths.pretrained : fs::path(c.out);
  std::ostringstream log;
  auto progress = [&](const PretrainEpoch& e) {
    const nlohmann::json j = {{"epoch", e.epoch}, {"mean_nll", e.mean_nll}, {"forget_ma", e.forget_ma},
                              {"forget_el", e.forget_el}};
    log << j.dump() << '\n';
    if (e.forget_ma >= 0.0) {
      std::fprintf(stderr, "epoch %3d  nll %.4f  forget MA %.4f%s\n", e.epoch, e.mean_nll, e.forget_ma,
                   e.forget_el >= 0.0 ? ("  EL " + num(e.forget_el)).c_str() : "");
    }
  };
  try {
    const auto result = memorize_pretrain(cfg.pretrain, corpus, progress);
    write_text(out.parent_path() / "pretrain_log.jsonl", log.str());
    save_checkpoint(result.model, out);
    std::cout << "memorized after " << result.log.size() << " epochs: forget MA " << result.forget_ma << ", EL"
              << cfg.pretrain.el_order << " " << result.forget_el << "; wrote " << out << "\n";
  } catch (const TrainingFailure& e) {
    write_text(out.parent_path() / "pretrain_log.jsonl", log.str());
    std::cerr << "error: " << e.what() << "\n";
    throw ExitWith{kNotConverged};
  }
  return kOk;
}

// ---- unlearn --------------------------------------------------------------

struct Inputs {
  Corpus corpus;
  Corpus heldout;
  ModelState pretrained;
};

Inputs load_inputs(const ExperimentConfig& cfg, const std::string& checkpoint) {
  const auto paths = data_paths(cfg.data_dir);
  require(paths.corpus, "run 'unlearn synth' first");
  require(paths.heldout, "run 'unlearn synth' first");
  const fs::path ckpt = checkpoint.empty() ? paths.pretrained : fs::path(checkpoint);
  require(ckpt, "run 'unlearn pretrain' first");
  return {load_corpus(paths.corpus), load_corpus(paths.heldout, true), load_checkpoint(ckpt)};
}

fs::path run_dir_for(const fs::path& root, Mode mode, std::uint64_t seed) {
  return root / (to_string(mode) + "-seed" + std::to_string(seed));
}

// One run into `dir`; returns false when it did not converge.
bool unlearn_one(ExperimentConfig cfg, const Inputs& in, Mode mode, std::uint64_t seed, const fs::path& dir) {
  cfg.run.mode = mode;
  cfg.run.seed = seed;
  cfg.seeds = {seed};
  std::fprintf(stderr, "== %s seed %llu -> %s\n", to_string(mode).c_str(), static_cast<unsigned long long>(seed),
               dir.string().c_str());
  ProgressObserver progress;
  RunState run = start_run(cfg.run, in.corpus, in.heldout, in.pretrained);
  print_epoch(run.history.front());
  RunResult result;
  try {
    result = finish_run(run, cfg.run, &progress);
  } catch (const NumericError& e) {
    write_failure_dump(dir, run, e.what());
    fs::create_directories(dir);
    write_text(dir / "config.conf", render_config(cfg));
    std::cerr << "error: " << e.what() << "; state written to " << dir << "\n";
    throw ExitWith{kNumeric};
  }
  write_run_directory(dir, cfg, in.corpus, in.heldout, in.pretrained, result);
  std::cout << run_summary(to_string(mode) + " seed " + std::to_string(seed), result.history.front(),
                           result.history.back(), to_string(result.termination));
  return result.converged;
}

std::vector<std::uint64_t> seeds_of(const ExperimentConfig& cfg, const Common& c) {
  return c.seed ? std::vector<std::uint64_t>{*c.seed} : cfg.seeds;
}

int cmd_unlearn(const Common& c, const std::string& mode_flag, const std::string& checkpoint) {
  auto cfg = load(c);
  const Mode mode = mode_flag.empty() ? cfg.run.mode : parse_mode(mode_flag);
  const auto seeds = seeds_of(cfg, c);
  const Inputs in = load_inputs(cfg, checkpoint);
  const fs::path root = c.out.empty() ? cfg.out_dir : fs::path(c.out);
  bool all = true;
  for (auto seed : seeds) {
    // A single seed with an explicit --out writes straight into that directory.
    const fs::path dir = (seeds.size() == 1 && !c.out.empty()) ? root : run_dir_for(root, mode, seed);
    all = unlearn_one(cfg, in, mode, seed, dir) && all;
  }
  return all ? kOk : kNotConverged;
}

// ---- eval -----------------------------------------------------------------

int cmd_eval(const Common& c, const std::string& run_dir, const std::string& checkpoint, const std::string& frozen) {
  nlohmann::json out;
  int code = kOk;
  if (!run_dir.empty()) {
    const RunRecord rec = read_run_directory(run_dir);
    const EpochReport fresh = reevaluate(rec);
    const bool same = same_metrics(fresh, rec.history.back());
    out = to_json(fresh);
    out["reproduces_recorded"] = same;
    std::cerr << (same ? "recorded final metrics reproduced exactly\n" : "MISMATCH against recorded final metrics\n");
    if (!same) code = kFailure;
  } else {
    auto cfg = load(c);
    const auto paths = data_paths(cfg.data_dir);
    require(paths.corpus, "run 'unlearn synth' first");
    require(paths.heldout, "run 'unlearn synth' first");
    const fs::path ref = frozen.empty() ? paths.pretrained : fs::path(frozen);
    const fs::path model = checkpoint.empty() ? ref : fs::path(checkpoint);
    require(ref, "pass --frozen or run 'unlearn pretrain'");
    require(model, "pass --checkpoint");
    const Corpus corpus = load_corpus(paths.corpus);
    const Corpus heldout = load_corpus(paths.heldout, true);
    const auto forget = corpus.forget_samples();
    out = to_json(evaluate_model(load_checkpoint(model), load_checkpoint(ref), forget, heldout.samples,
                                 cfg.run.thresholds, cfg.run.el_order));
  }
  if (c.out.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    write_text(c.out, out.dump(2) + "\n");
    std::cout << "wrote " << c.out << "\n";
  }
  return code;
}

// ---- sweep ----------------------------------------------------------------

std::string cell_name(const SweepCell& cell) {
  return "alpha" + num(cell.alpha) + "_beta" + num(cell.beta) + "_lr" + num(cell.lr);
}

int cmd_sweep(const Common& c, const std::string& checkpoint) {
  auto cfg = load(c);
  if (c.seed) cfg.run.seed = *c.seed;
  cfg.run.mode = Mode::kIcu;
  const Inputs in = load_inputs(cfg, checkpoint);
  const fs::path root = c.out.empty() ? cfg.out_dir / "sweep" : fs::path(c.out);
  const auto grid = cfg.sweep_grid();
  std::fprintf(stderr, "sweeping %zu cells at seed %llu\n", grid.size(),
               static_cast<unsigned long long>(cfg.run.seed));
  const auto rows = ablation_sweep(cfg.run, grid, in.corpus, in.heldout, in.pretrained);
  std::vector<AblationRow> table;
  for (const auto& row : rows) {
    AblationRow a{row.cell.alpha, row.cell.beta, row.cell.lr, row.result.has_value(), {}, "", row.error};
    if (row.result) {
      const auto& h = row.result->history;
      a.metrics = table_row(cell_name(row.cell), h.back());
      a.termination = to_string(row.result->termination);
      ExperimentConfig cell_cfg = cfg;
      cell_cfg.run.weights = {row.cell.alpha, row.cell.beta};
      cell_cfg.run.lr = row.cell.lr;
      cell_cfg.seeds = {cfg.run.seed};
      write_run_directory(root / cell_name(row.cell), cell_cfg, in.corpus, in.heldout, in.pretrained, *row.result);
      std::fprintf(stderr, "%s: %d epochs, %s, PPL ratio %.4f\n", cell_name(row.cell).c_str(), h.back().epoch,
                   a.termination.c_str(), h.back().ppl / h.front().ppl);
    } else {
      std::fprintf(stderr, "%s: failed: %s\n", cell_name(row.cell).c_str(), row.error.c_str());
    }
    table.push_back(std::move(a));
  }
  write_text(root / "ablation.csv", ablation_csv(table));
  std::cout << ablation_csv(table);
  return kOk;
}

// ---- report ---------------------------------------------------------------

int cmd_report(const Common& c, const std::vector<std::string>& runs, std::size_t n_examples) {
  if (runs.empty()) throw ConfigError("report needs at least one --run directory");
  const fs::path out = c.out.empty() ? fs::path(runs.front()) / "report" : fs::path(c.out);
  std::vector<TableRow> rows;
  std::string summary;
  nlohmann::json examples = nlohmann::json::object();
  std::string examples_txt;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const RunRecord rec = read_run_directory(runs[i]);
    const std::string label = to_string(rec.config.run.mode) + " seed " + std::to_string(rec.config.run.seed);
    if (i == 0) rows.push_back(table_row("original", rec.history.front()));
    rows.push_back(table_row(label, rec.history.back()));
    summary += run_summary(label + " (" + runs[i] + ")", rec.history.front(), rec.history.back(),
                           to_string(rec.termination)) +
               "\n";
    const auto vocab = Vocabulary::for_grammar(rec.corpus.vocab_size);
    const auto forget = rec.corpus.forget_samples();
    const auto ex = generation_examples(vocab, forget, rec.history.front(), rec.history.back(), n_examples);
    examples[label] = examples_json(ex);
    examples_txt += "### " + label + "\n\n" + examples_text(ex);
  }
  const std::string table = comparison_csv(rows);
  write_text(out / "table.csv", table);
  write_text(out / "summary.txt", summary);
  write_text(out / "examples.txt", examples_txt);
  write_text(out / "examples.json", nlohmann::json{{"format_version", kReportFormatVersion}, {"runs", examples}}.dump(2) + "\n");
  std::cout << table << "\n" << summary << "wrote report to " << out << "\n";
  return kOk;
}

// ---- pipeline ---------------------------------------------------------------

int cmd_pipeline(const Common& c) {
  auto cfg = load(c);
  const fs::path root = c.out.empty() ? cfg.out_dir : fs::path(c.out);
  Common sub = c;
  sub.out.clear();
  sub.data = (root / "data").string();
  cmd_synth(sub);
  cmd_pretrain(sub);
  cfg.data_dir = sub.data;
  const Inputs in = load_inputs(cfg, "");
  const auto seeds = seeds_of(cfg, c);
  std::vector<std::string> dirs;
  bool all = true;
  for (auto seed : seeds) {
    for (Mode m : {Mode::kIcu, Mode::kKumpr}) {
      const auto dir = run_dir_for(root, m, seed);
      all = unlearn_one(cfg, in, m, seed, dir) && all;
      dirs.push_back(dir.string());
    }
  }
  Common rep;
  rep.out = (root / "report").string();
  cmd_report(rep, dirs, 5);
  return all ? kOk : kNotConverged;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Iterative contrastive unlearning on a synthetic memorization corpus"};
  app.require_subcommand(1);
  Common common;
  std::string mode, checkpoint, frozen, run_dir;
  std::vector<std::string> runs;
  std::size_t n_examples = 5;

  auto add_common = [&](CLI::App* sub, bool with_seed = true) {
    sub->add_option("--config", common.config, "Experiment config file")->check(CLI::ExistingFile);
    if (with_seed) sub->add_option("--seed", common.seed, "Override the seed (list) of this command");
    sub->add_option("--data", common.data, "Data directory (overrides paths.data)");
    sub->add_option("--out", common.out, "Output path");
  };

  auto* synth = app.add_subcommand("synth", "Write the synthetic corpus and held-out split");
  add_common(synth);
  auto* pretrain = app.add_subcommand("pretrain", "Train the memorizing model from scratch");
  add_common(pretrain);
  auto* unlearn = app.add_subcommand("unlearn", "Run ICU or KUMPR and write run directories");
  add_common(unlearn);
  unlearn->add_option("--mode", mode, "icu or kumpr (overrides unlearn.mode)")->check(CLI::IsMember({"icu", "kumpr"}));
  unlearn->add_option("--checkpoint", checkpoint, "Pretrained checkpoint (default: <data>/pretrained.ckpt)");
  auto* eval = app.add_subcommand("eval", "Compute metrics for a checkpoint or re-check a run directory");
  add_common(eval, false);
  eval->add_option("--run", run_dir, "Run directory whose final metrics to reproduce");
  eval->add_option("--checkpoint", checkpoint, "Model to evaluate");
  eval->add_option("--frozen", frozen, "Pre-unlearning model for embedding scores");
  auto* sweep = app.add_subcommand("sweep", "Ablation over sweep.alpha x sweep.beta x sweep.lr");
  add_common(sweep);
  sweep->add_option("--checkpoint", checkpoint, "Pretrained checkpoint");
  auto* report = app.add_subcommand("report", "Tables, summaries and generation examples for run directories");
  report->add_option("--run", runs, "Run directory (repeatable)")->required();
  report->add_option("--out", common.out, "Report directory (default: <first run>/report)");
  report->add_option("--examples", n_examples, "Generation examples per run");
  auto* pipeline = app.add_subcommand("pipeline", "synth, pretrain, ICU and KUMPR for every seed, report");
  add_common(pipeline);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*synth) return cmd_synth(common);
    if (*pretrain) return cmd_pretrain(common);
    if (*unlearn) return cmd_unlearn(common, mode, checkpoint);
    if (*eval) return cmd_eval(common, run_dir, checkpoint, frozen);
    if (*sweep) return cmd_sweep(common, checkpoint);
    if (*report) return cmd_report(common, runs, n_examples);
    if (*pipeline) return cmd_pipeline(common);
  } catch (const ExitWith& e) {
    return e.code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kConfig;
  } catch (const ParameterError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const TrainingFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNotConverged;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kOk;
}
