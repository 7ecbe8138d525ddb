// SPDX-License-Identifier: Apache-2.0
#include "unlearn/rundir.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "unlearn/checkpoint.hpp"
#include "unlearn/error.hpp"
#include "unlearn/report.hpp"

namespace unlearn {
namespace {

using nlohmann::json;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_pairs(const std::filesystem::path& path, const std::vector<PairedSample>& pairs) {
  std::ostringstream os;
  for (const auto& p : pairs) {
    os << json{{"forget", p.forget.id},
               {"learn", p.learn.id},
               {"similarity", p.similarity},
               {"status", p.active() ? "active" : "forgotten"},
               {"forgotten_epoch", p.forgotten_epoch}}
              .dump()
       << '\n';
  }
  write_text(path, os.str());
}

}  // namespace

Termination parse_termination(const std::string& text) {
  for (auto t : {Termination::kStopReached, Termination::kAllForgotten, Termination::kMaxEpochs}) {
    if (to_string(t) == text) return t;
  }
  throw FormatError("unknown termination reason '" + text + "'");
}

void write_run_directory(const std::filesystem::path& dir, const ExperimentConfig& config, const Corpus& corpus,
                         const Corpus& heldout, const ModelState& frozen, const RunResult& result) {
  if (result.history.empty()) throw ParameterError("run result has no reports");
  std::filesystem::create_directories(dir);
  write_text(dir / "config.conf", render_config(config));
  save_corpus(corpus, dir / "corpus.jsonl");
  save_corpus(heldout, dir / "heldout.jsonl");
  save_checkpoint(frozen, dir / "frozen.ckpt");
  save_checkpoint(result.model, dir / "final.ckpt");
  write_pairs(dir / "pairs.jsonl", result.pairs);
  write_text(dir / "baseline.json", to_json(result.history.front()).dump(2) + "\n");
  write_epoch_lines(result.history, dir / "epochs.jsonl");
  const json term = {{"format_version", kRunFormatVersion},
                     {"mode", to_string(config.run.mode)},
                     {"seed", config.run.seed},
                     {"termination", to_string(result.termination)},
                     {"converged", result.converged},
                     {"epochs", result.history.back().epoch}};
  write_text(dir / "termination.json", term.dump(2) + "\n");
}

RunRecord read_run_directory(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw FormatError(dir.string() + " is not a run directory");
  RunRecord r;
  r.config = parse_config(read_text(dir / "config.conf"));
  r.corpus = load_corpus(dir / "corpus.jsonl");
  r.heldout = load_corpus(dir / "heldout.jsonl", true);
  r.frozen = load_checkpoint(dir / "frozen.ckpt");
  r.final_model = load_checkpoint(dir / "final.ckpt");
  r.history = read_epoch_lines(dir / "epochs.jsonl");
  if (r.history.empty()) throw FormatError((dir / "epochs.jsonl").string() + " holds no reports");
  const json term = read_json(dir / "termination.json");
  try {
    if (term.at("format_version").get<int>() != kRunFormatVersion) throw FormatError("unsupported run format version");
    r.termination = parse_termination(term.at("termination").get<std::string>());
    r.converged = term.at("converged").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError((dir / "termination.json").string() + ": " + e.what());
  }
  return r;
}

EpochReport reevaluate(const RunRecord& record) {
  const auto forget = record.corpus.forget_samples();
  EpochReport r = evaluate_model(record.final_model, record.frozen, forget, record.heldout.samples,
                                 record.config.run.thresholds, record.config.run.el_order);
  r.epoch = record.history.back().epoch;
  return r;
}

bool same_metrics(const EpochReport& a, const EpochReport& b) {
  if (a.el != b.el || a.ma != b.ma || a.bleu != b.bleu || a.embed_f1 != b.embed_f1 || a.entropy != b.entropy ||
      a.ppl != b.ppl || a.stop_reached != b.stop_reached || a.samples.size() != b.samples.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    if (!(a.samples[i].metrics == b.samples[i].metrics)) return false;
  }
  return true;
}

void write_failure_dump(const std::filesystem::path& dir, const RunState& run, const std::string& what) {
  std::filesystem::create_directories(dir);
  save_checkpoint(run.model, dir / "failure.ckpt");
  write_epoch_lines(run.history, dir / "epochs.jsonl");
  const json info = {{"format_version", kRunFormatVersion},
                     {"error", what},
                     {"epoch", run.epoch + 1},
                     {"optimizer_step", run.model.step}};
  write_text(dir / "failure.json", info.dump(2) + "\n");
}

}  // namespace unlearn
