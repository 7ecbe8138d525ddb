// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "unlearn/config.hpp"
#include "unlearn/corpus.hpp"
#include "unlearn/engine.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

inline constexpr int kRunFormatVersion = 1;

// A self-contained run directory:
//   config.conf       effective config (mode and seed of this run)
//   corpus.jsonl      training corpus, forget flags included
//   heldout.jsonl     held-out split
//   frozen.ckpt       pre-unlearning model
//   final.ckpt        model after the last epoch
//   pairs.jsonl       forget/learn pairs with their final status
//   baseline.json     the epoch-0 report
//   epochs.jsonl      every report, epoch 0 first
//   termination.json  reason, convergence flag, epoch count
struct RunRecord {
  ExperimentConfig config;
  Corpus corpus;
  Corpus heldout;
  ModelState frozen;
  ModelState final_model;
  std::vector<EpochReport> history;
  Termination termination = Termination::kMaxEpochs;
  bool converged = false;
};

Termination parse_termination(const std::string& text);  // throws FormatError

void write_run_directory(const std::filesystem::path& dir, const ExperimentConfig& config, const Corpus& corpus,
                         const Corpus& heldout, const ModelState& frozen, const RunResult& result);

RunRecord read_run_directory(const std::filesystem::path& dir);

// Metrics of the recorded final model, computed from scratch.
EpochReport reevaluate(const RunRecord& record);

// Equality of every metric a fresh evaluation can reproduce: the aggregates,
// stop flag and per-sample metrics. Training-side fields are ignored.
bool same_metrics(const EpochReport& a, const EpochReport& b);

// Written when a run aborts on a non-finite value: the model at the failing
// step, the reports so far and the error text.
void write_failure_dump(const std::filesystem::path& dir, const RunState& run, const std::string& what);

}  // namespace unlearn
