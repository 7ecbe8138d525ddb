// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "unlearn/corpus.hpp"
#include "unlearn/metrics.hpp"
#include "unlearn/model.hpp"
#include "unlearn/objectives.hpp"
#include "unlearn/optim.hpp"
#include "unlearn/pairing.hpp"

namespace unlearn {

enum class Mode { kIcu, kKumpr };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);  // "icu" | "kumpr"; throws ConfigError

struct PretrainConfig {
  ModelConfig model;
  double lr = 3e-4;
  int batch_size = 16;
  int max_epochs = 600;
  double target_ma = 0.95;  // mean MA over D_fgt
  double target_el = 0.90;  // mean EL_n over D_fgt, checked once MA is reached
  int el_order = 10;
  int eval_every = 5;
  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const PretrainConfig&) const = default;
};

struct PretrainEpoch {
  int epoch = 0;
  double mean_nll = 0.0;     // per predicted token
  double forget_ma = -1.0;   // -1 when not evaluated this epoch
  double forget_el = -1.0;
};

struct PretrainResult {
  ModelState model;
  std::vector<PretrainEpoch> log;
  double forget_ma = 0.0;
  double forget_el = 0.0;
};

using PretrainProgress = std::function<void(const PretrainEpoch&)>;

// Teacher-forced NLL training from a fresh init over the whole corpus until
// mean MA and EL over D_fgt reach their targets. Throws TrainingFailure at the
// epoch cap.
PretrainResult memorize_pretrain(const PretrainConfig& config, const Corpus& corpus,
                                 const PretrainProgress& progress = {});

struct RunConfig {
  LossWeights weights;
  double lr = 1.2e-4;
  int batch_size = 8;
  int max_epochs = 200;
  Thresholds thresholds;
  Mode mode = Mode::kIcu;
  std::uint64_t seed = 1;
  int el_order = 10;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

struct SampleRecord {
  SampleMetrics metrics;
  bool forgotten = false;
  int forgotten_epoch = -1;

  bool operator==(const SampleRecord&) const = default;
};

struct EpochReport {
  int epoch = 0;  // 0 is the pre-unlearning baseline
  double el = 0.0;
  double ma = 0.0;
  double bleu = 0.0;
  double embed_f1 = 0.0;
  double entropy = 0.0;  // bits, greedy continuations of held-out prefixes
  double ppl = 0.0;      // held-out perplexity
  LossBreakdown loss;    // mean over the epoch's pairs; zero at epoch 0
  int n_active = 0;
  int n_forgotten = 0;
  std::vector<std::string> newly_forgotten;
  bool stop_reached = false;
  std::vector<SampleRecord> samples;

  bool operator==(const EpochReport&) const = default;
};

enum class Termination { kStopReached, kAllForgotten, kMaxEpochs };

std::string to_string(Termination t);

struct RunState;

// Hooks for instrumentation. on_batch sees the pair indices that are about to
// contribute gradients to one optimizer step.
class RunObserver {
 public:
  virtual ~RunObserver() = default;
  virtual void on_batch(int /*epoch*/, std::span<const std::size_t> /*pairs*/, const RunState& /*run*/) {}
  virtual void on_epoch(const EpochReport& /*report*/) {}
};

struct RunState {
  ModelState model;
  ModelState frozen;
  std::vector<PairedSample> pairs;
  std::vector<PredictiveDistribution> reference;  // frozen distribution per learn sample
  std::vector<TokenSequence> heldout;
  int epoch = 0;
  std::vector<EpochReport> history;
  Adam optimizer;
  std::mt19937_64 rng;
};

struct RunResult {
  ModelState model;
  std::vector<PairedSample> pairs;
  std::vector<EpochReport> history;  // history[0] is the baseline
  Termination termination = Termination::kMaxEpochs;
  bool converged = false;  // stop_reached at the last epoch
};

// Builds the run state: frozen copy, KNN pairs, reference distributions and
// the baseline report.
RunState start_run(const RunConfig& config, const Corpus& corpus, const Corpus& heldout, const ModelState& pretrained);

// One refinement round with the joint objective over active pairs, followed
// by evaluation and filtering. Throws NumericError on a non-finite loss.
void icu_epoch(RunState& run, const RunConfig& config, RunObserver* observer = nullptr);

// One round of the reversed-likelihood objective over every pair, no filtering.
void kumpr_epoch(RunState& run, const RunConfig& config, RunObserver* observer = nullptr);

// Epoch loop until stop_reached, all pairs forgotten (ICU) or max_epochs.
RunResult finish_run(RunState& run, const RunConfig& config, RunObserver* observer = nullptr);

RunResult run_unlearning(const RunConfig& config, const Corpus& corpus, const Corpus& heldout,
                         const ModelState& pretrained, RunObserver* observer = nullptr);

// Evaluation of any model against D_fgt and the held-out split.
EpochReport evaluate_model(const ModelState& model, const ModelState& frozen, std::span<const TokenSequence> forget,
                           std::span<const TokenSequence> heldout, const Thresholds& th, int el_order);

struct SweepCell {
  double alpha = 0.5;
  double beta = 1.0;
  double lr = 1.2e-4;
};

struct SweepRow {
  SweepCell cell;
  std::optional<RunResult> result;
  std::string error;  // set when the cell failed
};

std::vector<SweepRow> ablation_sweep(const RunConfig& base, std::span<const SweepCell> grid, const Corpus& corpus,
                                     const Corpus& heldout, const ModelState& pretrained);

}  // namespace unlearn
