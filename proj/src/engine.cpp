// SPDX-License-Identifier: Apache-2.0
#include "unlearn/engine.hpp"

#include <algorithm>
#include <numeric>

#include "unlearn/error.hpp"

namespace unlearn {
namespace {

template <class Rng>
void shuffle_indices(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

void check_model_fits(const ModelConfig& config, const Corpus& corpus) {
  if (config.vocab_size != corpus.vocab_size) throw ConfigError("model vocab_size differs from the corpus");
  if (config.context_len < corpus.prefix_len + corpus.suffix_len) throw ConfigError("context_len shorter than samples");
}

double mean_of(std::span<const SampleMetrics> m, double SampleMetrics::*field) {
  double s = 0.0;
  for (const auto& x : m) s += x.*field;
  return m.empty() ? 0.0 : s / static_cast<double>(m.size());
}

std::vector<TokenSequence> forget_set(const RunState& run) {
  std::vector<TokenSequence> out;
  out.reserve(run.pairs.size());
  for (const auto& p : run.pairs) out.push_back(p.forget);
  return out;
}

void finish_report(RunState& run, EpochReport& report) {
  report.n_active = 0;
  report.n_forgotten = 0;
  for (std::size_t i = 0; i < run.pairs.size(); ++i) {
    const auto& p = run.pairs[i];
    report.samples[i].forgotten = !p.active();
    report.samples[i].forgotten_epoch = p.forgotten_epoch;
    if (p.active()) {
      ++report.n_active;
    } else {
      ++report.n_forgotten;
    }
  }
}

void train_epoch(RunState& run, const RunConfig& config, bool icu, RunObserver* observer) {
  config.validate();
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < run.pairs.size(); ++i) {
    if (!icu || run.pairs[i].active()) order.push_back(i);
  }
  if (order.empty()) throw ParameterError("no active pairs left to train on");
  shuffle_indices(order, run.rng);
  run.optimizer.set_lr(config.lr);
  const LossWeights weights = icu ? config.weights : LossWeights{0.0, 0.0};
  const int epoch = run.epoch + 1;

  LossBreakdown sum;
  std::vector<float> grads(run.model.params.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);
  for (std::size_t begin = 0; begin < order.size(); begin += batch) {
    const std::size_t end = std::min(order.size(), begin + batch);
    const std::span<const std::size_t> members(order.data() + begin, end - begin);
    std::fill(grads.begin(), grads.end(), 0.0f);
    const double scale = 1.0 / static_cast<double>(members.size());
    for (std::size_t i : members) {
      const auto& pair = run.pairs[i];
      const auto b = accumulate_pair_gradients<float>(run.model, pair.forget, pair.learn, run.reference[i], weights,
                                                      scale, grads);
      sum.l_fgt += b.l_fgt;
      sum.l_lrn += b.l_lrn;
      sum.l_kl += b.l_kl;
      sum.combined += b.combined;
    }
    if (observer) observer->on_batch(epoch, members, run);
    run.optimizer.step(run.model, grads);
  }

  const auto forget = forget_set(run);
  EpochReport report = evaluate_model(run.model, run.frozen, forget, run.heldout, config.thresholds, config.el_order);
  report.epoch = epoch;
  const auto n = static_cast<double>(order.size());
  report.loss = {sum.l_fgt / n, sum.l_lrn / n, sum.l_kl / n, sum.combined / n};
  if (icu) {
    for (std::size_t i = 0; i < run.pairs.size(); ++i) {
      auto& pair = run.pairs[i];
      if (pair.active() && is_forgotten(report.samples[i].metrics, config.thresholds)) {
        pair.mark_forgotten(epoch);
        report.newly_forgotten.push_back(pair.forget.id);
      }
    }
  }
  finish_report(run, report);
  run.epoch = epoch;
  run.history.push_back(report);
  if (observer) observer->on_epoch(run.history.back());
}

}  // namespace

std::string to_string(Mode mode) { return mode == Mode::kIcu ? "icu" : "kumpr"; }

Mode parse_mode(const std::string& text) {
  if (text == "icu") return Mode::kIcu;
  if (text == "kumpr") return Mode::kKumpr;
  throw ConfigError("unknown mode '" + text + "' (expected icu or kumpr)");
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::kStopReached:
      return "stop_reached";
    case Termination::kAllForgotten:
      return "all_forgotten";
    case Termination::kMaxEpochs:
      return "max_epochs";
  }
  return "unknown";
}

void PretrainConfig::validate() const {
  model.validate();
  if (!(lr > 0.0)) throw ParameterError("pretrain lr must be positive");
  if (batch_size < 1) throw ParameterError("pretrain batch_size must be at least 1");
  if (max_epochs < 1) throw ParameterError("pretrain max_epochs must be at least 1");
  if (eval_every < 1) throw ParameterError("pretrain eval_every must be at least 1");
  if (el_order < 1) throw ParameterError("el_order must be at least 1");
  if (!(target_ma >= 0.0 && target_ma <= 1.0) || !(target_el >= 0.0 && target_el <= 1.0)) {
    throw ParameterError("pretrain targets must lie in [0, 1]");
  }
}

void RunConfig::validate() const {
  weights.validate();
  thresholds.validate();
  if (!(lr > 0.0)) throw ParameterError("unlearning lr must be positive");
  if (batch_size < 1) throw ParameterError("batch_size must be at least 1");
  if (max_epochs < 1) throw ParameterError("max_epochs must be at least 1");
  if (el_order < 1) throw ParameterError("el_order must be at least 1");
}

PretrainResult memorize_pretrain(const PretrainConfig& config, const Corpus& corpus, const PretrainProgress& progress) {
  config.validate();
  corpus.validate();
  check_model_fits(config.model, corpus);
  PretrainResult result;
  result.model = init_model(config.model);
  Adam adam(AdamParams{config.lr});
  std::mt19937_64 rng(config.seed);
  const auto forget = corpus.forget_samples();
  std::vector<std::vector<TokenId>> tokens;
  for (const auto& s : corpus.samples) tokens.push_back(full_sequence(s));
  std::vector<std::size_t> order(tokens.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<float> grads(result.model.params.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    shuffle_indices(order, rng);
    double total = 0.0;
    std::size_t predicted = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t end = std::min(order.size(), begin + batch);
      std::size_t batch_tokens = 0;
      for (std::size_t k = begin; k < end; ++k) batch_tokens += tokens[order[k]].size() - 1;
      const double w = 1.0 / static_cast<double>(batch_tokens);
      std::vector<SequenceLoss<float>> terms;
      for (std::size_t k = begin; k < end; ++k) terms.push_back({tokens[order[k]], w, 0.0, nullptr});
      std::fill(grads.begin(), grads.end(), 0.0f);
      total += accumulate_gradients<float>(result.model, terms, grads) / w;
      predicted += batch_tokens;
      adam.step(result.model, grads);
    }
    PretrainEpoch entry;
    entry.epoch = epoch;
    entry.mean_nll = total / static_cast<double>(predicted);
    const bool last = epoch == config.max_epochs;
    if (epoch % config.eval_every == 0 || last) {
      double sum = 0.0;
      for (const auto& x : forget) sum += ma(result.model, x);
      entry.forget_ma = sum / static_cast<double>(forget.size());
      if (entry.forget_ma >= config.target_ma) {
        const auto m = evaluate_samples(result.model, result.model, forget, static_cast<std::size_t>(config.el_order));
        entry.forget_el = mean_of(m, &SampleMetrics::el);
      }
    }
    result.log.push_back(entry);
    if (progress) progress(entry);
    if (entry.forget_ma >= config.target_ma && entry.forget_el >= config.target_el) {
      result.forget_ma = entry.forget_ma;
      result.forget_el = entry.forget_el;
      return result;
    }
  }
  const auto& last = result.log.back();
  throw TrainingFailure("memorization pretraining stopped at " + std::to_string(config.max_epochs) +
                        " epochs with forget MA " + std::to_string(last.forget_ma) + " and EL " +
                        std::to_string(last.forget_el) + " (targets " + std::to_string(config.target_ma) + ", " +
                        std::to_string(config.target_el) + "); final train nll " + std::to_string(last.mean_nll));
}

EpochReport evaluate_model(const ModelState& model, const ModelState& frozen, std::span<const TokenSequence> forget,
                           std::span<const TokenSequence> heldout, const Thresholds& th, int el_order) {
  if (forget.empty()) throw ParameterError("evaluation needs a nonempty forget set");
  if (heldout.empty()) throw ParameterError("evaluation needs a nonempty held-out split");
  EpochReport report;
  const auto metrics = evaluate_samples(model, frozen, forget, static_cast<std::size_t>(el_order));
  report.el = mean_of(metrics, &SampleMetrics::el);
  report.ma = mean_of(metrics, &SampleMetrics::ma);
  report.bleu = mean_of(metrics, &SampleMetrics::bleu);
  report.embed_f1 = mean_of(metrics, &SampleMetrics::embed_score);
  report.stop_reached = stop_reached(metrics, th);
  std::vector<std::vector<TokenId>> prefixes;
  for (const auto& x : heldout) prefixes.push_back(x.prefix);
  report.entropy = generation_entropy(model, prefixes, heldout.front().suffix.size());
  report.ppl = perplexity(model, heldout);
  report.n_active = static_cast<int>(metrics.size());
  for (const auto& m : metrics) report.samples.push_back({m, false, -1});
  return report;
}

RunState start_run(const RunConfig& config, const Corpus& corpus, const Corpus& heldout, const ModelState& pretrained) {
  config.validate();
  corpus.validate();
  heldout.validate(true);
  check_model_fits(pretrained.config, corpus);
  check_model_fits(pretrained.config, heldout);
  RunState run;
  run.model = pretrained;
  run.frozen = pretrained;
  run.pairs = build_learn_set(corpus, ModelEmbedder(run.frozen));
  for (const auto& p : run.pairs) {
    const auto tokens = full_sequence(p.learn);
    run.reference.push_back(forward<float>(run.frozen, tokens));
  }
  run.heldout = heldout.samples;
  run.optimizer = Adam(AdamParams{config.lr});
  run.rng.seed(config.seed);
  const auto forget = forget_set(run);
  EpochReport baseline = evaluate_model(run.model, run.frozen, forget, run.heldout, config.thresholds, config.el_order);
  finish_report(run, baseline);
  run.history.push_back(std::move(baseline));
  return run;
}

void icu_epoch(RunState& run, const RunConfig& config, RunObserver* observer) {
  train_epoch(run, config, true, observer);
}

void kumpr_epoch(RunState& run, const RunConfig& config, RunObserver* observer) {
  train_epoch(run, config, false, observer);
}

RunResult finish_run(RunState& run, const RunConfig& config, RunObserver* observer) {
  config.validate();
  RunResult result;
  result.termination = Termination::kMaxEpochs;
  if (!run.history.empty() && run.history.back().stop_reached) {
    result.termination = Termination::kStopReached;
  } else {
    while (run.epoch < config.max_epochs) {
      if (config.mode == Mode::kIcu) {
        icu_epoch(run, config, observer);
      } else {
        kumpr_epoch(run, config, observer);
      }
      const auto& last = run.history.back();
      if (last.stop_reached) {
        result.termination = Termination::kStopReached;
        break;
      }
      if (config.mode == Mode::kIcu && last.n_active == 0) {
        result.termination = Termination::kAllForgotten;
        break;
      }
    }
  }
  result.converged = result.termination == Termination::kStopReached;
  result.model = run.model;
  result.pairs = run.pairs;
  result.history = run.history;
  return result;
}

RunResult run_unlearning(const RunConfig& config, const Corpus& corpus, const Corpus& heldout,
                         const ModelState& pretrained, RunObserver* observer) {
  RunState run = start_run(config, corpus, heldout, pretrained);
  return finish_run(run, config, observer);
}

std::vector<SweepRow> ablation_sweep(const RunConfig& base, std::span<const SweepCell> grid, const Corpus& corpus,
                                     const Corpus& heldout, const ModelState& pretrained) {
  std::vector<SweepRow> rows;
  for (const auto& cell : grid) {
    SweepRow row;
    row.cell = cell;
    RunConfig config = base;
    config.weights = {cell.alpha, cell.beta};
    config.lr = cell.lr;
    try {
      row.result = run_unlearning(config, corpus, heldout, pretrained);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace unlearn
