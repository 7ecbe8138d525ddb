#include <doctest.h>

#include <algorithm>
#include <set>

#include "support.hpp"
#include "unlearn/error.hpp"
#include "unlearn/engine.hpp"

using namespace unlearn;

namespace {

struct Fixture {
  Corpus corpus;
  Corpus heldout;
  ModelState pretrained;
};

// Memorized small model, trained once per test binary.
const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    const auto params = testing::small_corpus();
    x.corpus = synthesize_corpus(params);
    x.heldout = synthesize_heldout(params, 16);
    PretrainConfig pc;
    pc.model = testing::small_model();
    pc.lr = 3e-3;
    pc.batch_size = 8;
    pc.max_epochs = 400;
    pc.target_ma = 0.95;
    pc.target_el = 0.9;
    x.pretrained = memorize_pretrain(pc, x.corpus).model;
    return x;
  }();
  return f;
}

RunConfig base_config() {
  RunConfig c;
  c.lr = 1e-3;
  c.batch_size = 4;
  c.max_epochs = 30;
  return c;
}

// Records, per optimizer step, the pairs used and whether each was active.
class Recorder final : public RunObserver {
 public:
  struct Step {
    int epoch;
    std::vector<std::size_t> pairs;
    bool all_active;
  };
  std::vector<Step> steps;
  std::vector<EpochReport> reports;

  void on_batch(int epoch, std::span<const std::size_t> pairs, const RunState& run) override {
    bool active = true;
    for (std::size_t i : pairs) active = active && run.pairs[i].active();
    steps.push_back({epoch, {pairs.begin(), pairs.end()}, active});
  }
  void on_epoch(const EpochReport& r) override { reports.push_back(r); }
};

}  // namespace

TEST_CASE("pretraining memorizes the small corpus") {
  const auto& f = fixture();
  const auto forget = f.corpus.forget_samples();
  double ma_sum = 0.0;
  for (const auto& x : forget) ma_sum += ma(f.pretrained, x);
  CHECK(ma_sum / static_cast<double>(forget.size()) >= 0.95);
}

TEST_CASE("pretraining reports failure at the epoch cap") {
  const auto c = synthesize_corpus(testing::small_corpus());
  PretrainConfig pc;
  pc.model = testing::small_model();
  pc.max_epochs = 1;
  CHECK_THROWS_AS(memorize_pretrain(pc, c), TrainingFailure);
  pc.model.vocab_size = 100;
  CHECK_THROWS_AS(memorize_pretrain(pc, c), ConfigError);
}

TEST_CASE("forgotten pairs stop contributing and stay forgotten") {
  const auto& f = fixture();
  auto config = base_config();
  config.thresholds.embed_a = 0.95;  // make filtering fire on this toy model
  config.thresholds.bleu_b = 0.3;
  Recorder rec;
  const auto result = run_unlearning(config, f.corpus, f.heldout, f.pretrained, &rec);
  REQUIRE(!rec.steps.empty());

  std::set<std::string> forgotten_before;
  int fired = 0;
  for (const auto& r : rec.reports) {
    for (const auto& id : forgotten_before) CHECK(std::find_if(r.samples.begin(), r.samples.end(), [&](const SampleRecord& s) {
                                                return s.metrics.id == id && s.forgotten;
                                              }) != r.samples.end());
    for (const auto& s : r.samples) {
      if (s.forgotten) forgotten_before.insert(s.metrics.id);
    }
    fired += static_cast<int>(r.newly_forgotten.size());
  }
  MESSAGE("pairs filtered: " << fired << ", epochs " << result.history.back().epoch);
  CHECK(fired > 0);
  for (const auto& step : rec.steps) CHECK(step.all_active);

  // Every pair forgotten at epoch e is absent from all later steps.
  for (const auto& p : result.pairs) {
    if (p.active()) continue;
    std::size_t index = 0;
    while (result.pairs[index].forget.id != p.forget.id) ++index;
    for (const auto& step : rec.steps) {
      if (step.epoch > p.forgotten_epoch) {
        CHECK(std::find(step.pairs.begin(), step.pairs.end(), index) == step.pairs.end());
      }
    }
  }
  const auto& last = result.history.back();
  CHECK(last.n_active + last.n_forgotten == static_cast<int>(result.pairs.size()));
}

TEST_CASE("runs are deterministic") {
  const auto& f = fixture();
  auto config = base_config();
  config.max_epochs = 3;
  const auto a = run_unlearning(config, f.corpus, f.heldout, f.pretrained);
  const auto b = run_unlearning(config, f.corpus, f.heldout, f.pretrained);
  CHECK(a.history == b.history);
  CHECK(a.model == b.model);
  config.seed = 2;
  const auto c = run_unlearning(config, f.corpus, f.heldout, f.pretrained);
  CHECK_FALSE(c.model == a.model);
}

TEST_CASE("joint objective with zero weights and no filtering equals the baseline per step") {
  const auto& f = fixture();
  auto icu = base_config();
  icu.weights = {0.0, 0.0};
  icu.thresholds.embed_a = 0.0;  // nothing is ever forgotten
  icu.thresholds.bleu_b = 0.0;
  auto kumpr = icu;
  kumpr.mode = Mode::kKumpr;
  RunState a = start_run(icu, f.corpus, f.heldout, f.pretrained);
  RunState b = start_run(kumpr, f.corpus, f.heldout, f.pretrained);
  for (int e = 0; e < 2; ++e) {
    icu_epoch(a, icu);
    kumpr_epoch(b, kumpr);
    CHECK(a.model == b.model);
    CHECK(a.history.back() == b.history.back());
  }
}

TEST_CASE("kumpr ignores the filter") {
  const auto& f = fixture();
  auto config = base_config();
  config.mode = Mode::kKumpr;
  config.thresholds.embed_a = 1.0;
  config.thresholds.bleu_b = 1.0;
  config.max_epochs = 2;
  Recorder rec;
  run_unlearning(config, f.corpus, f.heldout, f.pretrained, &rec);
  for (const auto& r : rec.reports) {
    CHECK(r.newly_forgotten.empty());
    CHECK(r.n_active == static_cast<int>(f.corpus.forget_ids.size()));
  }
  std::size_t per_epoch = 0;
  for (const auto& s : rec.steps) per_epoch += s.epoch == 2 ? s.pairs.size() : 0;
  CHECK(per_epoch == f.corpus.forget_ids.size());
}

TEST_CASE("frozen model and pairs are fixed for the run") {
  const auto& f = fixture();
  auto config = base_config();
  config.max_epochs = 2;
  RunState run = start_run(config, f.corpus, f.heldout, f.pretrained);
  const auto pairs = run.pairs;
  finish_run(run, config);
  CHECK(run.frozen == f.pretrained);
  REQUIRE(run.pairs.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(run.pairs[i].forget == pairs[i].forget);
    CHECK(run.pairs[i].learn == pairs[i].learn);
  }
  CHECK_FALSE(run.model == f.pretrained);
}

TEST_CASE("termination reasons") {
  const auto& f = fixture();
  SUBCASE("epoch cap") {
    auto config = base_config();
    config.lr = 1e-7;
    config.max_epochs = 1;
    const auto r = run_unlearning(config, f.corpus, f.heldout, f.pretrained);
    CHECK(r.termination == Termination::kMaxEpochs);
    CHECK_FALSE(r.converged);
    CHECK(r.history.size() == 2);
  }
  SUBCASE("every pair forgotten") {
    auto config = base_config();
    config.thresholds.embed_a = 1.0;
    config.thresholds.bleu_b = 1.0;
    config.thresholds.el_stop = 0.0;  // unreachable
    config.thresholds.ma_stop = 0.0;
    const auto r = run_unlearning(config, f.corpus, f.heldout, f.pretrained);
    CHECK(r.termination == Termination::kAllForgotten);
    CHECK(r.history.back().n_active == 0);
  }
  SUBCASE("stop criterion") {
    auto config = base_config();
    config.mode = Mode::kKumpr;
    const auto r = run_unlearning(config, f.corpus, f.heldout, f.pretrained);
    CHECK(r.termination == Termination::kStopReached);
    CHECK(r.converged);
    CHECK(r.history.back().stop_reached);
    CHECK(r.history.back().el < config.thresholds.el_stop);
    CHECK(r.history.back().ma < config.thresholds.ma_stop);
  }
}

TEST_CASE("baseline report") {
  const auto& f = fixture();
  const RunState run = start_run(base_config(), f.corpus, f.heldout, f.pretrained);
  REQUIRE(run.history.size() == 1);
  const auto& r = run.history.front();
  CHECK(r.epoch == 0);
  CHECK(r.loss == LossBreakdown{});
  CHECK(r.samples.size() == f.corpus.forget_ids.size());
  CHECK(r.ma >= 0.95);
  CHECK_FALSE(r.stop_reached);
}

TEST_CASE("sweep cell at the defaults reproduces a plain run") {
  const auto& f = fixture();
  auto config = base_config();
  config.max_epochs = 3;
  const std::vector<SweepCell> grid{{config.weights.alpha, config.weights.beta, config.lr}, {0.5, 1.0, -1.0}};
  const auto rows = ablation_sweep(config, grid, f.corpus, f.heldout, f.pretrained);
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].result.has_value());
  const auto plain = run_unlearning(config, f.corpus, f.heldout, f.pretrained);
  CHECK(rows[0].result->history == plain.history);
  CHECK_FALSE(rows[1].result.has_value());
  CHECK_FALSE(rows[1].error.empty());
}

TEST_CASE("run configuration validation") {
  RunConfig c;
  c.lr = 0.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = RunConfig{};
  c.weights.alpha = -1.0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  c = RunConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ParameterError);
  CHECK(parse_mode("icu") == Mode::kIcu);
  CHECK(parse_mode("kumpr") == Mode::kKumpr);
  CHECK_THROWS_AS(parse_mode("ICU!"), ConfigError);
}
