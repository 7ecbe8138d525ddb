#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "kernels.hpp"
#include "support.hpp"
#include "unlearn/checkpoint.hpp"
#include "unlearn/error.hpp"
#include "unlearn/model.hpp"
#include "unlearn/optim.hpp"

using namespace unlearn;

namespace {

double row_entropy_bits(std::span<const float> log_row) {
  double h = 0.0;
  for (float lp : log_row) h -= std::exp(static_cast<double>(lp)) * static_cast<double>(lp);
  return h / std::log(2.0);
}

// Greedy decoding re-running the full forward pass at every step.
template <class T>
std::vector<TokenId> naive_greedy(const BasicModelState<T>& s, std::vector<TokenId> prefix, std::size_t n_new) {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < n_new; ++i) {
    // Row t of forward predicts token t; the appended slot is never read.
    auto input = prefix;
    input.push_back(0);
    const auto d = forward(s, input);
    const TokenId next = argmax(d.log_row(input.size() - 1));
    out.push_back(next);
    prefix.push_back(next);
  }
  return out;
}

}  // namespace

TEST_CASE("init is deterministic per seed and validates dims") {
  const ModelConfig c = testing::tiny_config();
  CHECK(init_model(c) == init_model(c));
  auto c2 = c;
  c2.seed = 8;
  CHECK_FALSE(init_model(c) == init_model(c2));
  CHECK(init_model(c).params.size() == parameter_count(c));

  ModelConfig bad;
  bad.d_model = 130;
  bad.n_heads = 4;
  CHECK_THROWS_AS(init_model(bad), ParameterError);
  bad = ModelConfig{};
  bad.vocab_size = 0;
  CHECK_THROWS_AS(init_model(bad), ParameterError);
}

TEST_CASE("forward at init is finite and normalized") {
  const ModelState s = init_model(ModelConfig{});
  std::mt19937_64 rng(11);
  const auto x = testing::random_tokens(rng, 40, 512);
  const auto d = forward(s, x);
  REQUIRE(d.rows() == 40);
  for (std::size_t t = 0; t < d.rows(); ++t) {
    double sum = 0.0;
    for (float lp : d.log_row(t)) {
      REQUIRE(std::isfinite(lp));
      sum += std::exp(static_cast<double>(lp));
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("untrained entropy is near log2 V") {
  const ModelState s = init_model(ModelConfig{});
  std::mt19937_64 rng(12);
  const auto x = testing::random_tokens(rng, 64, 512);
  const auto d = forward(s, x);
  const double target = std::log2(512.0);
  for (std::size_t t = 0; t < d.rows(); ++t) {
    const double h = row_entropy_bits(d.log_row(t));
    CHECK(std::abs(h - target) <= 0.1 * target);
  }
}

TEST_CASE("forward is causal bit for bit") {
  const ModelState s = init_model(testing::small_model());
  std::mt19937_64 rng(13);
  const auto x = testing::random_tokens(rng, 33, 160);
  const auto base = forward(s, x);
  for (std::size_t k : {0u, 5u, 17u, 32u}) {
    auto y = x;
    y[k] = (y[k] + 1) % 160;
    const auto d = forward(s, y);
    // Row t conditions on tokens < t only.
    for (std::size_t t = 0; t <= k; ++t) {
      const auto a = base.log_row(t);
      const auto b = d.log_row(t);
      CHECK(std::equal(a.begin(), a.end(), b.begin()));
    }
  }
}

TEST_CASE("overlong input is a parameter error") {
  const auto c = testing::tiny_config();
  const ModelState s = init_model(c);
  const std::vector<TokenId> x(static_cast<std::size_t>(c.context_len) + 1, 2);
  CHECK_THROWS_AS(forward(s, x), ParameterError);
}

TEST_CASE("uniform model has nll (T-1) ln V") {
  auto c = testing::tiny_config();
  ModelState s = init_model(c);
  std::fill(s.params.begin(), s.params.end(), 0.0f);
  const std::vector<TokenId> x{3, 4, 5, 6, 7, 8, 9};
  CHECK(nll(s, x) == doctest::Approx(6 * std::log(16.0)).epsilon(1e-6));
  CHECK_THROWS_AS(nll(s, std::vector<TokenId>{3}), ParameterError);
}

TEST_CASE("generation") {
  const ModelState s = init_model(testing::small_model());
  std::mt19937_64 rng(14);
  const auto prefix = testing::random_tokens(rng, 16, 160);

  CHECK(generate(s, prefix, 0).empty());
  const auto g = generate(s, prefix, 16);
  CHECK(g.size() == 16);
  CHECK(generate(s, prefix, 16) == g);

  SUBCASE("incremental decoding matches full recomputation") {
    CHECK(naive_greedy(s, prefix, 16) == g);
    const auto d = cast_state<double>(s);
    CHECK(naive_greedy(d, prefix, 16) == generate(d, prefix, 16));
  }

  SUBCASE("batch decoding matches one-at-a-time decoding") {
    std::vector<GenerationRequest> reqs;
    for (std::size_t n : {1u, 4u, 9u, 16u}) {
      reqs.push_back({testing::random_tokens(rng, n, 160), 32 - n});
    }
    reqs.push_back({prefix, 0});
    const auto out = generate_batch(s, std::span<const GenerationRequest>(reqs));
    REQUIRE(out.size() == reqs.size());
    for (std::size_t i = 0; i < reqs.size(); ++i) CHECK(out[i] == generate(s, reqs[i].prefix, reqs[i].n_new));
  }
}

TEST_CASE("argmax breaks ties toward the lowest id") {
  const std::vector<float> row{0.1f, 0.5f, 0.2f, 0.5f};
  CHECK(argmax(std::span<const float>(row)) == 1);
}

TEST_CASE("analytic gradients match central differences") {
  const auto c = testing::tiny_config();
  REQUIRE(parameter_count(c) <= 2000);
  const auto s = cast_state<double>(init_model(c));
  auto ref_state = cast_state<double>(init_model([&] {
    auto c2 = c;
    c2.seed = 99;
    return c2;
  }()));
  std::mt19937_64 rng(15);
  const auto a = testing::random_tokens(rng, 12, c.vocab_size);
  const auto b = testing::random_tokens(rng, 10, c.vocab_size);
  const auto reference = forward(ref_state, b);

  // Ascent on one sequence, descent plus a KL anchor on another.
  const std::vector<SequenceLoss<double>> terms{{a, -1.0, 0.0, nullptr}, {b, 0.5, 1.0, &reference}};
  auto loss = [&](const BasicModelState<double>& st) {
    std::vector<double> g(st.params.size(), 0.0);
    return accumulate_gradients(st, std::span<const SequenceLoss<double>>(terms), g);
  };

  std::vector<double> grads(s.params.size(), 0.0);
  accumulate_gradients(s, std::span<const SequenceLoss<double>>(terms), grads);

  std::vector<std::size_t> coords(s.params.size());
  std::iota(coords.begin(), coords.end(), 0);
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(100);

  const double h = 1e-4;
  double worst = 0.0;
  for (std::size_t i : coords) {
    auto plus = s;
    auto minus = s;
    plus.params[i] += h;
    minus.params[i] -= h;
    const double numeric = (loss(plus) - loss(minus)) / (2 * h);
    const double analytic = grads[i];
    const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic) / scale);
  }
  MESSAGE("worst relative error " << worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("gradients of a constant are zero and gradients are linear") {
  const auto c = testing::tiny_config();
  const ModelState s = init_model(c);
  std::mt19937_64 rng(16);
  const auto a = testing::random_tokens(rng, 12, c.vocab_size);
  const auto b = testing::random_tokens(rng, 12, c.vocab_size);

  std::vector<float> g0(s.params.size(), 0.0f);
  const std::vector<SequenceLoss<float>> none{{a, 0.0, 0.0, nullptr}};
  accumulate_gradients(s, std::span<const SequenceLoss<float>>(none), g0);
  CHECK(std::all_of(g0.begin(), g0.end(), [](float v) { return v == 0.0f; }));

  const auto ds = cast_state<double>(s);
  const std::vector<SequenceLoss<double>> ta{{a, -1.0, 0.0, nullptr}};
  const std::vector<SequenceLoss<double>> tb{{b, 1.0, 0.0, nullptr}};
  const std::vector<SequenceLoss<double>> both{{a, -1.0, 0.0, nullptr}, {b, 1.0, 0.0, nullptr}};
  std::vector<double> ga(s.params.size()), gb(s.params.size()), gab(s.params.size());
  accumulate_gradients(ds, std::span<const SequenceLoss<double>>(ta), ga);
  accumulate_gradients(ds, std::span<const SequenceLoss<double>>(tb), gb);
  accumulate_gradients(ds, std::span<const SequenceLoss<double>>(both), gab);
  for (std::size_t i = 0; i < gab.size(); ++i) CHECK(gab[i] == doctest::Approx(ga[i] + gb[i]).epsilon(1e-12));
}

TEST_CASE("adam") {
  SUBCASE("zero gradients leave parameters unchanged and count the step") {
    ModelState s = init_model(testing::tiny_config());
    const auto before = s.params;
    Adam opt;
    opt.step(s, std::vector<float>(s.params.size(), 0.0f));
    CHECK(s.params == before);
    CHECK(s.step == 1);
  }
  SUBCASE("lr 0 is the identity") {
    ModelState s = init_model(testing::tiny_config());
    const auto before = s.params;
    Adam opt({.lr = 0.0});
    std::vector<float> g(s.params.size(), 0.5f);
    for (int i = 0; i < 3; ++i) opt.step(s, g);
    CHECK(s.params == before);
    CHECK(s.step == 3);
  }
  SUBCASE("one-dimensional quadratic") {
    ModelState s;
    s.params = {0.0f};
    Adam opt({.lr = 0.05});
    for (int i = 0; i < 500; ++i) opt.step(s, {2.0f * (s.params[0] - 3.0f)});
    CHECK(std::abs(s.params[0] - 3.0f) < 1e-3);
  }
  SUBCASE("non-finite gradients are rejected without side effects") {
    ModelState s = init_model(testing::tiny_config());
    const auto before = s;
    Adam opt;
    std::vector<float> g(s.params.size(), 0.0f);
    g[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(opt.step(s, g), NumericError);
    CHECK(s == before);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  testing::TempDir dir("ckpt");
  ModelState s = init_model(testing::small_model());
  s.step = 42;
  save_checkpoint(s, dir / "m.ckpt");
  CHECK(load_checkpoint(dir / "m.ckpt") == s);

  std::ofstream(dir / "bad.ckpt") << "{\"format_version\": 1}\n";
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), FormatError);
}

TEST_CASE("float exp kernel tracks std::exp") {
  double worst = 0.0;
  for (int i = 0; i <= 200000; ++i) {
    const float x = -87.0f + 175.0f * static_cast<float>(i) / 200000.0f;
    const double want = std::exp(static_cast<double>(x));
    worst = std::max(worst, std::abs(unlearn::kernels::fast_exp(x) - want) / want);
  }
  MESSAGE("worst relative error " << worst);
  CHECK(worst < 1e-6);
  CHECK(unlearn::kernels::fast_exp(0.0f) == 1.0f);
  CHECK(std::isfinite(unlearn::kernels::fast_exp(1e6f)));
  CHECK(unlearn::kernels::fast_exp(-1e6f) > 0.0f);
}
