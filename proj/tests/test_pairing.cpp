#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "support.hpp"
#include "unlearn/error.hpp"
#include "unlearn/pairing.hpp"

using namespace unlearn;

namespace {

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Fixed vectors keyed by id.
class TableEmbedder final : public Embedder {
 public:
  std::map<std::string, std::vector<double>> table;
  SentenceEmbedding embed(const TokenSequence& x) const override {
    auto v = table.at(x.id);
    const double n = norm(v);
    for (double& e : v) e /= n;
    return {x.id, v};
  }
};

Corpus toy_corpus(std::size_t n, std::size_t n_forget) {
  Corpus c;
  c.vocab_size = 16;
  c.prefix_len = 1;
  c.suffix_len = 1;
  for (std::size_t i = 0; i < n; ++i) {
    char id[8];
    std::snprintf(id, sizeof id, "s%03zu", i);
    c.samples.push_back({id, {static_cast<TokenId>(2 + i % 14)}, {3}});
    if (i < n_forget) c.forget_ids.push_back(id);
  }
  return c;
}

}  // namespace

TEST_CASE("model embeddings are unit length and deterministic") {
  const ModelState s = init_model(testing::small_model());
  std::mt19937_64 rng(31);
  for (int i = 0; i < 10; ++i) {
    const TokenSequence x{"x", testing::random_tokens(rng, 16, 160), testing::random_tokens(rng, 16, 160)};
    const auto e = embed(s, x);
    CHECK(e.vector.size() == 32);
    CHECK(std::abs(norm(e.vector) - 1.0) < 1e-6);
    CHECK(embed(s, x).vector == e.vector);
    CHECK(ModelEmbedder(s).embed(x).vector == e.vector);
  }
}

TEST_CASE("exact duplicate is selected with similarity 1") {
  const Corpus c = synthesize_corpus(testing::small_corpus());
  Corpus d = c;
  const auto& target = d.sample(d.forget_ids.front());
  TokenSequence dup = target;
  dup.id = "zz-duplicate";
  d.samples.push_back(dup);
  const ModelState s = init_model(testing::small_model());
  const auto pairs = build_learn_set(d, ModelEmbedder(s));
  CHECK(pairs.front().learn.id == "zz-duplicate");
  CHECK(pairs.front().similarity == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("orthogonal candidates fall back to the lowest id") {
  Corpus c = toy_corpus(5, 1);
  TableEmbedder e;
  e.table["s000"] = {1, 0, 0, 0, 0};
  e.table["s004"] = {0, 1, 0, 0, 0};
  e.table["s002"] = {0, 0, 1, 0, 0};
  e.table["s003"] = {0, 0, 0, 1, 0};
  e.table["s001"] = {0, 0, 0, 0, 1};
  const auto pairs = build_learn_set(c, e);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].learn.id == "s001");
  CHECK(pairs[0].similarity == 0.0);
}

TEST_CASE("index search equals an exhaustive scan") {
  const Corpus c = toy_corpus(64, 16);
  std::mt19937_64 rng(32);
  std::normal_distribution<double> normal;
  TableEmbedder e;
  for (const auto& s : c.samples) {
    std::vector<double> v(12);
    for (double& x : v) x = normal(rng);
    // Coarse values make exact ties between candidates likely.
    for (double& x : v) x = std::round(x);
    if (norm(v) == 0.0) v[0] = 1.0;
    e.table[s.id] = v;
  }
  const auto pairs = build_learn_set(c, e);
  REQUIRE(pairs.size() == 16);
  for (const auto& p : pairs) {
    const auto q = e.embed(p.forget).vector;
    std::string best_id;
    double best = -2.0;
    for (const auto& s : c.samples) {
      if (c.is_forget(s.id)) continue;
      const auto v = e.embed(s).vector;
      double sim = 0.0;
      for (std::size_t k = 0; k < v.size(); ++k) sim += q[k] * v[k];
      if (sim > best || (sim == best && s.id < best_id)) {
        best = sim;
        best_id = s.id;
      }
    }
    CHECK(p.learn.id == best_id);
    CHECK(p.similarity == best);
  }
}

TEST_CASE("learn set cardinality, domain and determinism") {
  const Corpus c = synthesize_corpus(CorpusParams{});
  auto config = testing::small_model();
  config.vocab_size = 512;
  const ModelState s = init_model(config);
  const auto pairs = build_learn_set(c, ModelEmbedder(s));
  CHECK(pairs.size() == 128);
  std::set<std::string> forget_seen;
  for (const auto& p : pairs) {
    CHECK_FALSE(c.is_forget(p.learn.id));
    CHECK(p.learn.id != p.forget.id);
    CHECK(p.active());
    CHECK(forget_seen.insert(p.forget.id).second);
  }
  const auto again = build_learn_set(c, ModelEmbedder(s));
  for (std::size_t i = 0; i < pairs.size(); ++i) CHECK(again[i].learn.id == pairs[i].learn.id);
}

TEST_CASE("empty candidate set is a configuration error") {
  Corpus c = toy_corpus(2, 2);
  TableEmbedder e;
  e.table["s000"] = {1, 0};
  e.table["s001"] = {0, 1};
  CHECK_THROWS_AS(build_learn_set(c, e), ConfigError);
}

TEST_CASE("forgotten status is one-way") {
  PairedSample p;
  p.forget.id = "f";
  CHECK(p.active());
  p.mark_forgotten(3);
  CHECK_FALSE(p.active());
  CHECK(p.forgotten_epoch == 3);
  CHECK_THROWS_AS(p.mark_forgotten(4), ParameterError);
  CHECK(p.forgotten_epoch == 3);
}

TEST_CASE("embedding file") {
  testing::TempDir dir("emb");
  const Corpus c = toy_corpus(4, 1);
  {
    std::ofstream out(dir / "e.jsonl");
    out << R"({"id": "s000", "vector": [3, 4]})" << "\n"
        << R"({"id": "s001", "vector": [0, 1]})" << "\n"
        << R"({"id": "s002", "vector": [1, 0]})" << "\n"
        << R"({"id": "s003", "vector": [-1, 0]})" << "\n";
  }
  const FileEmbedder fe(dir / "e.jsonl");
  CHECK(fe.embed(c.samples[0]).vector[0] == doctest::Approx(0.6));
  const auto pairs = build_learn_set(c, fe);
  CHECK(pairs[0].learn.id == "s001");  // 0.8 beats 0.6
  CHECK_THROWS_AS(fe.embed({"missing", {2}, {3}}), ConfigError);

  std::ofstream(dir / "bad.jsonl") << R"({"id": "a", "vector": [1, 2]})" << "\n" << R"({"id": "b", "vector": [1]})" << "\n";
  CHECK_THROWS_AS(FileEmbedder(dir / "bad.jsonl"), FormatError);
}
