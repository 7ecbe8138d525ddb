#include <doctest.h>

#include <fstream>
#include <set>

#include "support.hpp"
#include "unlearn/corpus.hpp"
#include "unlearn/error.hpp"

using namespace unlearn;

TEST_CASE("default corpus has the desk shape") {
  const CorpusParams p;  // seed 1, 512 samples, 128 secrets, V = 512, 16 + 16
  const Corpus c = synthesize_corpus(p);
  CHECK(c.samples.size() == 512);
  CHECK(c.forget_ids.size() == 128);
  CHECK(c.vocab_size == 512);
  for (const auto& s : c.samples) {
    CHECK(s.prefix.size() == 16);
    CHECK(s.suffix.size() == 16);
    for (TokenId t : full_sequence(s)) CHECK((t >= 0 && t < 512));
  }
}

TEST_CASE("synthesis is deterministic per seed") {
  const auto p = testing::small_corpus();
  CHECK(synthesize_corpus(p) == synthesize_corpus(p));
  auto q = p;
  q.seed = 2;
  CHECK_FALSE(synthesize_corpus(p) == synthesize_corpus(q));
}

TEST_CASE("bad counts are parameter errors") {
  CorpusParams p;
  p.n_secrets = 512;
  CHECK_THROWS_AS(synthesize_corpus(p), ParameterError);
  p = CorpusParams{};
  p.vocab_size = 7;
  CHECK_THROWS_AS(synthesize_corpus(p), ParameterError);
  p = CorpusParams{};
  p.prefix_len = 0;
  CHECK_THROWS_AS(synthesize_corpus(p), ParameterError);
}

TEST_CASE("planted runs are unique to their secret") {
  const CorpusParams p;
  const Corpus c = synthesize_corpus(p);
  const auto vocab = Vocabulary::for_grammar(p.vocab_size);
  std::set<std::vector<TokenId>> secret_runs;
  for (const auto& x : c.forget_samples()) {
    const auto run = planted_run(vocab, x);
    REQUIRE(run.size() == 6);
    CHECK(secret_runs.insert(run).second);
  }
  // No 6-gram of a non-secret sample equals any secret run.
  for (const auto& x : c.retain_samples()) {
    const auto tokens = full_sequence(x);
    for (std::size_t i = 0; i + 6 <= tokens.size(); ++i) {
      CHECK(secret_runs.count({tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(i) + 6}) == 0);
    }
  }
}

TEST_CASE("secret openers are not shared") {
  const Corpus c = synthesize_corpus(CorpusParams{});
  std::set<TokenId> secret_first;
  for (const auto& x : c.forget_samples()) CHECK(secret_first.insert(x.prefix.front()).second);
  for (const auto& x : c.retain_samples()) CHECK(secret_first.count(x.prefix.front()) == 0);
}

TEST_CASE("held-out split is disjoint and secret-free") {
  const CorpusParams p;
  const Corpus c = synthesize_corpus(p);
  const Corpus h = synthesize_heldout(p, 64);
  CHECK(h.samples.size() == 64);
  CHECK(h.forget_ids.empty());
  std::set<std::vector<TokenId>> train;
  std::set<std::string> ids;
  for (const auto& x : c.samples) {
    train.insert(full_sequence(x));
    ids.insert(x.id);
  }
  const auto vocab = Vocabulary::for_grammar(p.vocab_size);
  std::set<std::vector<TokenId>> runs;
  for (const auto& x : c.samples) {
    if (auto r = planted_run(vocab, x); !r.empty()) runs.insert(r);
  }
  for (const auto& x : h.samples) {
    CHECK(ids.count(x.id) == 0);
    CHECK(train.count(full_sequence(x)) == 0);
    if (auto r = planted_run(vocab, x); !r.empty()) CHECK(runs.count(r) == 0);
  }
}

TEST_CASE("full_sequence concatenates") {
  TokenSequence x{"a", {1, 2}, {3}};
  CHECK(full_sequence(x) == std::vector<TokenId>{1, 2, 3});
  CHECK(full_sequence(x).size() == x.length());
}

TEST_CASE("vocabulary is a bijection with distinct specials") {
  for (int size : {8, 40, 512}) {
    const auto v = Vocabulary::for_grammar(size);
    REQUIRE(v.size() == size);
    CHECK(v.pad() != v.bos());
    std::set<std::string> seen;
    for (TokenId i = 0; i < size; ++i) {
      CHECK(seen.insert(v.symbol(i)).second);
      CHECK(v.id_of(v.symbol(i)) == i);
    }
  }
  CHECK_THROWS_AS(Vocabulary::for_grammar(7), ParameterError);
}

TEST_CASE("corpus file round trip") {
  testing::TempDir dir("corpus");
  const Corpus c = synthesize_corpus(testing::small_corpus());
  save_corpus(c, dir / "c.jsonl");
  CHECK(load_corpus(dir / "c.jsonl") == c);
}

namespace {
void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}
}  // namespace

TEST_CASE("malformed corpus files are format errors") {
  testing::TempDir dir("corpus-bad");
  write(dir / "empty.jsonl", "");
  CHECK_THROWS_AS(load_corpus(dir / "empty.jsonl"), FormatError);

  const std::string header = R"({"format_version": 1, "vocab_size": 16, "prefix_len": 2, "suffix_len": 1})";
  write(dir / "short.jsonl", header + "\n" + R"({"id": "a", "prefix": [1], "suffix": [3], "forget": true})" + "\n");
  try {
    load_corpus(dir / "short.jsonl");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }

  write(dir / "range.jsonl", header + "\n" + R"({"id": "a", "prefix": [1, 99], "suffix": [3], "forget": true})" + "\n");
  CHECK_THROWS_AS(load_corpus(dir / "range.jsonl"), FormatError);

  write(dir / "version.jsonl", R"({"format_version": 9, "vocab_size": 16, "prefix_len": 2, "suffix_len": 1})" "\n");
  CHECK_THROWS_AS(load_corpus(dir / "version.jsonl"), FormatError);

  write(dir / "json.jsonl", header + "\n{not json\n");
  CHECK_THROWS_AS(load_corpus(dir / "json.jsonl"), FormatError);
}
