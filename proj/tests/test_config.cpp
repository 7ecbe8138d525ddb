#include <doctest.h>

#include <fstream>

#include "support.hpp"
#include "unlearn/config.hpp"
#include "unlearn/error.hpp"

using namespace unlearn;

namespace {

std::string what_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("defaults round trip through text") {
  const ExperimentConfig c;
  CHECK(parse_config(render_config(c)) == c);
}

TEST_CASE("modified config round trips") {
  ExperimentConfig c;
  c.corpus.n_samples = 100;
  c.corpus.n_secrets = 20;
  c.corpus.vocab_size = 200;
  c.pretrain.model.vocab_size = 200;
  c.run.lr = 2.5e-5;
  c.run.weights = {1.0, 0.0};
  c.run.mode = Mode::kKumpr;
  c.run.thresholds.embed_a = 0.62;
  c.seeds = {1, 2, 3};
  c.sweep_alpha = {0.5, 1.0, 2.0};
  c.sweep_lr = {1e-5, 3e-5};
  c.out_dir = "elsewhere/runs";
  const auto parsed = parse_config(render_config(c));
  CHECK(parsed == c);
  CHECK(parsed.sweep_grid().size() == 6);
}

TEST_CASE("partial configs keep defaults and set the model vocabulary") {
  const auto c = parse_config("schema_version = 1\n# comment\n\ncorpus.vocab_size = 300   # trailing\n");
  CHECK(c.corpus.vocab_size == 300);
  CHECK(c.pretrain.model.vocab_size == 300);
  CHECK(c.run == RunConfig{});
}

TEST_CASE("bad configs raise errors naming the line") {
  CHECK(what_of("corpus.seed = 3\n").find("schema_version") != std::string::npos);
  CHECK(what_of("schema_version = 2\n").find("line 1") != std::string::npos);
  CHECK(what_of("schema_version = 1\nnot.a.key = 4\n").find("line 2") != std::string::npos);
  CHECK(what_of("schema_version = 1\nunlearn.lr = 1e-4\nunlearn.lr = 2e-4\n").find("repeated") != std::string::npos);
  CHECK(what_of("schema_version = 1\nunlearn.lr = fast\n").find("line 2") != std::string::npos);
  CHECK(what_of("schema_version = 1\nunlearn.lr\n").find("key = value") != std::string::npos);
  CHECK(what_of("schema_version = 1\nunlearn.knn_k = 2\n").find("knn_k") != std::string::npos);
  CHECK(what_of("schema_version = 1\nunlearn.mode = both\n").find("mode") != std::string::npos);
  CHECK_FALSE(what_of("schema_version = 1\ncorpus.n_secrets = 0\n").empty());
  CHECK_FALSE(what_of("schema_version = 1\nmodel.context_len = 16\n").empty());
  CHECK_FALSE(what_of("schema_version = 1\nseeds = \n").empty());
  CHECK_FALSE(what_of("schema_version = 1\nsweep.alpha = 0.5, -1\n").empty());
  CHECK(what_of("schema_version = 1\nunlearn.knn_k = 1\n").empty());
}

TEST_CASE("load_config reads files") {
  testing::TempDir dir("config");
  std::ofstream(dir / "c.conf") << "schema_version = 1\nunlearn.alpha = 2\n";
  CHECK(load_config(dir / "c.conf").run.weights.alpha == 2.0);
  CHECK_THROWS_AS(load_config(dir / "missing.conf"), ConfigError);
}
