// Shared fixtures for the unit tests.
#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "unlearn/corpus.hpp"
#include "unlearn/model.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("unlearn-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline unlearn::ModelConfig tiny_config(int vocab = 16, int context = 12) {
  unlearn::ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.context_len = context;
  c.vocab_size = vocab;
  c.seed = 7;
  return c;
}

// Small but real corpus: T = 32 as at desk scale, fewer samples and words.
inline unlearn::CorpusParams small_corpus() {
  unlearn::CorpusParams p;
  p.n_samples = 48;
  p.n_secrets = 12;
  p.vocab_size = 160;
  return p;
}

inline unlearn::ModelConfig small_model() {
  unlearn::ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 32;
  c.d_ff = 64;
  c.context_len = 33;
  c.vocab_size = 160;
  c.seed = 3;
  return c;
}

inline std::vector<unlearn::TokenId> random_tokens(std::mt19937_64& rng, std::size_t n, int vocab) {
  std::vector<unlearn::TokenId> out(n);
  for (auto& t : out) t = static_cast<unlearn::TokenId>(rng() % static_cast<std::uint64_t>(vocab));
  return out;
}

}  // namespace testing
