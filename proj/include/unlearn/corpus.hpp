// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace unlearn {

using TokenId = std::int32_t;

// Word-level vocabulary of the synthetic template grammar. Ids are dense in
// [0, size()); id 0 is padding and id 1 begins every model input.
class Vocabulary {
 public:
  enum class WordClass : std::uint8_t { kSpecial, kDigit, kFunction, kName, kNoun, kVerb, kAdjective, kPlace };

  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr int kMinSize = 8;

  // Deterministic vocabulary of exactly `size` symbols. Throws ParameterError
  // when size < kMinSize.
  static Vocabulary for_grammar(int size);

  int size() const { return static_cast<int>(symbols_.size()); }
  TokenId pad() const { return kPad; }
  TokenId bos() const { return kBos; }

  const std::string& symbol(TokenId id) const;
  TokenId id_of(const std::string& symbol) const;  // throws ParameterError
  WordClass word_class(TokenId id) const { return classes_.at(static_cast<std::size_t>(id)); }
  std::span<const TokenId> members(WordClass c) const;

  // Space-joined surface form.
  std::string render(std::span<const TokenId> tokens) const;

 private:
  std::vector<std::string> symbols_;
  std::vector<WordClass> classes_;
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::vector<TokenId>> members_;
};

struct TokenSequence {
  std::string id;
  std::vector<TokenId> prefix;
  std::vector<TokenId> suffix;

  std::size_t length() const { return prefix.size() + suffix.size(); }
  bool operator==(const TokenSequence&) const = default;
};

// prefix ++ suffix.
std::vector<TokenId> full_sequence(const TokenSequence& x);

struct Corpus {
  int vocab_size = 0;
  int prefix_len = 0;
  int suffix_len = 0;
  std::vector<TokenSequence> samples;
  std::vector<std::string> forget_ids;

  bool is_forget(const std::string& id) const;
  const TokenSequence& sample(const std::string& id) const;  // throws ParameterError
  std::vector<TokenSequence> forget_samples() const;
  std::vector<TokenSequence> retain_samples() const;

  // Checks every structural invariant. `allow_empty_forget` relaxes 0 < M so
  // that held-out splits can share the format.
  void validate(bool allow_empty_forget = false) const;

  bool operator==(const Corpus&) const = default;
};

struct CorpusParams {
  std::uint64_t seed = 1;
  int n_samples = 512;
  int n_secrets = 128;
  int vocab_size = 512;
  int prefix_len = 16;
  int suffix_len = 16;

  bool operator==(const CorpusParams&) const = default;
};

// Template-grammar corpus with `n_secrets` samples carrying a planted run of
// six digits that occurs nowhere else in the corpus. Secret samples open with
// a first token no other sample starts with. About half of the other samples
// mention a public number through the same templates; every run is distinct.
// forget_ids lists the secrets.
Corpus synthesize_corpus(const CorpusParams& params);

// Non-secret samples from the same grammar on an independent random stream;
// disjoint from the corpus ids. Used as the held-out split.
Corpus synthesize_heldout(const CorpusParams& params, int n_heldout);

// The first six-digit run of a sample (its planted secret or public number),
// or empty.
std::vector<TokenId> planted_run(const Vocabulary& vocab, const TokenSequence& x);

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path, bool allow_empty_forget = false);

}  // namespace unlearn
