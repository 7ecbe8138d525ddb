// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "unlearn/corpus.hpp"
#include "unlearn/model.hpp"

namespace unlearn {

// Multiset of the order-n windows of a token list.
class NGramBag {
 public:
  NGramBag(std::span<const TokenId> tokens, std::size_t n);

  std::size_t order() const { return n_; }
  std::size_t size() const { return size_; }  // max(L - n + 1, 0)
  std::size_t count(std::span<const TokenId> gram) const;
  const std::map<std::vector<TokenId>, std::size_t>& counts() const { return counts_; }

 private:
  std::size_t n_;
  std::size_t size_ = 0;
  std::map<std::vector<TokenId>, std::size_t> counts_;
};

struct Thresholds {
  double embed_a = 0.3;    // embedding-score cutoff for a forgotten sample
  double bleu_b = 0.01;    // BLEU cutoff for a forgotten sample
  double el_stop = 0.0499;  // mean EL_10 over D_fgt
  double ma_stop = 0.5994;  // mean MA over D_fgt

  void validate() const;  // all in [0, 1]
  bool operator==(const Thresholds&) const = default;
};

struct SampleMetrics {
  std::string id;
  double el = 0.0;           // EL_n at the configured order
  double ma = 0.0;
  double bleu = 0.0;
  double embed_score = 0.0;
  std::vector<TokenId> continuation;  // greedy continuation of the prefix, suffix_len tokens

  bool operator==(const SampleMetrics&) const = default;
};

// Fraction of a's n-gram instances whose tuple occurs anywhere in b; 0 when a
// has no n-grams.
double overlap_n(std::span<const TokenId> a, std::span<const TokenId> b, std::size_t n);

// Mean over the T - n split points of overlap_n between the greedy
// continuation of x_<t (|x_>=t| tokens) and x_>=t. Throws
// UndefinedMetricError when T <= n.
double el_n(const ModelState& state, const TokenSequence& x, std::size_t n);

// Fraction of positions t >= 2 where the greedy next token equals x_t.
double ma(const ModelState& state, const TokenSequence& x);

// Sentence BLEU-4 against one reference, no smoothing.
double bleu(std::span<const TokenId> candidate, std::span<const TokenId> reference);

// Greedy-matched cosine F1 of the frozen model's contextual token embeddings.
double embed_score(const ModelState& frozen, std::span<const TokenId> candidate, std::span<const TokenId> reference);

// Shannon entropy in bits. Throws ParameterError on negative entries or a sum
// farther than 1e-6 from 1.
double entropy(std::span<const double> distribution);

// Entropy of the pooled unigram frequencies of greedy continuations.
double generation_entropy(const ModelState& state, std::span<const std::vector<TokenId>> prefixes, std::size_t n_new);

// exp(total nll / total predicted tokens).
double perplexity(const ModelState& state, std::span<const TokenSequence> samples);

bool is_forgotten(const SampleMetrics& m, const Thresholds& th);

// Mean EL below el_stop and mean MA below ma_stop over every sample given.
bool stop_reached(std::span<const SampleMetrics> all, const Thresholds& th);

// EL_n, MA, BLEU and embedding score of each sample, decoding all split points
// of all samples in shared batches.
std::vector<SampleMetrics> evaluate_samples(const ModelState& state, const ModelState& frozen,
                                            std::span<const TokenSequence> samples, std::size_t el_order);

}  // namespace unlearn
