// Brute-force reference implementations shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "unlearn/corpus.hpp"
#include "unlearn/model.hpp"

namespace testing {

using unlearn::TokenId;
using unlearn::TokenSequence;

using Tokens = std::vector<TokenId>;

inline Tokens slice(const Tokens& x, std::size_t from, std::size_t len) {
  return Tokens(x.begin() + static_cast<long>(from), x.begin() + static_cast<long>(from + len));
}

// Brute force: for each window of a, scan every window of b.
inline double overlap_oracle(const Tokens& a, const Tokens& b, std::size_t n) {
  if (a.size() < n) return 0.0;
  std::size_t hits = 0;
  const std::size_t windows = a.size() - n + 1;
  for (std::size_t i = 0; i < windows; ++i) {
    bool found = false;
    for (std::size_t j = 0; j + n <= b.size() && !found; ++j) found = slice(a, i, n) == slice(b, j, n);
    hits += found;
  }
  return static_cast<double>(hits) / static_cast<double>(windows);
}

inline std::size_t occurrences(const Tokens& x, const Tokens& gram) {
  std::size_t c = 0;
  for (std::size_t j = 0; j + gram.size() <= x.size(); ++j) c += slice(x, j, gram.size()) == gram;
  return c;
}

// Clipped precisions counted per distinct candidate gram, multiplied out
// directly instead of in log space.
inline double bleu_oracle(const Tokens& cand, const Tokens& ref) {
  if (cand.empty()) return 0.0;
  double product = 1.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    if (cand.size() < n) return 0.0;
    std::vector<Tokens> seen;
    std::size_t clipped = 0;
    for (std::size_t i = 0; i + n <= cand.size(); ++i) {
      const auto g = slice(cand, i, n);
      if (std::find(seen.begin(), seen.end(), g) != seen.end()) continue;
      seen.push_back(g);
      clipped += std::min(occurrences(cand, g), occurrences(ref, g));
    }
    if (clipped == 0) return 0.0;
    product *= static_cast<double>(clipped) / static_cast<double>(cand.size() - n + 1);
  }
  const double bp = cand.size() >= ref.size() ? 1.0 : std::exp(1.0 - static_cast<double>(ref.size()) / cand.size());
  return bp * std::pow(product, 0.25);
}

// Direct loop over split points t = 1..T-n with a fresh greedy generation each.
inline double el_oracle(const unlearn::ModelState& s, const TokenSequence& x, std::size_t n) {
  const auto tokens = unlearn::full_sequence(x);
  const std::size_t len = tokens.size();
  double sum = 0.0;
  for (std::size_t t = 1; t <= len - n; ++t) {
    const auto prefix = slice(tokens, 0, t - 1);
    const auto rest = slice(tokens, t - 1, len - t + 1);
    sum += overlap_oracle(unlearn::generate(s, prefix, rest.size()), rest, n);
  }
  return sum / static_cast<double>(len - n);
}

inline TokenSequence split(const Tokens& t, std::size_t prefix_len) {
  return {"x", slice(t, 0, prefix_len), slice(t, prefix_len, t.size() - prefix_len)};
}


}  // namespace testing

namespace testing {

// Exhaustive argmax of the dot product, ties to the lexicographically lowest id.
struct NearestOracle {
  std::string id;
  double similarity = -2.0;
};

inline NearestOracle nearest_oracle(const std::vector<double>& query, const std::vector<std::string>& ids,
                                    const std::vector<std::vector<double>>& vectors) {
  NearestOracle best;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double sim = 0.0;
    for (std::size_t k = 0; k < query.size(); ++k) sim += vectors[i][k] * query[k];
    if (best.id.empty() || sim > best.similarity || (sim == best.similarity && ids[i] < best.id)) {
      best = {ids[i], sim};
    }
  }
  return best;
}

// sum_t KL(p_t || q_t) over rows 1..T-1 from raw log-probabilities.
inline double kl_oracle(const unlearn::BasicDistribution<double>& p, const unlearn::BasicDistribution<double>& q) {
  double total = 0.0;
  for (std::size_t t = 1; t < p.rows(); ++t) {
    for (std::size_t v = 0; v < p.vocab; ++v) {
      const double lp = p.log_row(t)[v];
      total += std::exp(lp) * (lp - q.log_row(t)[v]);
    }
  }
  return total;
}

}  // namespace testing
