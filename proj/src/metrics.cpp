// SPDX-License-Identifier: Apache-2.0
#include "unlearn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unlearn/error.hpp"

namespace unlearn {
namespace {

constexpr std::size_t kSamplesPerDecodeBatch = 16;

// Greedy continuation for every requested split point of one sample.
struct ExtractionPass {
  std::vector<TokenId> tokens;
  std::vector<TokenId> greedy;                   // argmax of row s, s in [0, T)
  std::vector<std::vector<TokenId>> continuation;  // index s; filled where requested
};

// cont(s) = x_s ++ cont(s + 1) whenever the greedy token at s equals x_s, because
// the decoder state after feeding x_s is the teacher-forced state at s + 1.
// Only the split points where the chain breaks are decoded.
std::vector<ExtractionPass> extract(const ModelState& state, std::span<const TokenSequence> samples,
                                    const std::vector<std::size_t>& splits_wanted) {
  std::vector<ExtractionPass> passes(samples.size());
  const auto d = static_cast<std::size_t>(state.config.d_model);
  for (std::size_t begin = 0; begin < samples.size(); begin += kSamplesPerDecodeBatch) {
    const std::size_t end = std::min(samples.size(), begin + kSamplesPerDecodeBatch);
    std::vector<DecodeStream<float>> streams;
    std::vector<std::pair<std::size_t, std::size_t>> owner;  // (sample, split)
    std::vector<std::vector<char>> required(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      auto& pass = passes[i];
      pass.tokens = full_sequence(samples[i]);
      const std::size_t len = pass.tokens.size();
      if (len > static_cast<std::size_t>(state.config.context_len)) throw ParameterError("sample longer than context_len");
      const auto input = shifted_input(pass.tokens);
      auto pre = prefill(state, std::span<const TokenId>(input), len);
      pass.greedy.resize(len);
      for (std::size_t s = 0; s < len; ++s) pass.greedy[s] = argmax<float>(pre.logit_row(s));
      pass.continuation.assign(len + 1, {});
      auto& req = required[i - begin];
      req.assign(len + 1, 0);
      for (std::size_t s : splits_wanted) {
        if (s < len) req[s] = 1;
      }
      for (std::size_t s = 0; s < len; ++s) {
        if (req[s] && pass.greedy[s] == pass.tokens[s]) req[s + 1] = 1;
      }
      for (std::size_t s = 0; s < len; ++s) {
        if (!req[s] || pass.greedy[s] == pass.tokens[s]) continue;
        DecodeStream<float> stream;
        stream.cache.reset(state.config, len);
        for (std::size_t l = 0; l < stream.cache.keys.size(); ++l) {
          std::copy_n(pre.cache.keys[l].begin(), (s + 1) * d, stream.cache.keys[l].begin());
          std::copy_n(pre.cache.values[l].begin(), (s + 1) * d, stream.cache.values[l].begin());
        }
        stream.cache.length = s + 1;
        stream.out.push_back(pass.greedy[s]);
        stream.target = len - s;
        streams.push_back(std::move(stream));
        owner.emplace_back(i, s);
      }
    }
    decode(state, std::span<DecodeStream<float>>(streams));
    for (std::size_t k = 0; k < streams.size(); ++k) {
      passes[owner[k].first].continuation[owner[k].second] = std::move(streams[k].out);
    }
    for (std::size_t i = begin; i < end; ++i) {
      auto& pass = passes[i];
      const auto& req = required[i - begin];
      const std::size_t len = pass.tokens.size();
      for (std::size_t s = len; s-- > 0;) {
        if (!req[s] || pass.greedy[s] != pass.tokens[s]) continue;
        auto& cont = pass.continuation[s];
        cont.clear();
        cont.push_back(pass.tokens[s]);
        const auto& next = pass.continuation[s + 1];
        cont.insert(cont.end(), next.begin(), next.end());
      }
    }
  }
  return passes;
}

double ma_from_greedy(const ExtractionPass& pass) {
  const std::size_t len = pass.tokens.size();
  std::size_t hits = 0;
  for (std::size_t s = 1; s < len; ++s) hits += pass.greedy[s] == pass.tokens[s];
  return static_cast<double>(hits) / static_cast<double>(len - 1);
}

double el_from_pass(const ExtractionPass& pass, std::size_t n) {
  const std::size_t len = pass.tokens.size();
  double sum = 0.0;
  for (std::size_t s = 0; s + n < len; ++s) {
    std::span<const TokenId> reference(pass.tokens.data() + s, len - s);
    sum += overlap_n(pass.continuation[s], reference, n);
  }
  return sum / static_cast<double>(len - n);
}

void check_el_domain(std::size_t len, std::size_t n) {
  if (n == 0) throw ParameterError("n-gram order must be at least 1");
  if (len <= n) throw UndefinedMetricError("EL_n needs T > n");
}

std::vector<std::size_t> el_splits(std::size_t len, std::size_t n) {
  std::vector<std::size_t> s(len - n);
  std::iota(s.begin(), s.end(), std::size_t{0});
  return s;
}

std::vector<double> unit_rows(const std::vector<float>& hidden, std::size_t rows, std::size_t d) {
  std::vector<double> out(rows * d);
  for (std::size_t r = 0; r < rows; ++r) {
    double norm = 0.0;
    for (std::size_t i = 0; i < d; ++i) norm += static_cast<double>(hidden[r * d + i]) * hidden[r * d + i];
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = norm > 0.0 ? hidden[r * d + i] / norm : 0.0;
  }
  return out;
}

}  // namespace

NGramBag::NGramBag(std::span<const TokenId> tokens, std::size_t n) : n_(n) {
  if (n == 0) throw ParameterError("n-gram order must be at least 1");
  if (tokens.size() < n) return;
  size_ = tokens.size() - n + 1;
  for (std::size_t i = 0; i < size_; ++i) ++counts_[std::vector<TokenId>(tokens.begin() + static_cast<long>(i), tokens.begin() + static_cast<long>(i + n))];
}

std::size_t NGramBag::count(std::span<const TokenId> gram) const {
  auto it = counts_.find(std::vector<TokenId>(gram.begin(), gram.end()));
  return it == counts_.end() ? 0 : it->second;
}

void Thresholds::validate() const {
  for (double v : {embed_a, bleu_b, el_stop, ma_stop}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ParameterError("thresholds must lie in [0, 1]");
  }
}

double overlap_n(std::span<const TokenId> a, std::span<const TokenId> b, std::size_t n) {
  const NGramBag bag_a(a, n);
  if (bag_a.size() == 0) return 0.0;
  const NGramBag bag_b(b, n);
  std::size_t hits = 0;
  for (const auto& [gram, count] : bag_a.counts()) {
    if (bag_b.count(gram) > 0) hits += count;
  }
  return static_cast<double>(hits) / static_cast<double>(bag_a.size());
}

double el_n(const ModelState& state, const TokenSequence& x, std::size_t n) {
  check_el_domain(x.length(), n);
  const auto passes = extract(state, std::span(&x, 1), el_splits(x.length(), n));
  return el_from_pass(passes.front(), n);
}

double ma(const ModelState& state, const TokenSequence& x) {
  if (x.length() < 2) throw UndefinedMetricError("MA needs T >= 2");
  const auto tokens = full_sequence(x);
  const auto input = shifted_input(tokens);
  const auto pre = prefill(state, std::span<const TokenId>(input), input.size());
  std::size_t hits = 0;
  for (std::size_t s = 1; s < tokens.size(); ++s) hits += argmax<float>(pre.logit_row(s)) == tokens[s];
  return static_cast<double>(hits) / static_cast<double>(tokens.size() - 1);
}

double bleu(std::span<const TokenId> candidate, std::span<const TokenId> reference) {
  constexpr std::size_t kMaxOrder = 4;
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    const NGramBag c(candidate, n);
    if (c.size() == 0) return 0.0;
    const NGramBag r(reference, n);
    std::size_t clipped = 0;
    for (const auto& [gram, count] : c.counts()) clipped += std::min(count, r.count(gram));
    if (clipped == 0) return 0.0;
    log_sum += std::log(static_cast<double>(clipped) / static_cast<double>(c.size()));
  }
  const double ratio = static_cast<double>(reference.size()) / static_cast<double>(candidate.size());
  const double bp = std::min(1.0, std::exp(1.0 - ratio));
  return bp * std::exp(log_sum / static_cast<double>(kMaxOrder));
}

double embed_score(const ModelState& frozen, std::span<const TokenId> candidate, std::span<const TokenId> reference) {
  if (candidate.empty() || reference.empty()) throw UndefinedMetricError("embedding score needs nonempty texts");
  const auto d = static_cast<std::size_t>(frozen.config.d_model);
  const auto c = unit_rows(hidden_states(frozen, candidate), candidate.size(), d);
  const auto r = unit_rows(hidden_states(frozen, reference), reference.size(), d);
  std::vector<double> best_c(candidate.size(), -INFINITY);
  std::vector<double> best_r(reference.size(), -INFINITY);
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      double sim = 0.0;
      for (std::size_t k = 0; k < d; ++k) sim += c[i * d + k] * r[j * d + k];
      best_c[i] = std::max(best_c[i], sim);
      best_r[j] = std::max(best_r[j], sim);
    }
  }
  const double precision = std::accumulate(best_c.begin(), best_c.end(), 0.0) / static_cast<double>(best_c.size());
  const double recall = std::accumulate(best_r.begin(), best_r.end(), 0.0) / static_cast<double>(best_r.size());
  const double denom = precision + recall;
  if (std::abs(denom) < 1e-12) return 0.0;
  return std::clamp(2.0 * precision * recall / denom, -1.0, 1.0);
}

double entropy(std::span<const double> distribution) {
  double sum = 0.0;
  for (double p : distribution) {
    if (!(p >= 0.0)) throw ParameterError("probabilities must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ParameterError("probabilities must sum to 1");
  double h = 0.0;
  for (double p : distribution) {
    if (p > 0.0) h -= p * std::log2(p);
  }
  return h;
}

double generation_entropy(const ModelState& state, std::span<const std::vector<TokenId>> prefixes, std::size_t n_new) {
  if (prefixes.empty()) throw ParameterError("generation entropy needs at least one prefix");
  std::vector<GenerationRequest> requests;
  for (const auto& p : prefixes) requests.push_back({p, n_new});
  std::map<TokenId, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& out : generate_batch(state, std::span<const GenerationRequest>(requests))) {
    for (TokenId t : out) ++counts[t];
    total += out.size();
  }
  if (total == 0) return 0.0;
  std::vector<double> p;
  for (const auto& [token, count] : counts) p.push_back(static_cast<double>(count) / static_cast<double>(total));
  return entropy(p);
}

double perplexity(const ModelState& state, std::span<const TokenSequence> samples) {
  if (samples.empty()) throw ParameterError("perplexity needs at least one sample");
  double total_nll = 0.0;
  std::size_t predicted = 0;
  for (const auto& x : samples) {
    const auto tokens = full_sequence(x);
    total_nll += nll(state, std::span<const TokenId>(tokens));
    predicted += tokens.size() - 1;
  }
  return std::exp(total_nll / static_cast<double>(predicted));
}

bool is_forgotten(const SampleMetrics& m, const Thresholds& th) { return m.embed_score < th.embed_a && m.bleu < th.bleu_b; }

bool stop_reached(std::span<const SampleMetrics> all, const Thresholds& th) {
  if (all.empty()) return false;
  double el = 0.0, acc = 0.0;
  for (const auto& m : all) {
    el += m.el;
    acc += m.ma;
  }
  const auto n = static_cast<double>(all.size());
  return el / n < th.el_stop && acc / n < th.ma_stop;
}

std::vector<SampleMetrics> evaluate_samples(const ModelState& state, const ModelState& frozen,
                                            std::span<const TokenSequence> samples, std::size_t el_order) {
  std::vector<SampleMetrics> out;
  if (samples.empty()) return out;
  const std::size_t len = samples.front().length();
  const std::size_t prefix_len = samples.front().prefix.size();
  for (const auto& x : samples) {
    if (x.length() != len || x.prefix.size() != prefix_len) throw ParameterError("samples must share one shape");
  }
  check_el_domain(len, el_order);
  auto splits = el_splits(len, el_order);
  splits.push_back(prefix_len);
  const auto passes = extract(state, samples, splits);
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& pass = passes[i];
    SampleMetrics m;
    m.id = samples[i].id;
    m.el = el_from_pass(pass, el_order);
    m.ma = ma_from_greedy(pass);
    m.continuation = pass.continuation[prefix_len];
    m.bleu = bleu(m.continuation, samples[i].suffix);
    m.embed_score = embed_score(frozen, m.continuation, samples[i].suffix);
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace unlearn
