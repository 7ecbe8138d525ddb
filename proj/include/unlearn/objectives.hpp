// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "unlearn/corpus.hpp"
#include "unlearn/model.hpp"
#include "unlearn/pairing.hpp"

namespace unlearn {

struct LossWeights {
  double alpha = 0.5;
  double beta = 1.0;

  void validate() const;  // alpha, beta >= 0
  bool operator==(const LossWeights&) const = default;
};

struct LossBreakdown {
  double l_fgt = 0.0;
  double l_lrn = 0.0;
  double l_kl = 0.0;
  double combined = 0.0;

  bool operator==(const LossBreakdown&) const = default;
};

// sum_t log P(x_t | x_<t) over the forget sequence; equals -nll.
template <class T>
double loss_fgt(const BasicModelState<T>& state, const TokenSequence& x_fgt);

// -sum_t log P(x_t | x_<t) over the paired sequence.
template <class T>
double loss_lrn(const BasicModelState<T>& state, const TokenSequence& x_lrn);

// sum_t KL[P_frozen(.|x_<t) || P_state(.|x_<t)], natural log, full vocabulary.
template <class T>
double loss_kl(const BasicModelState<T>& state, const BasicModelState<T>& frozen, const TokenSequence& x_lrn);

LossBreakdown combine(double l_fgt, double l_lrn, double l_kl, const LossWeights& w);

template <class T>
LossBreakdown combined_loss(const BasicModelState<T>& state, const BasicModelState<T>& frozen,
                            const PairedSample& pair, const LossWeights& w);

// Adds scale * d(combined)/d(params) into grads; `reference` is the frozen
// model's distribution over pair.learn. With alpha = beta = 0 only the forget
// sequence is visited.
template <class T>
LossBreakdown accumulate_pair_gradients(const BasicModelState<T>& state, const TokenSequence& forget,
                                        const TokenSequence& learn, const BasicDistribution<T>& reference,
                                        const LossWeights& w, double scale, std::vector<T>& grads);

}  // namespace unlearn
