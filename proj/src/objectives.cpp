// SPDX-License-Identifier: Apache-2.0
#include "unlearn/objectives.hpp"

#include <cmath>

#include "unlearn/error.hpp"

namespace unlearn {

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !(beta >= 0.0) || !std::isfinite(alpha) || !std::isfinite(beta)) {
    throw ParameterError("loss weights alpha and beta must be finite and nonnegative");
  }
}

LossBreakdown combine(double l_fgt, double l_lrn, double l_kl, const LossWeights& w) {
  w.validate();
  return {l_fgt, l_lrn, l_kl, l_fgt + w.alpha * l_lrn + w.beta * l_kl};
}

template <class T>
double loss_fgt(const BasicModelState<T>& state, const TokenSequence& x_fgt) {
  const auto tokens = full_sequence(x_fgt);
  return -nll(state, std::span<const TokenId>(tokens));
}

template <class T>
double loss_lrn(const BasicModelState<T>& state, const TokenSequence& x_lrn) {
  const auto tokens = full_sequence(x_lrn);
  return nll(state, std::span<const TokenId>(tokens));
}

template <class T>
double loss_kl(const BasicModelState<T>& state, const BasicModelState<T>& frozen, const TokenSequence& x_lrn) {
  auto arch = frozen.config;
  arch.seed = state.config.seed;  // init seed is not part of the architecture
  if (!(state.config == arch)) throw ParameterError("frozen and current model architectures differ");
  const auto tokens = full_sequence(x_lrn);
  const auto reference = forward(frozen, std::span<const TokenId>(tokens));
  SequenceLoss<T> term{tokens, 0.0, 1.0, &reference};
  return loss_values<T>(state, std::span(&term, 1)).front().kl;
}

template <class T>
LossBreakdown combined_loss(const BasicModelState<T>& state, const BasicModelState<T>& frozen,
                            const PairedSample& pair, const LossWeights& w) {
  w.validate();
  const double fgt = loss_fgt(state, pair.forget);
  double lrn = 0.0;
  double kl = 0.0;
  if (w.alpha != 0.0 || w.beta != 0.0) {
    lrn = loss_lrn(state, pair.learn);
    kl = loss_kl(state, frozen, pair.learn);
  }
  return combine(fgt, lrn, kl, w);
}

template <class T>
LossBreakdown accumulate_pair_gradients(const BasicModelState<T>& state, const TokenSequence& forget,
                                        const TokenSequence& learn, const BasicDistribution<T>& reference,
                                        const LossWeights& w, double scale, std::vector<T>& grads) {
  w.validate();
  const auto f_tokens = full_sequence(forget);
  const auto l_tokens = full_sequence(learn);
  std::vector<SequenceLoss<T>> terms;
  terms.push_back({f_tokens, -scale, 0.0, nullptr});
  const bool with_learn = w.alpha != 0.0 || w.beta != 0.0;
  if (with_learn) terms.push_back({l_tokens, w.alpha * scale, w.beta * scale, w.beta != 0.0 ? &reference : nullptr});
  std::vector<SequenceLossValue> values;
  accumulate_gradients<T>(state, terms, grads, &values);
  const double l_fgt = -values[0].nll;
  const double l_lrn = with_learn ? values[1].nll : 0.0;
  const double l_kl = with_learn ? values[1].kl : 0.0;
  return combine(l_fgt, l_lrn, l_kl, w);
}

#define UNLEARN_INSTANTIATE(T)                                                                                 \
  template double loss_fgt<T>(const BasicModelState<T>&, const TokenSequence&);                               \
  template double loss_lrn<T>(const BasicModelState<T>&, const TokenSequence&);                               \
  template double loss_kl<T>(const BasicModelState<T>&, const BasicModelState<T>&, const TokenSequence&);     \
  template LossBreakdown combined_loss<T>(const BasicModelState<T>&, const BasicModelState<T>&,               \
                                          const PairedSample&, const LossWeights&);                           \
  template LossBreakdown accumulate_pair_gradients<T>(const BasicModelState<T>&, const TokenSequence&,        \
                                                      const TokenSequence&, const BasicDistribution<T>&,      \
                                                      const LossWeights&, double, std::vector<T>&);

UNLEARN_INSTANTIATE(float)
UNLEARN_INSTANTIATE(double)

#undef UNLEARN_INSTANTIATE

}  // namespace unlearn
