// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unlearn/corpus.hpp"

namespace unlearn {

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 128;
  int d_ff = 512;
  int context_len = 64;
  int vocab_size = 512;
  std::uint64_t seed = 1;

  void validate() const;  // throws ParameterError
  int head_dim() const { return d_model / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Offsets of every tensor inside the flat parameter vector. Matrices are
// stored row-major as [in, out] so that y = x W + b.
class ParameterLayout {
 public:
  struct Block {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o;
    std::size_t ln2_g, ln2_b, w_fc, b_fc, w_proj, b_proj;
  };

  explicit ParameterLayout(const ModelConfig& config);

  std::size_t total() const { return total_; }
  const std::vector<TensorInfo>& tensors() const { return tensors_; }

  std::size_t wte = 0, wpe = 0, lnf_g = 0, lnf_b = 0, w_head = 0;
  std::vector<Block> blocks;

 private:
  std::size_t add(std::string name, std::vector<std::size_t> shape);

  std::vector<TensorInfo> tensors_;
  std::size_t total_ = 0;
};

// Parameters of the causal transformer. The float instantiation is the
// trained model; the double one is used for finite-difference checks.
template <class T>
struct BasicModelState {
  ModelConfig config;
  std::vector<T> params;
  std::uint64_t step = 0;

  bool operator==(const BasicModelState&) const = default;
};

using ModelState = BasicModelState<float>;

// Seeded init: N(0, 0.02) weights, residual output projections scaled by
// 1/sqrt(2 n_layers), zero biases, unit layer-norm gains.
ModelState init_model(const ModelConfig& config);

template <class To, class From>
BasicModelState<To> cast_state(const BasicModelState<From>& state) {
  BasicModelState<To> out;
  out.config = state.config;
  out.step = state.step;
  out.params.assign(state.params.begin(), state.params.end());
  return out;
}

// Row t is P(x_t | x_<t); row 0 is conditioned on the begin-of-sequence
// token alone.
template <class T>
struct BasicDistribution {
  std::size_t vocab = 0;
  std::vector<T> log_probs;  // rows * vocab

  std::size_t rows() const { return vocab == 0 ? 0 : log_probs.size() / vocab; }
  std::span<const T> log_row(std::size_t t) const { return {log_probs.data() + t * vocab, vocab}; }
  std::vector<T> probs(std::size_t t) const;
};

using PredictiveDistribution = BasicDistribution<float>;

template <class T>
BasicDistribution<T> forward(const BasicModelState<T>& state, std::span<const TokenId> tokens);

// Final-layer (post layer norm) hidden state at the position of each token,
// rows == tokens.size(). Requires tokens.size() + 1 <= context_len.
template <class T>
std::vector<T> hidden_states(const BasicModelState<T>& state, std::span<const TokenId> tokens);

// -sum_{t>=1} log P(x_t | x_<t), natural log. Requires |x| >= 2.
template <class T>
double nll(const BasicModelState<T>& state, std::span<const TokenId> tokens);

// Greedy continuation of exactly n_new tokens, ties broken toward the lowest id.
template <class T>
std::vector<TokenId> generate(const BasicModelState<T>& state, std::span<const TokenId> prefix, std::size_t n_new);

struct GenerationRequest {
  std::vector<TokenId> prefix;
  std::size_t n_new = 0;
};

// Same results as calling generate() once per request, decoded in lockstep.
template <class T>
std::vector<std::vector<TokenId>> generate_batch(const BasicModelState<T>& state,
                                                 std::span<const GenerationRequest> requests);

// Lowest id among the maxima.
template <class T>
TokenId argmax(std::span<const T> row);

// ---------------------------------------------------------------------------
// Loss expressions and reverse-mode gradients.

// One sequence's contribution to a scalar loss:
//   nll_weight * NLL(x) + kl_weight * sum_{t>=1} KL(reference_t || model_t).
template <class T>
struct SequenceLoss {
  std::span<const TokenId> tokens;
  double nll_weight = 0.0;
  double kl_weight = 0.0;
  const BasicDistribution<T>* reference = nullptr;  // required when kl_weight != 0
};

struct SequenceLossValue {
  double nll = 0.0;
  double kl = 0.0;
};

template <class T>
std::vector<SequenceLossValue> loss_values(const BasicModelState<T>& state, std::span<const SequenceLoss<T>> terms);

// Adds d(loss)/d(params) into `grads` (size == params.size()) and returns the
// weighted loss. Throws NumericError when the loss is not finite.
template <class T>
double accumulate_gradients(const BasicModelState<T>& state, std::span<const SequenceLoss<T>> terms,
                            std::vector<T>& grads, std::vector<SequenceLossValue>* values = nullptr);

// ---------------------------------------------------------------------------
// Incremental decoding.

template <class T>
struct KvCache {
  std::size_t length = 0;
  std::size_t capacity = 0;
  std::vector<std::vector<T>> keys;    // per layer, capacity * d_model
  std::vector<std::vector<T>> values;  // per layer, capacity * d_model

  void reset(const ModelConfig& config, std::size_t capacity);
};

// Teacher-forced pass over `input` (which must start with the
// begin-of-sequence token) that also fills a key/value cache.
template <class T>
struct Prefill {
  std::size_t vocab = 0;
  std::vector<T> logits;  // input.size() * vocab
  KvCache<T> cache;

  std::span<const T> logit_row(std::size_t t) const { return {logits.data() + t * vocab, vocab}; }
};

template <class T>
Prefill<T> prefill(const BasicModelState<T>& state, std::span<const TokenId> input, std::size_t capacity);

template <class T>
struct DecodeStream {
  KvCache<T> cache;           // positions already consumed
  std::vector<TokenId> out;   // out.back() is the next token to feed
  std::size_t target = 0;     // decode until out.size() == target
};

// Advances every stream until it holds `target` tokens.
template <class T>
void decode(const BasicModelState<T>& state, std::span<DecodeStream<T>> streams);

// Input convention shared by every sequence-level entry point: the
// begin-of-sequence token followed by all tokens but the last.
std::vector<TokenId> shifted_input(std::span<const TokenId> tokens);

std::size_t parameter_count(const ModelConfig& config);

}  // namespace unlearn
