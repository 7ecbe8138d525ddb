// SPDX-License-Identifier: Apache-2.0
#include "unlearn/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "kernels.hpp"
#include "unlearn/error.hpp"

namespace unlearn {
namespace {

using kernels::matmul;
using kernels::matmul_backward;

constexpr double kInitStd = 0.02;

// Activations of one teacher-forced pass over n positions.
template <class T>
struct Workspace {
  struct Layer {
    std::vector<T> x_in, ln1, ln1_mean, ln1_rstd, qkv, att, att_out, x_mid;
    std::vector<T> ln2, ln2_mean, ln2_rstd, fc, act;
  };

  std::size_t n = 0;
  std::vector<TokenId> input;
  std::vector<Layer> layers;
  std::vector<T> x_out, lnf, lnf_mean, lnf_rstd, logits;
};

struct Dims {
  std::size_t d, h, hd, f, v;
  explicit Dims(const ModelConfig& c)
      : d(static_cast<std::size_t>(c.d_model)),
        h(static_cast<std::size_t>(c.n_heads)),
        hd(static_cast<std::size_t>(c.head_dim())),
        f(static_cast<std::size_t>(c.d_ff)),
        v(static_cast<std::size_t>(c.vocab_size)) {}
};

template <class T>
void check_tokens(const ModelConfig& c, std::span<const TokenId> tokens) {
  for (TokenId t : tokens) {
    if (t < 0 || t >= c.vocab_size) throw ParameterError("token id " + std::to_string(t) + " outside vocabulary");
  }
}

template <class T>
void check_state(const BasicModelState<T>& state, const ParameterLayout& layout) {
  if (state.params.size() != layout.total()) throw ParameterError("parameter vector does not match model config");
}

template <class T>
void embed_row(T* x, const BasicModelState<T>& state, const ParameterLayout& lay, TokenId token, std::size_t pos,
               std::size_t d) {
  const T* te = state.params.data() + lay.wte + static_cast<std::size_t>(token) * d;
  const T* pe = state.params.data() + lay.wpe + pos * d;
  for (std::size_t i = 0; i < d; ++i) x[i] = te[i] + pe[i];
}

template <class T>
void run_forward(const BasicModelState<T>& state, const ParameterLayout& lay, std::span<const TokenId> input,
                 Workspace<T>& ws, KvCache<T>* kv, bool want_logits) {
  const auto& c = state.config;
  const Dims dm(c);
  const std::size_t n = input.size();
  if (n == 0) throw ParameterError("empty model input");
  if (n > static_cast<std::size_t>(c.context_len)) throw ParameterError("input longer than context_len");
  check_tokens<T>(c, input);
  const T* p = state.params.data();

  ws.n = n;
  ws.input.assign(input.begin(), input.end());
  ws.layers.resize(lay.blocks.size());
  std::vector<T> x(n * dm.d);
  for (std::size_t t = 0; t < n; ++t) embed_row(x.data() + t * dm.d, state, lay, input[t], t, dm.d);

  std::vector<T> tmp(n * dm.d);
  for (std::size_t l = 0; l < lay.blocks.size(); ++l) {
    const auto& b = lay.blocks[l];
    auto& w = ws.layers[l];
    w.x_in = x;
    w.ln1.resize(n * dm.d);
    w.ln1_mean.resize(n);
    w.ln1_rstd.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      kernels::layernorm_row(w.ln1.data() + t * dm.d, &w.ln1_mean[t], &w.ln1_rstd[t], x.data() + t * dm.d,
                             p + b.ln1_g, p + b.ln1_b, dm.d);
    }
    w.qkv.resize(n * 3 * dm.d);
    matmul(w.qkv.data(), w.ln1.data(), n, p + b.w_qkv, p + b.b_qkv, dm.d, 3 * dm.d);
    if (kv) {
      for (std::size_t t = 0; t < n; ++t) {
        const T* row = w.qkv.data() + t * 3 * dm.d;
        std::copy(row + dm.d, row + 2 * dm.d, kv->keys[l].data() + t * dm.d);
        std::copy(row + 2 * dm.d, row + 3 * dm.d, kv->values[l].data() + t * dm.d);
      }
    }
    w.att.assign(dm.h * n * n, T(0));
    w.att_out.resize(n * dm.d);
    for (std::size_t hh = 0; hh < dm.h; ++hh) {
      for (std::size_t t = 0; t < n; ++t) {
        const T* q = w.qkv.data() + t * 3 * dm.d + hh * dm.hd;
        kernels::attend_row(w.att_out.data() + t * dm.d + hh * dm.hd, w.att.data() + (hh * n + t) * n, q,
                            w.qkv.data() + dm.d + hh * dm.hd, 3 * dm.d, w.qkv.data() + 2 * dm.d + hh * dm.hd,
                            3 * dm.d, t + 1, dm.hd);
      }
    }
    matmul(tmp.data(), w.att_out.data(), n, p + b.w_o, p + b.b_o, dm.d, dm.d);
    w.x_mid.resize(n * dm.d);
    for (std::size_t i = 0; i < n * dm.d; ++i) w.x_mid[i] = w.x_in[i] + tmp[i];

    w.ln2.resize(n * dm.d);
    w.ln2_mean.resize(n);
    w.ln2_rstd.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
      kernels::layernorm_row(w.ln2.data() + t * dm.d, &w.ln2_mean[t], &w.ln2_rstd[t], w.x_mid.data() + t * dm.d,
                             p + b.ln2_g, p + b.ln2_b, dm.d);
    }
    w.fc.resize(n * dm.f);
    matmul(w.fc.data(), w.ln2.data(), n, p + b.w_fc, p + b.b_fc, dm.d, dm.f);
    w.act.resize(n * dm.f);
    for (std::size_t i = 0; i < n * dm.f; ++i) w.act[i] = kernels::gelu(w.fc[i]);
    matmul(tmp.data(), w.act.data(), n, p + b.w_proj, p + b.b_proj, dm.f, dm.d);
    for (std::size_t i = 0; i < n * dm.d; ++i) x[i] = w.x_mid[i] + tmp[i];
  }
  if (kv) kv->length = n;

  ws.x_out = x;
  ws.lnf.resize(n * dm.d);
  ws.lnf_mean.resize(n);
  ws.lnf_rstd.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    kernels::layernorm_row(ws.lnf.data() + t * dm.d, &ws.lnf_mean[t], &ws.lnf_rstd[t], x.data() + t * dm.d,
                           p + lay.lnf_g, p + lay.lnf_b, dm.d);
  }
  if (want_logits) {
    ws.logits.resize(n * dm.v);
    matmul(ws.logits.data(), ws.lnf.data(), n, p + lay.w_head, static_cast<const T*>(nullptr), dm.d, dm.v);
  }
}

template <class T>
void run_backward(const BasicModelState<T>& state, const ParameterLayout& lay, const Workspace<T>& ws,
                  const std::vector<T>& dlogits, std::vector<T>& grads) {
  const Dims dm(state.config);
  const std::size_t n = ws.n;
  const T* p = state.params.data();
  T* g = grads.data();

  std::vector<T> dlnf(n * dm.d);
  matmul_backward(dlnf.data(), g + lay.w_head, static_cast<T*>(nullptr), dlogits.data(), ws.lnf.data(),
                  p + lay.w_head, n, dm.d, dm.v);
  std::vector<T> dx(n * dm.d, T(0));
  for (std::size_t t = 0; t < n; ++t) {
    kernels::layernorm_row_backward(dx.data() + t * dm.d, g + lay.lnf_g, g + lay.lnf_b, dlnf.data() + t * dm.d,
                                    ws.x_out.data() + t * dm.d, ws.lnf_mean[t], ws.lnf_rstd[t], p + lay.lnf_g, dm.d);
  }

  std::vector<T> dact(n * dm.f), dln(n * dm.d), dmid(n * dm.d), datt_out(n * dm.d), dqkv(n * 3 * dm.d);
  std::vector<T> dp(static_cast<std::size_t>(state.config.context_len));
  const T scale = T(1) / std::sqrt(static_cast<T>(dm.hd));
  for (std::size_t li = lay.blocks.size(); li-- > 0;) {
    const auto& b = lay.blocks[li];
    const auto& w = ws.layers[li];

    // x_out = x_mid + proj(gelu(fc(ln2(x_mid))))
    matmul_backward(dact.data(), g + b.w_proj, g + b.b_proj, dx.data(), w.act.data(), p + b.w_proj, n, dm.f, dm.d);
    for (std::size_t i = 0; i < n * dm.f; ++i) dact[i] *= kernels::gelu_grad(w.fc[i]);
    matmul_backward(dln.data(), g + b.w_fc, g + b.b_fc, dact.data(), w.ln2.data(), p + b.w_fc, n, dm.d, dm.f);
    dmid = dx;
    for (std::size_t t = 0; t < n; ++t) {
      kernels::layernorm_row_backward(dmid.data() + t * dm.d, g + b.ln2_g, g + b.ln2_b, dln.data() + t * dm.d,
                                      w.x_mid.data() + t * dm.d, w.ln2_mean[t], w.ln2_rstd[t], p + b.ln2_g, dm.d);
    }

    // x_mid = x_in + attn(ln1(x_in))
    matmul_backward(datt_out.data(), g + b.w_o, g + b.b_o, dmid.data(), w.att_out.data(), p + b.w_o, n, dm.d, dm.d);
    std::fill(dqkv.begin(), dqkv.end(), T(0));
    for (std::size_t hh = 0; hh < dm.h; ++hh) {
      for (std::size_t t = 0; t < n; ++t) {
        const T* probs = w.att.data() + (hh * n + t) * n;
        const T* dout = datt_out.data() + t * dm.d + hh * dm.hd;
        const T* q = w.qkv.data() + t * 3 * dm.d + hh * dm.hd;
        T* dq = dqkv.data() + t * 3 * dm.d + hh * dm.hd;
        T weighted = 0;
        for (std::size_t u = 0; u <= t; ++u) {
          const T* v = w.qkv.data() + u * 3 * dm.d + 2 * dm.d + hh * dm.hd;
          T* dv = dqkv.data() + u * 3 * dm.d + 2 * dm.d + hh * dm.hd;
          dp[u] = kernels::dot(dout, v, dm.hd);
          kernels::axpy(dv, probs[u], dout, dm.hd);
          weighted += probs[u] * dp[u];
        }
        for (std::size_t u = 0; u <= t; ++u) {
          const T ds = probs[u] * (dp[u] - weighted) * scale;
          const T* k = w.qkv.data() + u * 3 * dm.d + dm.d + hh * dm.hd;
          T* dk = dqkv.data() + u * 3 * dm.d + dm.d + hh * dm.hd;
          kernels::axpy(dq, ds, k, dm.hd);
          kernels::axpy(dk, ds, q, dm.hd);
        }
      }
    }
    matmul_backward(dln.data(), g + b.w_qkv, g + b.b_qkv, dqkv.data(), w.ln1.data(), p + b.w_qkv, n, dm.d,
                    3 * dm.d);
    dx = dmid;
    for (std::size_t t = 0; t < n; ++t) {
      kernels::layernorm_row_backward(dx.data() + t * dm.d, g + b.ln1_g, g + b.ln1_b, dln.data() + t * dm.d,
                                      w.x_in.data() + t * dm.d, w.ln1_mean[t], w.ln1_rstd[t], p + b.ln1_g, dm.d);
    }
  }

  for (std::size_t t = 0; t < n; ++t) {
    const T* dxt = dx.data() + t * dm.d;
    T* dte = g + lay.wte + static_cast<std::size_t>(ws.input[t]) * dm.d;
    T* dpe = g + lay.wpe + t * dm.d;
    for (std::size_t i = 0; i < dm.d; ++i) {
      dte[i] += dxt[i];
      dpe[i] += dxt[i];
    }
  }
}

// Loss rows for one sequence; fills dlogits when non-null.
template <class T>
SequenceLossValue sequence_loss(const Workspace<T>& ws, const SequenceLoss<T>& term, std::size_t vocab,
                                std::vector<T>* dlogits) {
  const std::size_t n = ws.n;
  SequenceLossValue value;
  std::vector<T> logp(vocab);
  if (dlogits) dlogits->assign(n * vocab, T(0));
  for (std::size_t t = 1; t < n; ++t) {
    kernels::log_softmax_row(logp.data(), ws.logits.data() + t * vocab, vocab);
    const auto target = static_cast<std::size_t>(term.tokens[t]);
    value.nll -= static_cast<double>(logp[target]);
    std::span<const T> ref;
    if (term.kl_weight != 0.0) {
      ref = term.reference->log_row(t);
      double kl = 0.0;
      for (std::size_t v = 0; v < vocab; ++v) {
        const double lp0 = static_cast<double>(ref[v]);
        kl += static_cast<double>(kernels::exp_(ref[v])) * (lp0 - static_cast<double>(logp[v]));
      }
      value.kl += kl;
    }
    if (dlogits) {
      T* d = dlogits->data() + t * vocab;
      const T wn = static_cast<T>(term.nll_weight);
      const T wk = static_cast<T>(term.kl_weight);
      for (std::size_t v = 0; v < vocab; ++v) {
        const T prob = kernels::exp_(logp[v]);
        T grad = wn * prob;
        if (term.kl_weight != 0.0) grad += wk * (prob - kernels::exp_(ref[v]));
        d[v] = grad;
      }
      d[target] -= wn;
    }
  }
  return value;
}

template <class T>
void check_term(const ModelConfig& c, const SequenceLoss<T>& term) {
  if (term.tokens.size() < 2) throw ParameterError("loss sequence needs at least two tokens");
  if (term.kl_weight != 0.0) {
    if (!term.reference) throw ParameterError("KL term needs a reference distribution");
    if (term.reference->vocab != static_cast<std::size_t>(c.vocab_size) ||
        term.reference->rows() != term.tokens.size()) {
      throw ParameterError("reference distribution shape does not match sequence");
    }
  }
}

// Box-Muller on a 64-bit engine; avoids the library-defined normal_distribution.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : rng_(seed) {}
  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    } while (u1 <= 0.0);
    const double u2 = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 || context_len < 2 || vocab_size < 2) {
    throw ParameterError("model dimensions must be positive (context_len >= 2)");
  }
  if (d_model % n_heads != 0) {
    throw ParameterError("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                         std::to_string(n_heads) + ")");
  }
}

ParameterLayout::ParameterLayout(const ModelConfig& c) {
  c.validate();
  const auto d = static_cast<std::size_t>(c.d_model);
  const auto f = static_cast<std::size_t>(c.d_ff);
  const auto v = static_cast<std::size_t>(c.vocab_size);
  wte = add("wte", {v, d});
  wpe = add("wpe", {static_cast<std::size_t>(c.context_len), d});
  for (int l = 0; l < c.n_layers; ++l) {
    const std::string pre = "h" + std::to_string(l) + ".";
    Block b{};
    b.ln1_g = add(pre + "ln1.g", {d});
    b.ln1_b = add(pre + "ln1.b", {d});
    b.w_qkv = add(pre + "attn.w_qkv", {d, 3 * d});
    b.b_qkv = add(pre + "attn.b_qkv", {3 * d});
    b.w_o = add(pre + "attn.w_o", {d, d});
    b.b_o = add(pre + "attn.b_o", {d});
    b.ln2_g = add(pre + "ln2.g", {d});
    b.ln2_b = add(pre + "ln2.b", {d});
    b.w_fc = add(pre + "mlp.w_fc", {d, f});
    b.b_fc = add(pre + "mlp.b_fc", {f});
    b.w_proj = add(pre + "mlp.w_proj", {f, d});
    b.b_proj = add(pre + "mlp.b_proj", {d});
    blocks.push_back(b);
  }
  lnf_g = add("lnf.g", {d});
  lnf_b = add("lnf.b", {d});
  w_head = add("head.w", {d, v});
}

std::size_t ParameterLayout::add(std::string name, std::vector<std::size_t> shape) {
  std::size_t size = 1;
  for (auto s : shape) size *= s;
  const std::size_t offset = total_;
  tensors_.push_back({std::move(name), std::move(shape), offset, size});
  total_ += size;
  return offset;
}

std::size_t parameter_count(const ModelConfig& config) { return ParameterLayout(config).total(); }

ModelState init_model(const ModelConfig& config) {
  const ParameterLayout lay(config);
  ModelState s;
  s.config = config;
  s.params.assign(lay.total(), 0.0f);
  NormalStream normal(config.seed);
  const double residual_std = kInitStd / std::sqrt(2.0 * config.n_layers);
  for (const auto& t : lay.tensors()) {
    const bool is_gain = t.name.ends_with(".g");
    const bool is_matrix = t.shape.size() == 2;
    const bool is_residual = t.name.ends_with("w_o") || t.name.ends_with("w_proj");
    for (std::size_t i = 0; i < t.size; ++i) {
      float& v = s.params[t.offset + i];
      if (is_gain) {
        v = 1.0f;
      } else if (is_matrix) {
        v = static_cast<float>(normal.next() * (is_residual ? residual_std : kInitStd));
      }
    }
  }
  return s;
}

std::vector<TokenId> shifted_input(std::span<const TokenId> tokens) {
  std::vector<TokenId> input;
  if (tokens.empty()) return input;
  input.reserve(tokens.size());
  input.push_back(Vocabulary::kBos);
  input.insert(input.end(), tokens.begin(), tokens.end() - 1);
  return input;
}

template <class T>
std::vector<T> BasicDistribution<T>::probs(std::size_t t) const {
  std::vector<T> out(vocab);
  const auto row = log_row(t);
  for (std::size_t v = 0; v < vocab; ++v) out[v] = std::exp(row[v]);
  return out;
}

template <class T>
TokenId argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i) {
    if (row[i] > row[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

template <class T>
BasicDistribution<T> forward(const BasicModelState<T>& state, std::span<const TokenId> tokens) {
  const ParameterLayout lay(state.config);
  check_state(state, lay);
  BasicDistribution<T> dist;
  dist.vocab = static_cast<std::size_t>(state.config.vocab_size);
  if (tokens.empty()) return dist;
  check_tokens<T>(state.config, tokens);
  Workspace<T> ws;
  const auto input = shifted_input(tokens);
  run_forward<T>(state, lay, input, ws, nullptr, true);
  dist.log_probs.resize(ws.logits.size());
  for (std::size_t t = 0; t < ws.n; ++t) {
    kernels::log_softmax_row(dist.log_probs.data() + t * dist.vocab, ws.logits.data() + t * dist.vocab, dist.vocab);
  }
  return dist;
}

template <class T>
std::vector<T> hidden_states(const BasicModelState<T>& state, std::span<const TokenId> tokens) {
  const ParameterLayout lay(state.config);
  check_state(state, lay);
  std::vector<TokenId> input;
  input.reserve(tokens.size() + 1);
  input.push_back(Vocabulary::kBos);
  input.insert(input.end(), tokens.begin(), tokens.end());
  Workspace<T> ws;
  run_forward<T>(state, lay, input, ws, nullptr, false);
  const auto d = static_cast<std::size_t>(state.config.d_model);
  return {ws.lnf.begin() + static_cast<long>(d), ws.lnf.end()};
}

template <class T>
double nll(const BasicModelState<T>& state, std::span<const TokenId> tokens) {
  SequenceLoss<T> term{tokens, 1.0, 0.0, nullptr};
  return loss_values<T>(state, std::span(&term, 1)).front().nll;
}

template <class T>
std::vector<SequenceLossValue> loss_values(const BasicModelState<T>& state, std::span<const SequenceLoss<T>> terms) {
  const ParameterLayout lay(state.config);
  check_state(state, lay);
  std::vector<SequenceLossValue> out;
  Workspace<T> ws;
  for (const auto& term : terms) {
    check_term(state.config, term);
    const auto input = shifted_input(term.tokens);
    check_tokens<T>(state.config, term.tokens);
    run_forward<T>(state, lay, input, ws, nullptr, true);
    out.push_back(sequence_loss<T>(ws, term, static_cast<std::size_t>(state.config.vocab_size), nullptr));
  }
  return out;
}

template <class T>
double accumulate_gradients(const BasicModelState<T>& state, std::span<const SequenceLoss<T>> terms,
                            std::vector<T>& grads, std::vector<SequenceLossValue>* values) {
  const ParameterLayout lay(state.config);
  check_state(state, lay);
  if (grads.size() != lay.total()) throw ParameterError("gradient buffer does not match parameters");
  Workspace<T> ws;
  std::vector<T> dlogits;
  double total = 0.0;
  const auto vocab = static_cast<std::size_t>(state.config.vocab_size);
  for (const auto& term : terms) {
    check_term(state.config, term);
    check_tokens<T>(state.config, term.tokens);
    const auto input = shifted_input(term.tokens);
    run_forward<T>(state, lay, input, ws, nullptr, true);
    const auto value = sequence_loss(ws, term, vocab, &dlogits);
    const double weighted = term.nll_weight * value.nll + term.kl_weight * value.kl;
    if (!std::isfinite(weighted)) throw NumericError("non-finite loss while computing gradients");
    total += weighted;
    if (values) values->push_back(value);
    run_backward(state, lay, ws, dlogits, grads);
  }
  return total;
}

template <class T>
void KvCache<T>::reset(const ModelConfig& config, std::size_t cap) {
  length = 0;
  capacity = cap;
  const auto size = cap * static_cast<std::size_t>(config.d_model);
  keys.assign(static_cast<std::size_t>(config.n_layers), std::vector<T>(size));
  values.assign(static_cast<std::size_t>(config.n_layers), std::vector<T>(size));
}

template <class T>
Prefill<T> prefill(const BasicModelState<T>& state, std::span<const TokenId> input, std::size_t capacity) {
  const ParameterLayout lay(state.config);
  check_state(state, lay);
  if (input.empty() || input.front() != Vocabulary::kBos) throw ParameterError("prefill input must start with <bos>");
  capacity = std::max(capacity, input.size());
  if (capacity > static_cast<std::size_t>(state.config.context_len)) {
    throw ParameterError("decode length exceeds context_len");
  }
  Prefill<T> out;
  out.vocab = static_cast<std::size_t>(state.config.vocab_size);
  out.cache.reset(state.config, capacity);
  Workspace<T> ws;
  run_forward(state, lay, input, ws, &out.cache, true);
  out.logits = std::move(ws.logits);
  return out;
}

template <class T>
void decode(const BasicModelState<T>& state, std::span<DecodeStream<T>> streams) {
  const ParameterLayout lay(state.config);
  check_state(state, lay);
  const Dims dm(state.config);
  const T* p = state.params.data();

  std::vector<std::size_t> active;
  std::vector<T> x, ln, qkv, att_out, tmp, mid, fc, logits;
  std::vector<T> probs(static_cast<std::size_t>(state.config.context_len));
  for (;;) {
    active.clear();
    for (std::size_t i = 0; i < streams.size(); ++i) {
      auto& s = streams[i];
      if (s.out.size() > s.target) throw ParameterError("decode stream already past its target");
      if (s.out.size() == s.target) continue;
      if (s.out.empty()) throw ParameterError("decode stream needs a first token");
      if (s.cache.length >= s.cache.capacity) throw ParameterError("decode stream exceeded its cache capacity");
      active.push_back(i);
    }
    if (active.empty()) return;
    const std::size_t r = active.size();
    x.resize(r * dm.d);
    for (std::size_t i = 0; i < r; ++i) {
      const auto& s = streams[active[i]];
      const TokenId tok = s.out.back();
      if (tok < 0 || tok >= state.config.vocab_size) throw ParameterError("decode token outside vocabulary");
      embed_row(x.data() + i * dm.d, state, lay, tok, s.cache.length, dm.d);
    }
    ln.resize(r * dm.d);
    qkv.resize(r * 3 * dm.d);
    att_out.resize(r * dm.d);
    tmp.resize(r * dm.d);
    mid.resize(r * dm.d);
    fc.resize(r * dm.f);
    for (std::size_t l = 0; l < lay.blocks.size(); ++l) {
      const auto& b = lay.blocks[l];
      for (std::size_t i = 0; i < r; ++i) {
        kernels::layernorm_row(ln.data() + i * dm.d, static_cast<T*>(nullptr), static_cast<T*>(nullptr),
                               x.data() + i * dm.d, p + b.ln1_g, p + b.ln1_b, dm.d);
      }
      matmul(qkv.data(), ln.data(), r, p + b.w_qkv, p + b.b_qkv, dm.d, 3 * dm.d);
      for (std::size_t i = 0; i < r; ++i) {
        auto& cache = streams[active[i]].cache;
        const std::size_t pos = cache.length;
        const T* row = qkv.data() + i * 3 * dm.d;
        std::copy(row + dm.d, row + 2 * dm.d, cache.keys[l].data() + pos * dm.d);
        std::copy(row + 2 * dm.d, row + 3 * dm.d, cache.values[l].data() + pos * dm.d);
        for (std::size_t hh = 0; hh < dm.h; ++hh) {
          kernels::attend_row(att_out.data() + i * dm.d + hh * dm.hd, probs.data(), row + hh * dm.hd,
                              cache.keys[l].data() + hh * dm.hd, dm.d, cache.values[l].data() + hh * dm.hd, dm.d,
                              pos + 1, dm.hd);
        }
      }
      matmul(tmp.data(), att_out.data(), r, p + b.w_o, p + b.b_o, dm.d, dm.d);
      for (std::size_t i = 0; i < r * dm.d; ++i) mid[i] = x[i] + tmp[i];
      for (std::size_t i = 0; i < r; ++i) {
        kernels::layernorm_row(ln.data() + i * dm.d, static_cast<T*>(nullptr), static_cast<T*>(nullptr),
                               mid.data() + i * dm.d, p + b.ln2_g, p + b.ln2_b, dm.d);
      }
      matmul(fc.data(), ln.data(), r, p + b.w_fc, p + b.b_fc, dm.d, dm.f);
      for (auto& v : fc) v = kernels::gelu(v);
      matmul(tmp.data(), fc.data(), r, p + b.w_proj, p + b.b_proj, dm.f, dm.d);
      for (std::size_t i = 0; i < r * dm.d; ++i) x[i] = mid[i] + tmp[i];
    }
    for (std::size_t i = 0; i < r; ++i) {
      kernels::layernorm_row(ln.data() + i * dm.d, static_cast<T*>(nullptr), static_cast<T*>(nullptr),
                             x.data() + i * dm.d, p + lay.lnf_g, p + lay.lnf_b, dm.d);
    }
    logits.resize(r * dm.v);
    matmul(logits.data(), ln.data(), r, p + lay.w_head, static_cast<const T*>(nullptr), dm.d, dm.v);
    for (std::size_t i = 0; i < r; ++i) {
      auto& s = streams[active[i]];
      s.cache.length += 1;
      s.out.push_back(argmax<T>(std::span<const T>(logits.data() + i * dm.v, dm.v)));
    }
  }
}

template <class T>
std::vector<std::vector<TokenId>> generate_batch(const BasicModelState<T>& state,
                                                 std::span<const GenerationRequest> requests) {
  std::vector<std::vector<TokenId>> results(requests.size());
  std::vector<DecodeStream<T>> streams;
  std::vector<std::size_t> owner;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto& req = requests[i];
    if (req.prefix.size() + req.n_new > static_cast<std::size_t>(state.config.context_len)) {
      throw ParameterError("prefix plus generated tokens exceed context_len");
    }
    if (req.n_new == 0) continue;
    std::vector<TokenId> input;
    input.push_back(Vocabulary::kBos);
    input.insert(input.end(), req.prefix.begin(), req.prefix.end());
    auto pre = prefill(state, std::span<const TokenId>(input), input.size() + req.n_new - 1);
    DecodeStream<T> s;
    s.out.push_back(argmax<T>(pre.logit_row(input.size() - 1)));
    s.target = req.n_new;
    s.cache = std::move(pre.cache);
    streams.push_back(std::move(s));
    owner.push_back(i);
  }
  decode(state, std::span<DecodeStream<T>>(streams));
  for (std::size_t k = 0; k < streams.size(); ++k) results[owner[k]] = std::move(streams[k].out);
  return results;
}

template <class T>
std::vector<TokenId> generate(const BasicModelState<T>& state, std::span<const TokenId> prefix, std::size_t n_new) {
  GenerationRequest req{{prefix.begin(), prefix.end()}, n_new};
  return std::move(generate_batch(state, std::span<const GenerationRequest>(&req, 1)).front());
}

#define UNLEARN_INSTANTIATE(T)                                                                                      \
  template struct BasicDistribution<T>;                                                                             \
  template struct KvCache<T>;                                                                                       \
  template TokenId argmax<T>(std::span<const T>);                                                                   \
  template BasicDistribution<T> forward<T>(const BasicModelState<T>&, std::span<const TokenId>);                    \
  template std::vector<T> hidden_states<T>(const BasicModelState<T>&, std::span<const TokenId>);                    \
  template double nll<T>(const BasicModelState<T>&, std::span<const TokenId>);                                      \
  template std::vector<TokenId> generate<T>(const BasicModelState<T>&, std::span<const TokenId>, std::size_t);      \
  template std::vector<std::vector<TokenId>> generate_batch<T>(const BasicModelState<T>&,                           \
                                                               std::span<const GenerationRequest>);                 \
  template std::vector<SequenceLossValue> loss_values<T>(const BasicModelState<T>&,                                 \
                                                         std::span<const SequenceLoss<T>>);                         \
  template double accumulate_gradients<T>(const BasicModelState<T>&, std::span<const SequenceLoss<T>>,              \
                                          std::vector<T>&, std::vector<SequenceLossValue>*);                        \
  template Prefill<T> prefill<T>(const BasicModelState<T>&, std::span<const TokenId>, std::size_t);                 \
  template void decode<T>(const BasicModelState<T>&, std::span<DecodeStream<T>>);

UNLEARN_INSTANTIATE(float)
UNLEARN_INSTANTIATE(double)

#undef UNLEARN_INSTANTIATE

}  // namespace unlearn
