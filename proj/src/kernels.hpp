// SPDX-License-Identifier: Apache-2.0
//
// Dense kernels for the transformer. Every output row is computed with an
// accumulation order that depends on the row alone, never on how many rows
// are processed together, so teacher-forced passes and incremental decoding
// produce bit-identical values.
#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <type_traits>
#include <cmath>
#include <cstddef>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace unlearn::kernels {

// Fixed-order dot product with 16 independent lanes.
template <class T>
inline T dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
  }
  for (std::size_t l = 0; i + l < n; ++l) acc[l] += a[i + l] * b[i + l];
  for (std::size_t w = kLanes / 2; w > 0; w /= 2) {
    for (std::size_t l = 0; l < w; ++l) acc[l] += acc[l + w];
  }
  return acc[0];
}

template <class T>
inline void axpy(T* __restrict y, T a, const T* __restrict x, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += a * x[j];
}

namespace detail {

// Portable path: every element accumulated in ascending k.
template <class T>
void gemm(T* __restrict y, const T* __restrict x, std::size_t rows, const T* __restrict w, const T* __restrict bias,
          std::size_t n_in, std::size_t n_out, bool accumulate) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* __restrict yr = y + r * n_out;
    if (!accumulate) {
      for (std::size_t j = 0; j < n_out; ++j) yr[j] = bias ? bias[j] : T(0);
    }
    const T* xr = x + r * n_in;
    for (std::size_t k = 0; k < n_in; ++k) {
      const T* __restrict wk = w + k * n_out;
      const T a = xr[k];
      for (std::size_t j = 0; j < n_out; ++j) yr[j] += a * wk[j];
    }
  }
}

#if defined(__AVX512F__)
// R rows by up to 64 columns, one fused multiply-add per (k, element) in
// ascending k. Partial column blocks use masked lanes, so every element sees
// the same instruction sequence whatever R or the column position.
template <int R, int V>
inline void tile_f32(float* y, const float* x, std::size_t x_stride, const float* w, const float* bias,
                     std::size_t n_in, std::size_t n_out, std::size_t j0, std::size_t jn, bool accumulate) {
  __mmask16 mask[V];
  for (int v = 0; v < V; ++v) {
    const long left = static_cast<long>(jn) - 16 * v;
    mask[v] = left >= 16 ? __mmask16(0xFFFF) : left <= 0 ? __mmask16(0) : __mmask16((1u << left) - 1u);
  }
  __m512 acc[R][V];
  for (int r = 0; r < R; ++r) {
    for (int v = 0; v < V; ++v) {
      const std::size_t off = j0 + 16 * static_cast<std::size_t>(v);
      if (accumulate) {
        acc[r][v] = _mm512_maskz_loadu_ps(mask[v], y + r * n_out + off);
      } else if (bias) {
        acc[r][v] = _mm512_maskz_loadu_ps(mask[v], bias + off);
      } else {
        acc[r][v] = _mm512_setzero_ps();
      }
    }
  }
  for (std::size_t k = 0; k < n_in; ++k) {
    const float* wk = w + k * n_out + j0;
    __m512 wv[V];
    for (int v = 0; v < V; ++v) wv[v] = _mm512_maskz_loadu_ps(mask[v], wk + 16 * v);
    for (int r = 0; r < R; ++r) {
      const __m512 a = _mm512_set1_ps(x[r * x_stride + k]);
      for (int v = 0; v < V; ++v) acc[r][v] = _mm512_fmadd_ps(a, wv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < R; ++r) {
    for (int v = 0; v < V; ++v) _mm512_mask_storeu_ps(y + r * n_out + j0 + 16 * v, mask[v], acc[r][v]);
  }
}

inline void gemm(float* __restrict y, const float* __restrict x, std::size_t rows, const float* __restrict w,
                 const float* __restrict bias, std::size_t n_in, std::size_t n_out, bool accumulate) {
  constexpr int kRows = 4, kVecs = 4;
  constexpr std::size_t kCols = 16 * kVecs;
  for (std::size_t j0 = 0; j0 < n_out; j0 += kCols) {
    const std::size_t jn = std::min<std::size_t>(kCols, n_out - j0);
    std::size_t r = 0;
    for (; r + kRows <= rows; r += kRows) {
      tile_f32<kRows, kVecs>(y + r * n_out, x + r * n_in, n_in, w, bias, n_in, n_out, j0, jn, accumulate);
    }
    for (; r < rows; ++r) tile_f32<1, kVecs>(y + r * n_out, x + r * n_in, n_in, w, bias, n_in, n_out, j0, jn, accumulate);
  }
}

// dx[r, k] = sum_j dy[r, j] * w[k, j] over an NR x NK block of (r, k).
template <int NR, int NK>
inline void dx_block(float* __restrict dx, const float* __restrict dy, const float* __restrict w, std::size_t r0,
                     std::size_t k0, std::size_t n_in, std::size_t n_out) {
  __m512 acc[NR][NK];
  for (int r = 0; r < NR; ++r) {
    for (int c = 0; c < NK; ++c) acc[r][c] = _mm512_setzero_ps();
  }
  const std::size_t full = n_out / 16 * 16;
  auto step = [&](std::size_t j, __mmask16 m) {
    __m512 wv[NK];
    for (int c = 0; c < NK; ++c) wv[c] = _mm512_maskz_loadu_ps(m, w + (k0 + c) * n_out + j);
    for (int r = 0; r < NR; ++r) {
      const __m512 dv = _mm512_maskz_loadu_ps(m, dy + (r0 + r) * n_out + j);
      for (int c = 0; c < NK; ++c) acc[r][c] = _mm512_fmadd_ps(dv, wv[c], acc[r][c]);
    }
  };
  for (std::size_t j = 0; j < full; j += 16) step(j, 0xFFFF);
  if (full < n_out) step(full, static_cast<__mmask16>((1u << (n_out - full)) - 1u));
  for (int r = 0; r < NR; ++r) {
    for (int c = 0; c < NK; ++c) dx[(r0 + r) * n_in + k0 + c] = _mm512_reduce_add_ps(acc[r][c]);
  }
}

inline void dx_gemm(float* __restrict dx, const float* __restrict dy, const float* __restrict w, std::size_t rows,
                    std::size_t n_in, std::size_t n_out) {
  std::size_t r0 = 0;
  for (; r0 + 4 <= rows; r0 += 4) {
    for (std::size_t k0 = 0; k0 < n_in;) {
      if (k0 + 4 <= n_in) {
        dx_block<4, 4>(dx, dy, w, r0, k0, n_in, n_out);
        k0 += 4;
      } else {
        dx_block<4, 1>(dx, dy, w, r0, k0, n_in, n_out);
        k0 += 1;
      }
    }
  }
  for (; r0 < rows; ++r0) {
    for (std::size_t k0 = 0; k0 < n_in; ++k0) dx_block<1, 1>(dx, dy, w, r0, k0, n_in, n_out);
  }
}
#endif

template <class T>
void dx_gemm(T* __restrict dx, const T* __restrict dy, const T* __restrict w, std::size_t rows, std::size_t n_in,
             std::size_t n_out) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < n_in; ++k) {
      T acc = 0;
      for (std::size_t j = 0; j < n_out; ++j) acc += dy[r * n_out + j] * w[k * n_out + j];
      dx[r * n_in + k] = acc;
    }
  }
}

template <class T>
void transpose(T* __restrict out, const T* __restrict in, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
  }
}

}  // namespace detail

// y[r, :] = bias + sum_k x[r, k] * W[k, :]   (bias may be null)
template <class T>
void matmul(T* __restrict y, const T* __restrict x, std::size_t rows, const T* __restrict w,
            const T* __restrict bias, std::size_t n_in, std::size_t n_out) {
  detail::gemm(y, x, rows, w, bias, n_in, n_out, false);
}

// Backward of matmul: dx = dy W^T (overwrites dx when non-null),
// dW += x^T dy, db += colsum(dy) (db may be null).
template <class T>
void matmul_backward(T* __restrict dx, T* __restrict dw, T* __restrict db, const T* __restrict dy,
                     const T* __restrict x, const T* __restrict w, std::size_t rows, std::size_t n_in,
                     std::size_t n_out) {
  thread_local std::vector<T> scratch;
  scratch.resize(rows * n_in);
  if (dx) detail::dx_gemm(dx, dy, w, rows, n_in, n_out);
  detail::transpose(scratch.data(), x, rows, n_in);
  detail::gemm(dw, scratch.data(), n_in, dy, static_cast<const T*>(nullptr), rows, n_out, true);
  if (db) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dyr = dy + r * n_out;
      for (std::size_t j = 0; j < n_out; ++j) db[j] += dyr[j];
    }
  }
}

inline constexpr double kLayerNormEps = 1e-5;

template <class T>
void layernorm_row(T* __restrict y, T* mean_out, T* rstd_out, const T* __restrict x, const T* __restrict g,
                   const T* __restrict b, std::size_t n) {
  T sum = 0;
  for (std::size_t i = 0; i < n; ++i) sum += x[i];
  const T mean = sum / static_cast<T>(n);
  T var = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = x[i] - mean;
    var += d * d;
  }
  var /= static_cast<T>(n);
  const T rstd = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
  for (std::size_t i = 0; i < n; ++i) y[i] = (x[i] - mean) * rstd * g[i] + b[i];
  if (mean_out) *mean_out = mean;
  if (rstd_out) *rstd_out = rstd;
}

// Accumulates dx, dg, db for one row.
template <class T>
void layernorm_row_backward(T* __restrict dx, T* __restrict dg, T* __restrict db, const T* __restrict dy,
                            const T* __restrict x, T mean, T rstd, const T* __restrict g, std::size_t n) {
  T mean_dxhat = 0;
  T mean_dxhat_xhat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T xhat = (x[i] - mean) * rstd;
    const T dxhat = dy[i] * g[i];
    mean_dxhat += dxhat;
    mean_dxhat_xhat += dxhat * xhat;
  }
  mean_dxhat /= static_cast<T>(n);
  mean_dxhat_xhat /= static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T xhat = (x[i] - mean) * rstd;
    const T dxhat = dy[i] * g[i];
    dg[i] += dy[i] * xhat;
    db[i] += dy[i];
    dx[i] += rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
  }
}

// exp with a branch-free body the compiler can vectorize; float only, within
// a few ulp of std::exp. Inputs are clamped to the finite float range.
inline float fast_exp(float x) {
  x = x < -87.3365447504f ? -87.3365447504f : x;
  x = x > 88.3762626647949f ? 88.3762626647949f : x;
  const float n = (x * 1.44269504088896341f + 12582912.0f) - 12582912.0f;  // round to nearest
  float r = x - n * 0.693359375f;
  r = r + n * 2.12194440e-4f;
  const float r2 = r * r;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r2 + r + 1.0f;
  const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

template <class T>
inline T exp_(T x) {
  if constexpr (std::is_same_v<T, float>) {
    return fast_exp(x);
  } else {
    return std::exp(x);
  }
}

template <class T>
inline T tanh_(T x) {
  if constexpr (std::is_same_v<T, float>) {
    return 1.0f - 2.0f / (fast_exp(2.0f * x) + 1.0f);
  } else {
    return std::tanh(x);
  }
}

template <class T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)

template <class T>
inline T gelu(T x) {
  const T u = kGeluC<T> * (x + static_cast<T>(0.044715) * x * x * x);
  return static_cast<T>(0.5) * x * (T(1) + tanh_(u));
}

template <class T>
inline T gelu_grad(T x) {
  const T u = kGeluC<T> * (x + static_cast<T>(0.044715) * x * x * x);
  const T th = tanh_(u);
  const T du = kGeluC<T> * (T(1) + static_cast<T>(3 * 0.044715) * x * x);
  return static_cast<T>(0.5) * (T(1) + th) + static_cast<T>(0.5) * x * (T(1) - th * th) * du;
}

// Causal attention for one query over n_keys cached keys/values of one head.
// probs receives the n_keys attention weights.
template <class T>
void attend_row(T* __restrict out, T* __restrict probs, const T* __restrict q, const T* keys,
                std::size_t key_stride, const T* values, std::size_t value_stride, std::size_t n_keys,
                std::size_t head_dim) {
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  T max_score = -INFINITY;
  for (std::size_t u = 0; u < n_keys; ++u) {
    probs[u] = dot(q, keys + u * key_stride, head_dim) * scale;
    max_score = std::max(max_score, probs[u]);
  }
  T sum = 0;
  for (std::size_t u = 0; u < n_keys; ++u) {
    probs[u] = exp_(probs[u] - max_score);
    sum += probs[u];
  }
  const T inv = T(1) / sum;
  for (std::size_t u = 0; u < n_keys; ++u) probs[u] *= inv;
  std::fill(out, out + head_dim, T(0));
  for (std::size_t u = 0; u < n_keys; ++u) axpy(out, probs[u], values + u * value_stride, head_dim);
}

// log-softmax of one row in place-free form; returns nothing, writes out.
template <class T>
void log_softmax_row(T* __restrict out, const T* __restrict logits, std::size_t n) {
  T max_logit = -INFINITY;
  for (std::size_t i = 0; i < n; ++i) max_logit = std::max(max_logit, logits[i]);
  T sum = 0;
  for (std::size_t i = 0; i < n; ++i) sum += exp_(logits[i] - max_logit);
  const T lse = max_logit + std::log(sum);
  for (std::size_t i = 0; i < n; ++i) out[i] = logits[i] - lse;
}

}  // namespace unlearn::kernels
