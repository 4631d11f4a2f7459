#pragma once

// Row-level numeric kernels. Both the recorded (autodiff) forward pass and the
// frame-by-frame streaming path call these, so the two produce bit-identical
// values as long as they feed the same rows in the same order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>

namespace surt::kernels {

template <typename T>
inline T sigmoid(T x) {
  return T{1} / (T{1} + std::exp(-x));
}

// out = in * W + b, W is [in.size() x out.size()] row-major. b may be empty.
template <typename T>
inline void affine_row(std::span<const T> in, const T* W, std::span<const T> b,
                       std::span<T> out) {
  const std::size_t dout = out.size();
  if (b.empty()) {
    std::fill(out.begin(), out.end(), T{0});
  } else {
    std::copy(b.begin(), b.end(), out.begin());
  }
  for (std::size_t i = 0; i < in.size(); ++i) {
    const T a = in[i];
    if (a == T{0}) continue;
    const T* w = W + i * dout;
    for (std::size_t j = 0; j < dout; ++j) out[j] += a * w[j];
  }
}

// Causal 1-D convolution for one output frame. taps[k] points at input frame
// t - (K-1) + k, or is null for left padding. W is [K x cin x cout].
template <typename T>
inline void conv_row(std::span<const T* const> taps, std::size_t cin,
                     const T* W, std::span<const T> b, std::span<T> out) {
  const std::size_t cout = out.size();
  std::copy(b.begin(), b.end(), out.begin());
  for (std::size_t k = 0; k < taps.size(); ++k) {
    const T* x = taps[k];
    if (x == nullptr) continue;
    const T* wk = W + k * cin * cout;
    for (std::size_t i = 0; i < cin; ++i) {
      const T a = x[i];
      if (a == T{0}) continue;
      const T* w = wk + i * cout;
      for (std::size_t j = 0; j < cout; ++j) out[j] += a * w[j];
    }
  }
}

// Gated recurrent cell with an update gate and a candidate:
//   z = sigmoid(x Wx[:, :H] + h Uh[:, :H] + b[:H])
//   c = tanh   (x Wx[:, H:] + h Uh[:, H:] + b[H:])
//   h' = (1 - z) h + z c
// pre is scratch of size 2H; gate and cand receive z and c for reuse.
template <typename T>
inline void gated_step(std::span<const T> x, std::span<const T> h,
                       const T* Wx, const T* Uh, std::span<const T> b,
                       std::span<T> pre, std::span<T> gate, std::span<T> cand,
                       std::span<T> h_next) {
  const std::size_t H = h.size();
  affine_row<T>(x, Wx, b, pre);
  for (std::size_t i = 0; i < H; ++i) {
    const T a = h[i];
    if (a == T{0}) continue;
    const T* u = Uh + i * 2 * H;
    for (std::size_t j = 0; j < 2 * H; ++j) pre[j] += a * u[j];
  }
  for (std::size_t j = 0; j < H; ++j) {
    gate[j] = sigmoid(pre[j]);
    cand[j] = std::tanh(pre[H + j]);
    h_next[j] = (T{1} - gate[j]) * h[j] + gate[j] * cand[j];
  }
}

// Attention output for one query over keys/values rows [lo, hi).
// keys and values are row-major with row width d; weights needs hi - lo slots.
template <typename T>
inline void attention_row(std::span<const T> q, const T* keys, const T* values,
                          std::size_t d, std::size_t lo, std::size_t hi,
                          T scale, std::span<T> weights, std::span<T> out) {
  T best = -std::numeric_limits<T>::infinity();
  for (std::size_t j = lo; j < hi; ++j) {
    const T* k = keys + j * d;
    T s = 0;
    for (std::size_t i = 0; i < d; ++i) s += q[i] * k[i];
    s *= scale;
    weights[j - lo] = s;
    best = std::max(best, s);
  }
  T total = 0;
  for (std::size_t j = lo; j < hi; ++j) {
    weights[j - lo] = std::exp(weights[j - lo] - best);
    total += weights[j - lo];
  }
  std::fill(out.begin(), out.end(), T{0});
  for (std::size_t j = lo; j < hi; ++j) {
    const T w = weights[j - lo] / total;
    weights[j - lo] = w;
    const T* v = values + j * d;
    for (std::size_t i = 0; i < d; ++i) out[i] += w * v[i];
  }
}

template <typename T>
inline void log_softmax_row(std::span<const T> in, std::span<T> out) {
  T best = -std::numeric_limits<T>::infinity();
  for (T v : in) best = std::max(best, v);
  T total = 0;
  for (T v : in) total += std::exp(v - best);
  const T log_z = best + std::log(total);
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] - log_z;
}

// Splits xbar into the masked part. Branching on the mask keeps the larger of
// the two channel values as the rounded product, so xbar - result is exact and
// result + (xbar - result) == xbar holds bit-for-bit.
template <typename T>
inline T masked_part(T xbar, T mask) {
  if (mask >= T{0.5}) return xbar * mask;
  return xbar - xbar * (T{1} - mask);
}

}  // namespace surt::kernels
