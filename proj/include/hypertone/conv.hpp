#pragma once

// Dilated causal 1-D convolution and the gated activation unit.
//
// Tensors are channel-major: x[c, t] is x.values[c * T + t]. A weight W[c, i, j]
// with kernel size K and dilation d reads x[i, t - d * (K - 1 - j)], with x taken as
// zero before t = 0.
//
// The row kernels below take one pointer per (input channel, tap). The offline
// path points them into a left-padded copy of the signal and the streaming path
// points them at samples gathered from history rings; both then run the same
// floating-point operations in the same order, so the two paths agree exactly.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "hypertone/tensor.hpp"

namespace hypertone {

namespace kernel {

inline constexpr std::size_t kTile = 32;

namespace detail {

// R output rows over one time tile. Each output sample accumulates bias, then the
// taps in order, whatever the tiling; only the tile width differs between calls.
template <class T, std::size_t R, bool Full>
inline void conv_tile(const T* __restrict W, const T* __restrict b, std::size_t c, std::size_t fan,
                      const T* const* taps, std::size_t t0, std::size_t nb, T* __restrict y, std::size_t y_stride) {
  const std::size_t len = Full ? kTile : nb;
  T acc[R][kTile];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t t = 0; t < len; ++t) acc[r][t] = b[c + r];
  for (std::size_t k = 0; k < fan; ++k) {
    const T* __restrict xr = taps[k] + t0;
    T w[R];
    for (std::size_t r = 0; r < R; ++r) w[r] = W[(c + r) * fan + k];
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t t = 0; t < len; ++t) acc[r][t] += w[r] * xr[t];
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t t = 0; t < len; ++t) y[(c + r) * y_stride + t0 + t] = acc[r][t];
}

template <class T, std::size_t R>
inline void conv_tile_any(const T* W, const T* b, std::size_t c, std::size_t fan, const T* const* taps,
                          std::size_t t0, std::size_t nb, T* y, std::size_t y_stride) {
  if (nb == kTile)
    conv_tile<T, R, true>(W, b, c, fan, taps, t0, nb, y, y_stride);
  else
    conv_tile<T, R, false>(W, b, c, fan, taps, t0, nb, y, y_stride);
}

// Lane-split dot product so the reduction vectorises without reassociation flags.
template <class T>
inline T dot(const T* __restrict a, const T* __restrict x, std::size_t n) {
  constexpr std::size_t L = 16;
  T part[L] = {};
  std::size_t t = 0;
  for (; t + L <= n; t += L)
    for (std::size_t l = 0; l < L; ++l) part[l] += a[t + l] * x[t + l];
  T tail = 0;
  for (; t < n; ++t) tail += a[t] * x[t];
  T s = 0;
  for (std::size_t l = 0; l < L; ++l) s += part[l];
  return s + tail;
}

template <class T>
inline T sum(const T* __restrict a, std::size_t n) {
  constexpr std::size_t L = 16;
  T part[L] = {};
  std::size_t t = 0;
  for (; t + L <= n; t += L)
    for (std::size_t l = 0; l < L; ++l) part[l] += a[t + l];
  T tail = 0;
  for (; t < n; ++t) tail += a[t];
  T s = 0;
  for (std::size_t l = 0; l < L; ++l) s += part[l];
  return s + tail;
}

template <class T, bool Full>
inline void transpose_tile(const T* __restrict W, std::size_t c_out, std::size_t fan, std::size_t k,
                           const T* __restrict g, std::size_t g_stride, std::size_t t0, std::size_t nb, T* gx) {
  const std::size_t len = Full ? kTile : nb;
  T acc[kTile];
  for (std::size_t t = 0; t < len; ++t) acc[t] = gx[t0 + t];
  for (std::size_t c = 0; c < c_out; ++c) {
    const T w = W[c * fan + k];
    const T* __restrict gr = g + c * g_stride + t0;
    for (std::size_t t = 0; t < len; ++t) acc[t] += w * gr[t];
  }
  for (std::size_t t = 0; t < len; ++t) gx[t0 + t] = acc[t];
}

}  // namespace detail

/// y[c, t] = b[c] + sum_{i,j} W[c,i,j] * taps[i*K + j][t], for t in [0, n).
template <class T>
inline void conv_rows(const T* __restrict W, const T* __restrict b, std::size_t c_out, std::size_t c_in,
                      std::size_t K, const T* const* taps, std::size_t n, T* __restrict y,
                      std::size_t y_stride) {
  const std::size_t fan = c_in * K;
  for (std::size_t t0 = 0; t0 < n; t0 += kTile) {
    const std::size_t nb = std::min(kTile, n - t0);
    std::size_t c = 0;
    for (; c + 4 <= c_out; c += 4) detail::conv_tile_any<T, 4>(W, b, c, fan, taps, t0, nb, y, y_stride);
    for (; c < c_out; ++c) detail::conv_tile_any<T, 1>(W, b, c, fan, taps, t0, nb, y, y_stride);
  }
}

/// Backward of conv_rows. Accumulates into grad_W, grad_b and, when grad_taps is
/// non-null, into the rows it points at (which may overlap one another).
template <class T>
inline void conv_rows_backward(const T* __restrict W, std::size_t c_out, std::size_t c_in, std::size_t K,
                               const T* const* taps, T* const* grad_taps, std::size_t n,
                               const T* __restrict g, std::size_t g_stride, T* __restrict grad_W,
                               T* __restrict grad_b) {
  const std::size_t fan = c_in * K;
  for (std::size_t c = 0; c < c_out; ++c) {
    const T* gr = g + c * g_stride;
    grad_b[c] += detail::sum(gr, n);
    for (std::size_t k = 0; k < fan; ++k) grad_W[c * fan + k] += detail::dot(gr, taps[k], n);
  }
  if (grad_taps == nullptr) return;
  for (std::size_t k = 0; k < fan; ++k) {
    T* gx = grad_taps[k];
    for (std::size_t t0 = 0; t0 < n; t0 += kTile) {
      const std::size_t nb = std::min(kTile, n - t0);
      if (nb == kTile)
        detail::transpose_tile<T, true>(W, c_out, fan, k, g, g_stride, t0, nb, gx);
      else
        detail::transpose_tile<T, false>(W, c_out, fan, k, g, g_stride, t0, nb, gx);
    }
  }
}

/// Rational tanh approximation; accurate to a few float ulps and vectorisable.
inline float tanh_approx(float x) {
  constexpr float kClamp = 7.90531110763549805f;
  constexpr float a1 = 4.89352455891786e-03f, a3 = 6.37261928875436e-04f, a5 = 1.48572235717979e-05f,
                  a7 = 5.12229709037114e-08f, a9 = -8.60467152213735e-11f, a11 = 2.00018790482477e-13f,
                  a13 = -2.76076847742355e-16f;
  constexpr float b0 = 4.89352518554385e-03f, b2 = 2.26843463243900e-03f, b4 = 1.18534705686654e-04f,
                  b6 = 1.19825839466702e-06f;
  const float xc = x > kClamp ? kClamp : (x < -kClamp ? -kClamp : x);
  const float x2 = xc * xc;
  float p = x2 * a13 + a11;
  p = x2 * p + a9;
  p = x2 * p + a7;
  p = x2 * p + a5;
  p = x2 * p + a3;
  p = x2 * p + a1;
  p = xc * p;
  float q = x2 * b6 + b4;
  q = x2 * q + b2;
  q = x2 * q + b0;
  const float r = p / q;
  return std::abs(x) < 0.0004f ? x : r;
}

inline float tanh_fn(float x) { return tanh_approx(x); }
inline double tanh_fn(double x) { return std::tanh(x); }
inline float sigmoid_fn(float x) { return 0.5f + 0.5f * tanh_approx(0.5f * x); }
inline double sigmoid_fn(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// h = tanh(f) * sigmoid(g); saves the two factors for the backward pass when asked.
template <class T>
inline void gated_rows(const T* __restrict f, const T* __restrict g, std::size_t n, T* __restrict h,
                       T* __restrict tanh_out, T* __restrict sig_out) {
  for (std::size_t t = 0; t < n; ++t) {
    const T a = tanh_fn(f[t]);
    const T s = sigmoid_fn(g[t]);
    h[t] = a * s;
    if (tanh_out != nullptr) tanh_out[t] = a;
    if (sig_out != nullptr) sig_out[t] = s;
  }
}

template <class T>
inline void gated_rows_backward(const T* __restrict tanh_v, const T* __restrict sig_v,
                                const T* __restrict grad_h, std::size_t n, T* __restrict grad_f,
                                T* __restrict grad_g) {
  for (std::size_t t = 0; t < n; ++t) {
    const T a = tanh_v[t], s = sig_v[t], gh = grad_h[t];
    grad_f[t] = gh * s * (T(1) - a * a);
    grad_g[t] = gh * a * s * (T(1) - s);
  }
}

}  // namespace kernel

/// Channel rows with `pad` zero samples in front of each, so that causal taps can
/// be addressed with plain pointer offsets.
template <class T>
struct PaddedRows {
  std::size_t channels = 0;
  std::size_t length = 0;
  std::size_t pad = 0;
  std::vector<T> storage;

  PaddedRows() = default;
  PaddedRows(std::size_t c, std::size_t n, std::size_t p)
      : channels(c), length(n), pad(p), storage(c * (n + p), T(0)) {}

  std::size_t stride() const { return length + pad; }
  T* row(std::size_t c) { return storage.data() + c * stride() + pad; }
  const T* row(std::size_t c) const { return storage.data() + c * stride() + pad; }
};

/// Tap pointers for conv_rows over a padded signal, starting `t0` samples in.
template <class T>
void padded_taps(const PaddedRows<T>& x, std::size_t K, std::size_t dilation, std::size_t t0,
                 std::vector<const T*>& taps) {
  taps.resize(x.channels * K);
  for (std::size_t i = 0; i < x.channels; ++i)
    for (std::size_t j = 0; j < K; ++j)
      taps[i * K + j] = x.row(i) + t0 - dilation * (K - 1 - j);
}

template <class T>
void padded_taps(PaddedRows<T>& x, std::size_t K, std::size_t dilation, std::size_t t0,
                 std::vector<T*>& taps) {
  taps.resize(x.channels * K);
  for (std::size_t i = 0; i < x.channels; ++i)
    for (std::size_t j = 0; j < K; ++j)
      taps[i * K + j] = x.row(i) + t0 - dilation * (K - 1 - j);
}

template <class T>
struct ConvGrads {
  Tensor<T> grad_x;
  Tensor<T> grad_W;
  Tensor<T> grad_b;
};

namespace detail {

template <class T>
void check_conv_shapes(const Tensor<T>& x, const Tensor<T>& W, std::size_t dilation) {
  if (x.shape.size() != 2 || W.shape.size() != 3) throw ContractError("conv: x must be [C_in, T], W [C_out, C_in, K]");
  if (W.dim(1) != x.dim(0)) throw ContractError("conv: W input channels " + std::to_string(W.dim(1)) +
                                                " != x channels " + std::to_string(x.dim(0)));
  if (W.dim(2) < 1) throw ContractError("conv: kernel size must be >= 1");
  if (x.dim(1) < 1) throw ContractError("conv: T must be >= 1");
  if (dilation < 1) throw ContractError("conv: dilation must be >= 1");
}

template <class T>
PaddedRows<T> pad_input(const Tensor<T>& x, std::size_t pad) {
  PaddedRows<T> p(x.dim(0), x.dim(1), pad);
  for (std::size_t i = 0; i < x.dim(0); ++i)
    std::copy_n(x.data() + i * x.dim(1), x.dim(1), p.row(i));
  return p;
}

}  // namespace detail

/// y[c,t] = b[c] + sum_{i,j} W[c,i,j] * x[i, t - d*(K-1-j)], zero-padded on the left.
template <class T>
Tensor<T> dilated_causal_conv(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b, std::size_t dilation) {
  detail::check_conv_shapes(x, W, dilation);
  if (b.size() != W.dim(0)) throw ContractError("conv: bias length must equal output channels");
  const std::size_t K = W.dim(2), T_len = x.dim(1);
  const auto padded = detail::pad_input(x, dilation * (K - 1));
  std::vector<const T*> taps;
  padded_taps(padded, K, dilation, 0, taps);
  Tensor<T> y({W.dim(0), T_len});
  kernel::conv_rows(W.data(), b.data(), W.dim(0), W.dim(1), K, taps.data(), T_len, y.data(), T_len);
  return y;
}

/// Exact gradients of dilated_causal_conv given dL/dy.
template <class T>
ConvGrads<T> conv_backward(const Tensor<T>& x, const Tensor<T>& W, std::size_t dilation, const Tensor<T>& upstream) {
  detail::check_conv_shapes(x, W, dilation);
  if (upstream.shape != Shape{W.dim(0), x.dim(1)}) throw ContractError("conv_backward: upstream shape mismatch");
  const std::size_t K = W.dim(2), T_len = x.dim(1), pad = dilation * (K - 1);
  const auto padded = detail::pad_input(x, pad);
  PaddedRows<T> gx(x.dim(0), T_len, pad);
  std::vector<const T*> taps;
  std::vector<T*> gtaps;
  padded_taps(padded, K, dilation, 0, taps);
  padded_taps(gx, K, dilation, 0, gtaps);
  ConvGrads<T> out{Tensor<T>(x.shape), Tensor<T>(W.shape), Tensor<T>({W.dim(0)})};
  kernel::conv_rows_backward(W.data(), W.dim(0), W.dim(1), K, taps.data(), gtaps.data(), T_len, upstream.data(),
                             T_len, out.grad_W.data(), out.grad_b.data());
  for (std::size_t i = 0; i < x.dim(0); ++i) std::copy_n(gx.row(i), T_len, out.grad_x.data() + i * T_len);
  return out;
}

/// tanh(pre_filter) * sigmoid(pre_gate), elementwise.
template <class T>
Tensor<T> gated_activation(const Tensor<T>& pre_filter, const Tensor<T>& pre_gate) {
  if (pre_filter.shape != pre_gate.shape) throw ContractError("gated_activation: shape mismatch");
  Tensor<T> h(pre_filter.shape);
  kernel::gated_rows<T>(pre_filter.data(), pre_gate.data(), h.size(), h.data(), nullptr, nullptr);
  return h;
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> gated_activation_backward(const Tensor<T>& pre_filter, const Tensor<T>& pre_gate,
                                                          const Tensor<T>& grad_h) {
  if (pre_filter.shape != pre_gate.shape || pre_filter.shape != grad_h.shape)
    throw ContractError("gated_activation_backward: shape mismatch");
  const std::size_t n = pre_filter.size();
  std::vector<T> a(n), s(n), h(n);
  kernel::gated_rows<T>(pre_filter.data(), pre_gate.data(), n, h.data(), a.data(), s.data());
  Tensor<T> gf(pre_filter.shape), gg(pre_filter.shape);
  kernel::gated_rows_backward<T>(a.data(), s.data(), grad_h.data(), n, gf.data(), gg.data());
  return {std::move(gf), std::move(gg)};
}

}  // namespace hypertone
