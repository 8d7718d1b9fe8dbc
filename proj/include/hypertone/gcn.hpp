#pragma once

// Gated convolutional generator: input 1x1 projection, a stack of dilated gated
// blocks with residual and skip paths, ReLU and a 1x1 output head. Each block owns
// exactly three conditionable convolutions (dilated, residual, skip).

#include <algorithm>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hypertone/conv.hpp"
#include "hypertone/random.hpp"
#include "hypertone/tensor.hpp"

namespace hypertone {

enum class CondMode { none, film, hypernet };

std::string to_string(CondMode m);
CondMode parse_cond_mode(const std::string& s);

struct GcnConfig {
  int num_blocks = 10;
  int channels = 16;
  int kernel_size = 3;
  /// Explicit per-block dilations; empty means 2^(i mod dilation_cycle).
  std::vector<int> dilations;
  int dilation_cycle = 10;
  int skip_channels = 16;
  CondMode cond_mode = CondMode::none;

  std::vector<int> resolved_dilations() const;
  /// Throws ContractError on inconsistent settings.
  void validate() const;
  std::size_t num_cond_layers() const { return 3 * static_cast<std::size_t>(num_blocks); }

  /// Architectural equality: dilations compare in resolved form.
  bool operator==(const GcnConfig& o) const {
    return num_blocks == o.num_blocks && channels == o.channels && kernel_size == o.kernel_size &&
           skip_channels == o.skip_channels && cond_mode == o.cond_mode && resolved_dilations() == o.resolved_dilations();
  }
};

/// 1 + sum over blocks of (kernel_size - 1) * dilation.
int receptive_field(const GcnConfig& cfg);

enum class LayerRole { dilated, residual, skip };
std::string to_string(LayerRole r);

struct LayerDescriptor {
  int block = 0;
  LayerRole role = LayerRole::dilated;
  Shape weight_shape;
  Shape bias_shape;
  std::string name;

  std::size_t out_channels() const { return weight_shape.at(0); }
  std::size_t weight_count() const { return shape_size(weight_shape); }
  std::size_t bias_count() const { return shape_size(bias_shape); }
};

/// Conditionable layers in block-major order, dilated -> residual -> skip within a block.
std::vector<LayerDescriptor> enumerate_cond_layers(const GcnConfig& cfg);

template <class T>
struct ConvLayer {
  ParamTensor<T> weight;  // [out, in, K]
  ParamTensor<T> bias;    // [out]
  std::size_t dilation = 1;

  ConvLayer() = default;
  ConvLayer(const std::string& name, std::size_t out, std::size_t in, std::size_t K, std::size_t d)
      : weight(name + ".W", {out, in, K}), bias(name + ".b", {out}), dilation(d) {}

  std::size_t out_channels() const { return weight.shape[0]; }
  std::size_t in_channels() const { return weight.shape[1]; }
  std::size_t kernel() const { return weight.shape[2]; }
  std::size_t pad() const { return dilation * (kernel() - 1); }

  void init(Rng& rng) {
    weight.kaiming_uniform(rng, in_channels() * kernel());
    std::fill(bias.values.begin(), bias.values.end(), T(0));
  }

  template <class U>
  ConvLayer<U> cast() const {
    ConvLayer<U> c;
    c.weight = weight.template cast<U>();
    c.bias = bias.template cast<U>();
    c.dilation = dilation;
    return c;
  }
};

template <class T>
struct GcnBlock {
  ConvLayer<T> dilated;   // channels -> 2*channels: filter rows first, then gate rows
  ConvLayer<T> residual;  // channels -> channels, 1x1
  ConvLayer<T> skip;      // channels -> skip_channels, 1x1

  ConvLayer<T>& layer(LayerRole r) {
    return r == LayerRole::dilated ? dilated : (r == LayerRole::residual ? residual : skip);
  }
  const ConvLayer<T>& layer(LayerRole r) const {
    return r == LayerRole::dilated ? dilated : (r == LayerRole::residual ? residual : skip);
  }
};

template <class T>
struct GcnParams {
  ConvLayer<T> input_proj;  // 1 -> channels
  std::vector<GcnBlock<T>> blocks;
  ConvLayer<T> output_head;  // skip_channels -> 1

  ConvLayer<T>& layer(const LayerDescriptor& d) { return blocks.at(d.block).layer(d.role); }
  const ConvLayer<T>& layer(const LayerDescriptor& d) const { return blocks.at(d.block).layer(d.role); }

  void collect(ParamRefs<T>& out) {
    auto add = [&](ConvLayer<T>& c) {
      out.push_back(&c.weight);
      out.push_back(&c.bias);
    };
    add(input_proj);
    for (auto& b : blocks) {
      add(b.dilated);
      add(b.residual);
      add(b.skip);
    }
    add(output_head);
  }

  void zero_grad() {
    ParamRefs<T> refs;
    collect(refs);
    for (auto* p : refs) p->zero_grad();
  }

  template <class U>
  GcnParams<U> cast() const {
    GcnParams<U> g;
    g.input_proj = input_proj.template cast<U>();
    for (const auto& b : blocks) g.blocks.push_back({b.dilated.template cast<U>(), b.residual.template cast<U>(),
                                                     b.skip.template cast<U>()});
    g.output_head = output_head.template cast<U>();
    return g;
  }
};

/// Allocates parameters with the shapes implied by `cfg` (all zero).
template <class T>
GcnParams<T> make_gcn_params(const GcnConfig& cfg) {
  cfg.validate();
  const auto C = static_cast<std::size_t>(cfg.channels);
  const auto S = static_cast<std::size_t>(cfg.skip_channels);
  const auto K = static_cast<std::size_t>(cfg.kernel_size);
  const auto dil = cfg.resolved_dilations();
  GcnParams<T> p;
  p.input_proj = ConvLayer<T>("input_proj", C, 1, 1, 1);
  for (int b = 0; b < cfg.num_blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    p.blocks.push_back({ConvLayer<T>(prefix + ".dilated", 2 * C, C, K, static_cast<std::size_t>(dil[b])),
                        ConvLayer<T>(prefix + ".residual", C, C, 1, 1), ConvLayer<T>(prefix + ".skip", S, C, 1, 1)});
  }
  p.output_head = ConvLayer<T>("output_head", 1, S, 1, 1);
  return p;
}

/// Per-block feature-wise affine modulation of the gated activation output.
template <class T>
struct FilmValues {
  std::vector<std::vector<T>> gamma;  // [block][channel]
  std::vector<std::vector<T>> beta;

  static FilmValues zeros(std::size_t blocks, std::size_t channels) {
    FilmValues f;
    f.gamma.assign(blocks, std::vector<T>(channels, T(0)));
    f.beta.assign(blocks, std::vector<T>(channels, T(0)));
    return f;
  }
};

/// Activations saved by the forward pass for backward.
template <class T>
struct GcnCache {
  std::size_t length = 0;
  std::vector<T> input;
  std::vector<PaddedRows<T>> block_input;   // r_in per block
  std::vector<std::vector<T>> tanh_part;    // [C*T]
  std::vector<std::vector<T>> sigmoid_part; // [C*T]
  std::vector<std::vector<T>> gated;        // h before FiLM [C*T]
  std::vector<std::vector<T>> modulated;    // h after FiLM (FiLM only) [C*T]
  std::vector<T> skip_sum;                  // [S*T], before ReLU
  std::vector<T> relu_skip;                 // [S*T]
};

namespace detail {

inline constexpr std::size_t kTimeTile = 1024;

/// Applies conv_rows tile by tile so working sets stay in cache.
template <class T>
void conv_padded(const ConvLayer<T>& L, const PaddedRows<T>& x, std::size_t n, T* y, std::size_t y_stride,
                 std::vector<const T*>& taps) {
  const std::size_t K = L.kernel();
  for (std::size_t t0 = 0; t0 < n; t0 += kTimeTile) {
    const std::size_t m = std::min(kTimeTile, n - t0);
    padded_taps(x, K, L.dilation, t0, taps);
    kernel::conv_rows(L.weight.data(), L.bias.data(), L.out_channels(), L.in_channels(), K, taps.data(), m, y + t0,
                      y_stride);
  }
}

/// 1x1 conv over plain rows (stride n).
template <class T>
void conv_pointwise(const ConvLayer<T>& L, const T* x, std::size_t n, T* y, std::vector<const T*>& taps) {
  const std::size_t in = L.in_channels();
  for (std::size_t t0 = 0; t0 < n; t0 += kTimeTile) {
    const std::size_t m = std::min(kTimeTile, n - t0);
    taps.resize(in);
    for (std::size_t i = 0; i < in; ++i) taps[i] = x + i * n + t0;
    kernel::conv_rows(L.weight.data(), L.bias.data(), L.out_channels(), in, 1, taps.data(), m, y + t0, n);
  }
}

template <class T>
void conv_pointwise_backward(ConvLayer<T>& L, const T* x, T* grad_x, std::size_t n, const T* g,
                             std::vector<const T*>& taps, std::vector<T*>& gtaps) {
  const std::size_t in = L.in_channels();
  for (std::size_t t0 = 0; t0 < n; t0 += kTimeTile) {
    const std::size_t m = std::min(kTimeTile, n - t0);
    taps.resize(in);
    gtaps.resize(in);
    for (std::size_t i = 0; i < in; ++i) {
      taps[i] = x + i * n + t0;
      gtaps[i] = grad_x == nullptr ? nullptr : grad_x + i * n + t0;
    }
    kernel::conv_rows_backward(L.weight.data(), L.out_channels(), in, 1, taps.data(),
                               grad_x == nullptr ? nullptr : gtaps.data(), m, g + t0, n, L.weight.grad.data(),
                               L.bias.grad.data());
  }
}

}  // namespace detail

/// Offline forward over a whole signal. With `cache` the activations are kept for
/// gcn_backward; without it only two rolling buffers are used. `film` may be null.
template <class T>
std::vector<T> gcn_forward_params(const GcnConfig& cfg, const GcnParams<T>& p, std::span<const T> x,
                                  const FilmValues<T>* film, GcnCache<T>* cache = nullptr) {
  const std::size_t n = x.size();
  const auto C = static_cast<std::size_t>(cfg.channels);
  const auto S = static_cast<std::size_t>(cfg.skip_channels);
  const std::size_t nb = p.blocks.size();
  if (n == 0) return {};
  if (film != nullptr && (film->gamma.size() != nb || film->beta.size() != nb))
    throw ContractError("gcn_forward: FiLM values do not match the block count");

  std::size_t max_pad = 0;
  for (const auto& b : p.blocks) max_pad = std::max(max_pad, b.dilated.pad());

  std::vector<const T*> taps;
  std::vector<T> z(2 * C * n), h(C * n), h_mod, tanh_v, sig_v, tmp(std::max(C, S) * n);
  std::vector<T> skip_sum(S * n, T(0));
  PaddedRows<T> ping, pong;

  if (cache != nullptr) {
    cache->length = n;
    cache->input.assign(x.begin(), x.end());
    cache->block_input.clear();
    cache->block_input.reserve(nb);
    cache->tanh_part.assign(nb, {});
    cache->sigmoid_part.assign(nb, {});
    cache->gated.assign(nb, {});
    cache->modulated.assign(film != nullptr ? nb : 0, {});
  } else {
    ping = PaddedRows<T>(C, n, max_pad);
    pong = PaddedRows<T>(C, n, max_pad);
  }

  auto next_rows = [&](std::size_t b) -> PaddedRows<T>& {
    if (cache != nullptr) {
      cache->block_input.emplace_back(C, n, p.blocks[b].dilated.pad());
      return cache->block_input.back();
    }
    return b % 2 == 0 ? ping : pong;
  };

  // Input projection (1 -> C) written directly into block 0's input rows.
  {
    PaddedRows<T>& r0 = next_rows(0);
    PaddedRows<T> xin(1, n, 0);
    std::copy(x.begin(), x.end(), xin.row(0));
    const std::size_t stride = r0.stride();
    detail::conv_padded(p.input_proj, xin, n, r0.row(0), stride, taps);
  }

  for (std::size_t b = 0; b < nb; ++b) {
    const GcnBlock<T>& blk = p.blocks[b];
    PaddedRows<T>& r_in = cache != nullptr ? cache->block_input[b] : (b % 2 == 0 ? ping : pong);

    detail::conv_padded(blk.dilated, r_in, n, z.data(), n, taps);

    T* a = nullptr;
    T* s = nullptr;
    if (cache != nullptr) {
      cache->tanh_part[b].resize(C * n);
      cache->sigmoid_part[b].resize(C * n);
      a = cache->tanh_part[b].data();
      s = cache->sigmoid_part[b].data();
    }
    kernel::gated_rows<T>(z.data(), z.data() + C * n, C * n, h.data(), a, s);

    const T* h_out = h.data();
    if (film != nullptr) {
      h_mod.resize(C * n);
      for (std::size_t c = 0; c < C; ++c) {
        const T g = film->gamma[b][c], be = film->beta[b][c];
        const T* src = h.data() + c * n;
        T* dst = h_mod.data() + c * n;
        for (std::size_t t = 0; t < n; ++t) dst[t] = g * src[t] + be;
      }
      h_out = h_mod.data();
    }
    if (cache != nullptr) {
      cache->gated[b] = h;
      if (film != nullptr) cache->modulated[b] = h_mod;
    }

    // Skip path.
    detail::conv_pointwise(blk.skip, h_out, n, tmp.data(), taps);
    for (std::size_t k = 0; k < S * n; ++k) skip_sum[k] += tmp[k];

    // Residual path feeds the next block.
    if (b + 1 < nb) {
      PaddedRows<T>& r_out = next_rows(b + 1);
      // next_rows may reallocate cache->block_input, so re-fetch r_in.
      const PaddedRows<T>& r_cur = cache != nullptr ? cache->block_input[b] : r_in;
      detail::conv_pointwise(blk.residual, h_out, n, tmp.data(), taps);
      for (std::size_t c = 0; c < C; ++c) {
        const T* src = r_cur.row(c);
        const T* add = tmp.data() + c * n;
        T* dst = r_out.row(c);
        for (std::size_t t = 0; t < n; ++t) dst[t] = src[t] + add[t];
      }
    }
  }

  std::vector<T> relu(S * n);
  for (std::size_t k = 0; k < S * n; ++k) relu[k] = skip_sum[k] > T(0) ? skip_sum[k] : T(0);
  std::vector<T> y(n);
  detail::conv_pointwise(p.output_head, relu.data(), n, y.data(), taps);

  if (cache != nullptr) {
    cache->skip_sum = std::move(skip_sum);
    cache->relu_skip = std::move(relu);
  }
  return y;
}

/// Backward through a cached forward. Accumulates parameter gradients into `p`,
/// FiLM gradients into `film_grad` (when FiLM was used) and dL/dx into `grad_x`
/// when non-null.
template <class T>
void gcn_backward(const GcnConfig& cfg, GcnParams<T>& p, const GcnCache<T>& cache, std::span<const T> grad_y,
                  const FilmValues<T>* film, FilmValues<T>* film_grad, std::vector<T>* grad_x = nullptr) {
  const std::size_t n = cache.length;
  const auto C = static_cast<std::size_t>(cfg.channels);
  const auto S = static_cast<std::size_t>(cfg.skip_channels);
  const std::size_t nb = p.blocks.size();
  if (grad_y.size() != n) throw ContractError("gcn_backward: gradient length mismatch");
  if (film != nullptr && film_grad == nullptr) throw ContractError("gcn_backward: FiLM gradient sink missing");

  std::vector<const T*> taps;
  std::vector<T*> gtaps;

  // Output head and ReLU.
  std::vector<T> g_skip(S * n, T(0));
  {
    std::vector<T> gy(grad_y.begin(), grad_y.end());
    detail::conv_pointwise_backward(p.output_head, cache.relu_skip.data(), g_skip.data(), n, gy.data(), taps, gtaps);
    for (std::size_t k = 0; k < S * n; ++k)
      if (!(cache.skip_sum[k] > T(0))) g_skip[k] = T(0);
  }

  std::vector<T> g_r(C * n, T(0));  // dL/d r_out of the current block
  std::vector<T> g_h(C * n), g_z(2 * C * n);

  for (std::size_t bi = nb; bi-- > 0;) {
    GcnBlock<T>& blk = p.blocks[bi];
    const T* h_out = film != nullptr ? cache.modulated[bi].data() : cache.gated[bi].data();

    std::fill(g_h.begin(), g_h.end(), T(0));
    detail::conv_pointwise_backward(blk.skip, h_out, g_h.data(), n, g_skip.data(), taps, gtaps);
    if (bi + 1 < nb) detail::conv_pointwise_backward(blk.residual, h_out, g_h.data(), n, g_r.data(), taps, gtaps);

    if (film != nullptr) {
      const T* h_pre = cache.gated[bi].data();
      for (std::size_t c = 0; c < C; ++c) {
        T* gr = g_h.data() + c * n;
        const T* hr = h_pre + c * n;
        T gg = 0, gb = 0;
        for (std::size_t t = 0; t < n; ++t) {
          gg += gr[t] * hr[t];
          gb += gr[t];
        }
        film_grad->gamma[bi][c] += gg;
        film_grad->beta[bi][c] += gb;
        const T gamma = film->gamma[bi][c];
        for (std::size_t t = 0; t < n; ++t) gr[t] *= gamma;
      }
    }

    kernel::gated_rows_backward<T>(cache.tanh_part[bi].data(), cache.sigmoid_part[bi].data(), g_h.data(), C * n,
                                   g_z.data(), g_z.data() + C * n);

    // Dilated conv: dL/d r_in = dL/d r_out (identity residual) + conv^T(dL/dz).
    const PaddedRows<T>& r_in = cache.block_input[bi];
    PaddedRows<T> g_in(C, n, r_in.pad);
    for (std::size_t c = 0; c < C; ++c) std::copy_n(g_r.data() + c * n, n, g_in.row(c));
    const std::size_t K = blk.dilated.kernel();
    for (std::size_t t0 = 0; t0 < n; t0 += detail::kTimeTile) {
      const std::size_t m = std::min(detail::kTimeTile, n - t0);
      padded_taps(r_in, K, blk.dilated.dilation, t0, taps);
      padded_taps(g_in, K, blk.dilated.dilation, t0, gtaps);
      kernel::conv_rows_backward(blk.dilated.weight.data(), 2 * C, C, K, taps.data(), gtaps.data(), m,
                                 g_z.data() + t0, n, blk.dilated.weight.grad.data(), blk.dilated.bias.grad.data());
    }
    for (std::size_t c = 0; c < C; ++c) std::copy_n(g_in.row(c), n, g_r.data() + c * n);
  }

  // Input projection.
  std::vector<T> gx(n, T(0));
  detail::conv_pointwise_backward(p.input_proj, cache.input.data(), grad_x != nullptr ? gx.data() : nullptr, n,
                                  g_r.data(), taps, gtaps);
  if (grad_x != nullptr) *grad_x = std::move(gx);
}

/// The generator: configuration plus base weights.
template <class T>
struct GcnModel {
  GcnConfig config;
  GcnParams<T> params;

  static GcnModel create(const GcnConfig& cfg, Rng& rng) {
    GcnModel m{cfg, make_gcn_params<T>(cfg)};
    m.params.input_proj.init(rng);
    for (auto& b : m.params.blocks) {
      b.dilated.init(rng);
      b.residual.init(rng);
      b.skip.init(rng);
    }
    m.params.output_head.init(rng);
    return m;
  }

  /// Unconditioned forward.
  std::vector<T> forward(std::span<const T> x) const { return gcn_forward_params<T>(config, params, x, nullptr); }

  template <class U>
  GcnModel<U> cast() const {
    return GcnModel<U>{config, params.template cast<U>()};
  }
};

}  // namespace hypertone
