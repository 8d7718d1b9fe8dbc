#pragma once

// Tone conditioning for the generator.
//
// Hypernetwork: one small MLP per conditionable conv emits (dW, db) from the tone
// embedding, and the layer runs with W * (1 + dW), b * (1 + db). The MLP output layer
// starts at zero, so an untrained hypernetwork leaves the generator untouched.
//
// FiLM: one affine map per block emits (gamma, beta) applied to the gated
// activation output, h' = gamma * h + beta, starting at gamma = 1, beta = 0.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hypertone/dense.hpp"
#include "hypertone/gcn.hpp"

namespace hypertone {

inline constexpr std::size_t kDefaultEmbeddingDim = 64;
inline constexpr std::size_t kDefaultHyperHidden = 32;

/// Unit-norm tone vector.
struct ToneEmbedding {
  std::vector<float> vector;
  std::string source_id;

  /// L2-normalises `raw`; throws NumericError for zero or non-finite input.
  static ToneEmbedding from_raw(std::span<const float> raw, std::string source = {});

  std::size_t dim() const { return vector.size(); }
  /// FNV-1a over the float bytes.
  std::uint64_t fingerprint() const;
  double cosine(const ToneEmbedding& other) const;
};

enum class DeltaGranularity { per_channel, full };
std::string to_string(DeltaGranularity g);
DeltaGranularity parse_granularity(const std::string& s);

template <class T>
struct Deltas {
  std::vector<T> weight;  // out_channels (per_channel) or |W| (full)
  std::vector<T> bias;    // out_channels
};

/// W' = W * (1 + dW), b' = b * (1 + db). dW is either one value per output channel
/// (broadcast over input and kernel) or one per weight. Throws NumericError on a
/// non-finite delta and ContractError on incompatible sizes.
template <class T>
void modulate_weights(std::span<const T> W, std::span<const T> b, std::size_t out_channels, std::span<const T> dW,
                      std::span<const T> db, std::span<T> W_out, std::span<T> b_out) {
  if (W.size() % out_channels != 0 || b.size() != out_channels || W_out.size() != W.size() ||
      b_out.size() != b.size())
    throw ContractError("modulate_weights: inconsistent layer shapes");
  if (dW.size() != W.size() && dW.size() != out_channels)
    throw ContractError("modulate_weights: weight deltas must be per-channel or full");
  if (db.size() != out_channels) throw ContractError("modulate_weights: bias deltas must be per-channel");
  for (T v : dW)
    if (!std::isfinite(v)) throw NumericError("modulate_weights: non-finite weight delta");
  for (T v : db)
    if (!std::isfinite(v)) throw NumericError("modulate_weights: non-finite bias delta");
  const std::size_t per = W.size() / out_channels;
  const bool full = dW.size() == W.size();
  for (std::size_t c = 0; c < out_channels; ++c) {
    for (std::size_t k = 0; k < per; ++k) {
      const std::size_t idx = c * per + k;
      W_out[idx] = W[idx] * (T(1) + (full ? dW[idx] : dW[c]));
    }
    b_out[c] = b[c] * (T(1) + db[c]);
  }
}

template <class T>
Tensor<T> modulate_weights(const Tensor<T>& W, std::span<const T> dW) {
  Tensor<T> out(W.shape);
  const std::size_t oc = W.shape.empty() ? 1 : W.shape[0];
  std::vector<T> zb(oc, T(0)), bo(oc);
  modulate_weights<T>(W.values, zb, oc, dW, zb, out.values, bo);
  return out;
}

/// Generates deltas for one conditioned layer: d_e -> hidden (tanh) -> deltas.
template <class T>
struct HyperLayer {
  LayerDescriptor target;
  DeltaGranularity granularity = DeltaGranularity::per_channel;
  Dense<T> hidden;
  Dense<T> output;

  std::size_t weight_delta_count() const {
    return granularity == DeltaGranularity::full ? target.weight_count() : target.out_channels();
  }
  std::size_t output_count() const { return weight_delta_count() + target.bias_count(); }

  /// Forward pass; `hidden_out` receives the tanh activations when non-null.
  Deltas<T> deltas(std::span<const T> phi, std::vector<T>* hidden_out = nullptr) const {
    std::vector<T> hid(hidden.out_dim());
    hidden.forward(phi, hid);
    for (T& v : hid) v = std::tanh(v);
    std::vector<T> out(output.out_dim());
    output.forward(hid, out);
    Deltas<T> d;
    const std::size_t nw = weight_delta_count();
    d.weight.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(nw));
    d.bias.assign(out.begin() + static_cast<std::ptrdiff_t>(nw), out.end());
    if (hidden_out != nullptr) *hidden_out = std::move(hid);
    return d;
  }

  /// Accumulates parameter gradients given dL/d(deltas).
  void backward(std::span<const T> phi, const std::vector<T>& hid, const Deltas<T>& grad) {
    std::vector<T> g_out;
    g_out.reserve(output_count());
    g_out.insert(g_out.end(), grad.weight.begin(), grad.weight.end());
    g_out.insert(g_out.end(), grad.bias.begin(), grad.bias.end());
    std::vector<T> g_hid(hid.size());
    output.backward(hid, g_out, g_hid);
    for (std::size_t k = 0; k < hid.size(); ++k) g_hid[k] *= T(1) - hid[k] * hid[k];
    hidden.backward(phi, g_hid, {});
  }
};

template <class T>
struct HyperNetwork {
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  std::size_t hidden_dim = kDefaultHyperHidden;
  DeltaGranularity granularity = DeltaGranularity::per_channel;
  std::vector<HyperLayer<T>> layers;

  /// One hyper layer per conditionable conv; output layers start at zero.
  static HyperNetwork create(const GcnConfig& cfg, std::size_t d_e, std::size_t hidden, DeltaGranularity g,
                             Rng& rng) {
    HyperNetwork h{d_e, hidden, g, {}};
    for (const auto& desc : enumerate_cond_layers(cfg)) {
      HyperLayer<T> L;
      L.target = desc;
      L.granularity = g;
      L.hidden = Dense<T>("hyper." + desc.name + ".hidden", d_e, hidden);
      L.output = Dense<T>("hyper." + desc.name + ".output", hidden, L.output_count());
      L.hidden.weight.kaiming_uniform(rng, d_e);
      h.layers.push_back(std::move(L));
    }
    return h;
  }

  Deltas<T> deltas(std::span<const T> phi, std::size_t layer_index) const {
    if (layer_index >= layers.size()) throw ContractError("hyper_deltas: layer index out of range");
    if (phi.size() != embedding_dim)
      throw ContractError("hyper_deltas: embedding has dimension " + std::to_string(phi.size()) + ", expected " +
                          std::to_string(embedding_dim));
    return layers[layer_index].deltas(phi);
  }

  void collect(ParamRefs<T>& out) {
    for (auto& L : layers) {
      L.hidden.collect(out);
      L.output.collect(out);
    }
  }

  template <class U>
  HyperNetwork<U> cast() const {
    HyperNetwork<U> h{embedding_dim, hidden_dim, granularity, {}};
    for (const auto& L : layers) h.layers.push_back({L.target, L.granularity, L.hidden.template cast<U>(),
                                                     L.output.template cast<U>()});
    return h;
  }
};

/// Per-block (gamma, beta) generator for FiLM conditioning.
template <class T>
struct FilmGenerator {
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  std::size_t channels = 0;
  std::vector<Dense<T>> maps;  // per block: d_e -> 2*channels (gamma rows first)

  static FilmGenerator create(const GcnConfig& cfg, std::size_t d_e) {
    FilmGenerator f{d_e, static_cast<std::size_t>(cfg.channels), {}};
    for (int b = 0; b < cfg.num_blocks; ++b) {
      Dense<T> m("film.block" + std::to_string(b), d_e, 2 * f.channels);
      for (std::size_t c = 0; c < f.channels; ++c) m.bias.values[c] = T(1);
      f.maps.push_back(std::move(m));
    }
    return f;
  }

  std::pair<std::vector<T>, std::vector<T>> params(std::span<const T> phi, std::size_t block) const {
    if (block >= maps.size()) throw ContractError("film_params: block index out of range");
    if (phi.size() != embedding_dim) throw ContractError("film_params: embedding dimension mismatch");
    std::vector<T> out(2 * channels);
    maps[block].forward(phi, out);
    return {std::vector<T>(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(channels)),
            std::vector<T>(out.begin() + static_cast<std::ptrdiff_t>(channels), out.end())};
  }

  FilmValues<T> values(std::span<const T> phi) const {
    FilmValues<T> v;
    for (std::size_t b = 0; b < maps.size(); ++b) {
      auto [g, be] = params(phi, b);
      v.gamma.push_back(std::move(g));
      v.beta.push_back(std::move(be));
    }
    return v;
  }

  void backward(std::span<const T> phi, const FilmValues<T>& grad) {
    for (std::size_t b = 0; b < maps.size(); ++b) {
      std::vector<T> g(grad.gamma[b]);
      g.insert(g.end(), grad.beta[b].begin(), grad.beta[b].end());
      maps[b].backward(phi, g, {});
    }
  }

  void collect(ParamRefs<T>& out) {
    for (auto& m : maps) m.collect(out);
  }

  template <class U>
  FilmGenerator<U> cast() const {
    FilmGenerator<U> f{embedding_dim, channels, {}};
    for (const auto& m : maps) f.maps.push_back(m.template cast<U>());
    return f;
  }
};

/// h' = gamma * h + beta per channel, broadcast over time. h is [C, T].
template <class T>
Tensor<T> apply_film(const Tensor<T>& h, std::span<const T> gamma, std::span<const T> beta) {
  if (h.shape.size() != 2 || gamma.size() != h.dim(0) || beta.size() != h.dim(0))
    throw ContractError("apply_film: shape mismatch");
  Tensor<T> out(h.shape);
  const std::size_t n = h.dim(1);
  for (std::size_t c = 0; c < h.dim(0); ++c)
    for (std::size_t t = 0; t < n; ++t) out.values[c * n + t] = gamma[c] * h.values[c * n + t] + beta[c];
  return out;
}

/// Per-render weights: the full generator parameter set with conditioning folded in.
template <class T>
struct BakedWeightsT {
  GcnConfig config;
  GcnParams<T> params;
  std::optional<FilmValues<T>> film;
  std::uint64_t embedding_fingerprint = 0;
};
using BakedWeights = BakedWeightsT<float>;

/// Generator plus its conditioning network (exactly one of hyper/film for the
/// corresponding cond_mode).
template <class T>
struct ConditionedGenerator {
  GcnModel<T> gcn;
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  std::optional<HyperNetwork<T>> hyper;
  std::optional<FilmGenerator<T>> film;

  CondMode mode() const { return gcn.config.cond_mode; }

  static ConditionedGenerator create(const GcnConfig& cfg, Rng& rng, std::size_t d_e = kDefaultEmbeddingDim,
                                     DeltaGranularity gran = DeltaGranularity::per_channel,
                                     std::size_t hyper_hidden = kDefaultHyperHidden) {
    ConditionedGenerator g{GcnModel<T>::create(cfg, rng), d_e, std::nullopt, std::nullopt};
    if (cfg.cond_mode == CondMode::hypernet) g.hyper = HyperNetwork<T>::create(cfg, d_e, hyper_hidden, gran, rng);
    if (cfg.cond_mode == CondMode::film) g.film = FilmGenerator<T>::create(cfg, d_e);
    return g;
  }

  void check_condition(const std::span<const T>* phi) const {
    if (mode() == CondMode::none) {
      if (phi != nullptr) throw ContractError("generator: unconditioned model given an embedding");
      return;
    }
    if (phi == nullptr) throw ContractError("generator: conditioned model requires an embedding");
    if (phi->size() != embedding_dim)
      throw ContractError("generator: embedding dimension " + std::to_string(phi->size()) + " != " +
                          std::to_string(embedding_dim));
  }

  /// Copies the base params with hypernetwork deltas applied to the conditioned
  /// layers. Gradients of the copy are zero. `hidden` keeps per-layer activations.
  GcnParams<T> modulated_params(std::span<const T> phi, std::vector<Deltas<T>>* deltas_out = nullptr,
                                std::vector<std::vector<T>>* hidden_out = nullptr) const {
    GcnParams<T> out = gcn.params;
    const auto& H = *hyper;
    if (deltas_out) deltas_out->assign(H.layers.size(), {});
    if (hidden_out) hidden_out->assign(H.layers.size(), {});
    for (std::size_t l = 0; l < H.layers.size(); ++l) {
      const auto& HL = H.layers[l];
      std::vector<T> hid;
      Deltas<T> d = HL.deltas(phi, &hid);
      const ConvLayer<T>& base = gcn.params.layer(HL.target);
      ConvLayer<T>& dst = out.layer(HL.target);
      modulate_weights<T>(base.weight.values, base.bias.values, base.out_channels(), d.weight, d.bias,
                          dst.weight.values, dst.bias.values);
      if (deltas_out) (*deltas_out)[l] = std::move(d);
      if (hidden_out) (*hidden_out)[l] = std::move(hid);
    }
    out.zero_grad();
    return out;
  }

  BakedWeightsT<T> bake(std::span<const T> phi, std::uint64_t fingerprint = 0) const {
    check_condition(&phi);
    BakedWeightsT<T> b{gcn.config, {}, std::nullopt, fingerprint};
    if (mode() == CondMode::hypernet) {
      b.params = modulated_params(phi);
    } else {
      b.params = gcn.params;
      b.params.zero_grad();
      if (mode() == CondMode::film) b.film = film->values(phi);
    }
    return b;
  }

  BakedWeightsT<T> bake_unconditioned() const {
    if (mode() != CondMode::none) throw ContractError("bake: conditioned model requires an embedding");
    BakedWeightsT<T> b{gcn.config, gcn.params, std::nullopt, 0};
    b.params.zero_grad();
    return b;
  }

  /// Offline forward. `phi` must be present exactly when the model is conditioned.
  std::vector<T> forward(std::span<const T> x, const std::span<const T>* phi) const {
    check_condition(phi);
    switch (mode()) {
      case CondMode::none: return gcn_forward_params<T>(gcn.config, gcn.params, x, nullptr);
      case CondMode::film: {
        const auto fv = film->values(*phi);
        return gcn_forward_params<T>(gcn.config, gcn.params, x, &fv);
      }
      case CondMode::hypernet: {
        const auto p = modulated_params(*phi);
        return gcn_forward_params<T>(gcn.config, p, x, nullptr);
      }
    }
    return {};
  }

  std::vector<T> forward(std::span<const T> x) const { return forward(x, nullptr); }
  std::vector<T> forward(std::span<const T> x, std::span<const T> phi) const { return forward(x, &phi); }

  /// Trainable parameters: generator base weights plus the conditioning network.
  ParamRefs<T> trainable() {
    ParamRefs<T> refs;
    gcn.params.collect(refs);
    if (hyper) hyper->collect(refs);
    if (film) film->collect(refs);
    return refs;
  }

  template <class U>
  ConditionedGenerator<U> cast() const {
    ConditionedGenerator<U> g{gcn.template cast<U>(), embedding_dim, std::nullopt, std::nullopt};
    if (hyper) g.hyper = hyper->template cast<U>();
    if (film) g.film = film->template cast<U>();
    return g;
  }
};

/// State of one training forward pass, needed for its backward.
template <class T>
struct TrainPass {
  std::vector<T> phi;
  GcnParams<T> effective;  // hypernet: modulated copy; otherwise unused
  std::vector<Deltas<T>> deltas;
  std::vector<std::vector<T>> hidden;
  std::optional<FilmValues<T>> film;
  GcnCache<T> cache;
  std::vector<T> output;
};

template <class T>
void train_forward(const ConditionedGenerator<T>& g, std::span<const T> x, std::span<const T> phi, TrainPass<T>& pass) {
  const bool conditioned = g.mode() != CondMode::none;
  g.check_condition(conditioned ? &phi : nullptr);
  pass.phi.assign(phi.begin(), phi.end());
  pass.film.reset();
  switch (g.mode()) {
    case CondMode::none:
      pass.output = gcn_forward_params<T>(g.gcn.config, g.gcn.params, x, nullptr, &pass.cache);
      break;
    case CondMode::film:
      pass.film = g.film->values(phi);
      pass.output = gcn_forward_params<T>(g.gcn.config, g.gcn.params, x, &*pass.film, &pass.cache);
      break;
    case CondMode::hypernet:
      pass.effective = g.modulated_params(phi, &pass.deltas, &pass.hidden);
      pass.output = gcn_forward_params<T>(g.gcn.config, pass.effective, x, nullptr, &pass.cache);
      break;
  }
}

/// Accumulates gradients of every trainable parameter of `g`.
template <class T>
void train_backward(ConditionedGenerator<T>& g, TrainPass<T>& pass, std::span<const T> grad_y) {
  switch (g.mode()) {
    case CondMode::none:
      gcn_backward<T>(g.gcn.config, g.gcn.params, pass.cache, grad_y, nullptr, nullptr);
      break;
    case CondMode::film: {
      auto fg = FilmValues<T>::zeros(g.gcn.params.blocks.size(), static_cast<std::size_t>(g.gcn.config.channels));
      gcn_backward<T>(g.gcn.config, g.gcn.params, pass.cache, grad_y, &*pass.film, &fg);
      g.film->backward(pass.phi, fg);
      break;
    }
    case CondMode::hypernet: {
      pass.effective.zero_grad();
      gcn_backward<T>(g.gcn.config, pass.effective, pass.cache, grad_y, nullptr, nullptr);
      // Unconditioned projections pass straight through.
      auto pass_through = [](ConvLayer<T>& base, const ConvLayer<T>& eff) {
        for (std::size_t k = 0; k < base.weight.size(); ++k) base.weight.grad[k] += eff.weight.grad[k];
        for (std::size_t k = 0; k < base.bias.size(); ++k) base.bias.grad[k] += eff.bias.grad[k];
      };
      pass_through(g.gcn.params.input_proj, pass.effective.input_proj);
      pass_through(g.gcn.params.output_head, pass.effective.output_head);
      auto& H = *g.hyper;
      for (std::size_t l = 0; l < H.layers.size(); ++l) {
        auto& HL = H.layers[l];
        ConvLayer<T>& base = g.gcn.params.layer(HL.target);
        const ConvLayer<T>& eff = pass.effective.layer(HL.target);
        const Deltas<T>& d = pass.deltas[l];
        const std::size_t oc = base.out_channels();
        const std::size_t per = base.weight.size() / oc;
        const bool full = d.weight.size() == base.weight.size();
        Deltas<T> gd{std::vector<T>(d.weight.size(), T(0)), std::vector<T>(oc, T(0))};
        for (std::size_t c = 0; c < oc; ++c) {
          for (std::size_t k = 0; k < per; ++k) {
            const std::size_t idx = c * per + k;
            const T dw = full ? d.weight[idx] : d.weight[c];
            const T ge = eff.weight.grad[idx];
            base.weight.grad[idx] += ge * (T(1) + dw);
            gd.weight[full ? idx : c] += ge * base.weight.values[idx];
          }
          base.bias.grad[c] += eff.bias.grad[c] * (T(1) + d.bias[c]);
          gd.bias[c] = eff.bias.grad[c] * base.bias.values[c];
        }
        HL.backward(pass.phi, pass.hidden[l], gd);
      }
      break;
    }
  }
}

}  // namespace hypertone
