#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "hypertone/tensor.hpp"

namespace hypertone {

/// Affine map y = W x + b with W stored [out, in].
template <class T>
struct Dense {
  ParamTensor<T> weight;
  ParamTensor<T> bias;

  Dense() = default;
  Dense(const std::string& name, std::size_t in, std::size_t out)
      : weight(name + ".W", {out, in}), bias(name + ".b", {out}) {}

  std::size_t in_dim() const { return weight.shape.at(1); }
  std::size_t out_dim() const { return weight.shape.at(0); }

  void forward(std::span<const T> x, std::span<T> y) const {
    const std::size_t in = in_dim(), out = out_dim();
    if (x.size() != in || y.size() != out) throw ContractError("Dense(" + weight.name + "): dimension mismatch");
    for (std::size_t o = 0; o < out; ++o) {
      const T* w = weight.data() + o * in;
      T acc = bias.values[o];
      for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
      y[o] = acc;
    }
  }

  /// Accumulates parameter gradients; writes dL/dx when grad_x is non-empty.
  void backward(std::span<const T> x, std::span<const T> grad_y, std::span<T> grad_x) {
    const std::size_t in = in_dim(), out = out_dim();
    if (!grad_x.empty()) std::fill(grad_x.begin(), grad_x.end(), T(0));
    for (std::size_t o = 0; o < out; ++o) {
      const T g = grad_y[o];
      bias.grad[o] += g;
      T* gw = weight.grad.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) gw[i] += g * x[i];
      if (!grad_x.empty()) {
        const T* w = weight.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) grad_x[i] += g * w[i];
      }
    }
  }

  void collect(ParamRefs<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  template <class U>
  Dense<U> cast() const {
    Dense<U> d;
    d.weight = weight.template cast<U>();
    d.bias = bias.template cast<U>();
    return d;
  }
};

}  // namespace hypertone
