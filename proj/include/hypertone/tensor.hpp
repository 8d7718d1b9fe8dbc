#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hypertone/error.hpp"
#include "hypertone/random.hpp"

namespace hypertone {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s);

/// Dense row-major array.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), values(shape_size(shape), fill) {}
  Tensor(Shape s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
    if (values.size() != shape_size(shape)) throw ContractError("Tensor: value count does not match shape");
  }

  std::size_t size() const { return values.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  T* data() { return values.data(); }
  const T* data() const { return values.data(); }

  T& at(std::size_t i, std::size_t j) { return values[i * shape[1] + j]; }
  T at(std::size_t i, std::size_t j) const { return values[i * shape[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) { return values[(i * shape[1] + j) * shape[2] + k]; }
  T at(std::size_t i, std::size_t j, std::size_t k) const {
    return values[(i * shape[1] + j) * shape[2] + k];
  }
};

/// A trainable array: values plus a gradient of identical shape.
template <class T>
struct ParamTensor {
  std::string name;
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;
  bool frozen = false;

  ParamTensor() = default;
  ParamTensor(std::string n, Shape s)
      : name(std::move(n)), shape(std::move(s)), values(shape_size(shape), T(0)), grad(values.size(), T(0)) {}

  std::size_t size() const { return values.size(); }
  T* data() { return values.data(); }
  const T* data() const { return values.data(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); }) &&
           std::all_of(grad.begin(), grad.end(), [](T v) { return std::isfinite(v); });
  }

  /// Uniform in +-gain*sqrt(3/fan_in) (Kaiming-uniform, fan-in mode).
  void kaiming_uniform(Rng& rng, std::size_t fan_in, double gain = 1.0) {
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    for (T& v : values) v = static_cast<T>(rng.uniform(-bound, bound));
  }

  template <class U>
  ParamTensor<U> cast() const {
    ParamTensor<U> out(name, shape);
    std::transform(values.begin(), values.end(), out.values.begin(), [](T v) { return static_cast<U>(v); });
    out.frozen = frozen;
    return out;
  }
};

template <class T>
using ParamRefs = std::vector<ParamTensor<T>*>;

}  // namespace hypertone
