#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hypertone/tensor.hpp"

namespace hypertone {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<T> first_moment;
  std::vector<T> second_moment;
  std::uint64_t step_count = 0;
};

/// One bias-corrected Adam update, then zeroes the gradient.
/// Throws FrozenError for frozen parameters and NumericError (naming the
/// parameter) when the gradient is not finite.
template <class T>
void adam_step(ParamTensor<T>& p, AdamState<T>& s, const AdamConfig& cfg) {
  if (p.frozen) throw FrozenError("adam_step: parameter '" + p.name + "' is frozen");
  for (T g : p.grad)
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in '" + p.name + "'");
  if (s.first_moment.size() != p.size()) {
    s.first_moment.assign(p.size(), T(0));
    s.second_moment.assign(p.size(), T(0));
    s.step_count = 0;
  }
  ++s.step_count;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.step_count));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.step_count));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(cfg.lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg.eps);
  for (std::size_t k = 0; k < p.size(); ++k) {
    const T g = p.grad[k];
    T& m = s.first_moment[k];
    T& v = s.second_moment[k];
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g * g;
    p.values[k] -= step * m / (std::sqrt(v * inv_c2) + eps);
  }
  p.zero_grad();
  if (!p.all_finite()) throw NumericError("adam_step: parameter '" + p.name + "' became non-finite");
}

/// Adam over a fixed list of parameters.
template <class T>
class AdamOptimizer {
 public:
  AdamOptimizer(ParamRefs<T> params, AdamConfig cfg) : params_(std::move(params)), states_(params_.size()), cfg_(cfg) {}

  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }

  void step() {
    for (std::size_t k = 0; k < params_.size(); ++k) adam_step(*params_[k], states_[k], cfg_);
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  std::uint64_t steps() const { return states_.empty() ? 0 : states_.front().step_count; }

 private:
  ParamRefs<T> params_;
  std::vector<AdamState<T>> states_;
  AdamConfig cfg_;
};

}  // namespace hypertone
