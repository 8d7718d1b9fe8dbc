#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "hypertone/tensor.hpp"

namespace hypertone {

struct GradCheckResult {
  double max_relative_error = 0.0;
  /// ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2) over all entries.
  double norm_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic gradients against central differences for every entry of
/// every parameter. `loss` evaluates the scalar loss at the current values;
/// `backward` must accumulate dL/dtheta into each parameter's grad (grads are
/// zeroed first). Relative error is |a - n| / max(|a|, |n|, abs_floor).
template <class T>
GradCheckResult grad_check(const ParamRefs<T>& params, const std::function<double()>& loss,
                           const std::function<void()>& backward, double eps, double abs_floor = 1e-6) {
  for (auto* p : params) p->zero_grad();
  loss();
  backward();
  GradCheckResult r;
  double diff2 = 0, a2 = 0, n2 = 0;
  for (auto* p : params) {
    for (std::size_t k = 0; k < p->size(); ++k) {
      const T saved = p->values[k];
      // Divide by the perturbation actually stored, which differs from 2*eps when
      // saved +- eps is not representable in T.
      const T hi = static_cast<T>(saved + eps), lo = static_cast<T>(saved - eps);
      p->values[k] = hi;
      const double up = loss();
      p->values[k] = lo;
      const double down = loss();
      p->values[k] = saved;
      const double numeric = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
      const double analytic = p->grad[k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++r.checked;
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
      if (rel > r.max_relative_error || !std::isfinite(rel)) {
        r.max_relative_error = std::isfinite(rel) ? rel : INFINITY;
        r.worst_param = p->name;
        r.worst_index = k;
        r.analytic = analytic;
        r.numeric = numeric;
      }
    }
  }
  const double scale = std::sqrt(std::max(a2, n2));
  r.norm_relative_error = scale > 0 ? std::sqrt(diff2) / scale : 0.0;
  return r;
}

}  // namespace hypertone
