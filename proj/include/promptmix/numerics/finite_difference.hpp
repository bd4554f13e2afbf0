// Copyright (c) 2026, The PromptMix Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "promptmix/error.hpp"
#include "promptmix/numerics/matrix.hpp"

namespace promptmix {

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps), one entry at a time.
inline Matrix finite_difference_gradient(const std::function<double(const Matrix&)>& f, const Matrix& at,
                                         double eps = 1e-5) {
  if (!(eps > 0.0)) throw InvalidHyperparameterError("finite difference step must be positive");
  Matrix grad(at.rows(), at.cols());
  Matrix x = at;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = f(x);
    x[i] = orig - eps;
    const double down = f(x);
    x[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

/// Worst entrywise |a - b| / max(|a|, |b|, floor). The floor keeps entries whose
/// true gradient is ~0 from dominating through cancellation noise.
inline double max_relative_error(const Matrix& analytic, const Matrix& numeric, double floor = 1e-6) {
  analytic.require_same_shape(numeric, "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

}  // namespace promptmix
