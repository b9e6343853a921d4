#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "giram/ad/tape.hpp"
#include "giram/error.hpp"

namespace giram::ad {

/// Builds a scalar loss on the given tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares analytic gradients against central differences for every
/// coordinate of every trainable parameter. The per-coordinate error is
/// |analytic - numeric| / max(1, |analytic|, |numeric|), so it is relative
/// for large gradients and absolute near zero. Returns the maximum.
inline double grad_check(const LossBuilder& f, const ParameterList& params, double eps = 1e-4) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  auto eval = [&]() {
    Tape t;
    double v = t.scalar(f(t));
    if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
    return v;
  };
  zero_grads(params);
  {
    Tape t;
    Var loss = f(t);
    if (!std::isfinite(t.scalar(loss))) throw NumericError("grad_check: loss is not finite");
    t.backward(loss);
  }
  double worst = 0.0;
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    const Matrix analytic = p->grad;
    for (Eigen::Index k = 0; k < p->value.size(); ++k) {
      double& x = p->value.data()[k];
      const double saved = x;
      x = saved + eps;
      const double up = eval();
      x = saved - eps;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.data()[k];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace giram::ad
