#pragma once

#include <cmath>
#include <functional>

#include "qmpnn/tape.hpp"

namespace qmpnn {

/// Builds a scalar loss on the given tape, reading parameters via Tape::param.
using LossBuilder = std::function<Var(Tape&)>;

/// Max over entries of |analytic − central difference| / (|analytic| + 1e-8)
/// for parameter p. The loss is rebuilt on a fresh tape for every probe.
inline double finite_difference_check(const LossBuilder& f, Parameter& p, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_difference_check: eps must be positive");
  auto evaluate = [&]() {
    Tape t;
    const double v = f(t).value()[0];
    if (!std::isfinite(v)) throw NumericError("finite_difference_check: loss is not finite");
    return v;
  };

  p.zero_grad();
  {
    Tape t;
    Var loss = f(t);
    if (!std::isfinite(loss.value()[0])) throw NumericError("finite_difference_check: loss is not finite");
    t.backward(loss);
  }
  const Tensor analytic = p.grad;

  double worst = 0.0;
  for (std::size_t e = 0; e < p.value.size(); ++e) {
    const double saved = p.value[e];
    p.value[e] = saved + eps;
    const double up = evaluate();
    p.value[e] = saved - eps;
    const double down = evaluate();
    p.value[e] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[e] - numeric) / (std::abs(analytic[e]) + 1e-8));
  }
  return worst;
}

}  // namespace qmpnn
