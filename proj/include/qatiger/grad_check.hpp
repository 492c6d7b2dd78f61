// Central finite-difference verification of reverse-mode gradients.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "qatiger/tensor.hpp"

namespace qatiger {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Index worst_element = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Compares analytic gradients with (f(x+h) − f(x−h)) / 2h element by element.
// `loss` must re-evaluate the scalar objective from the parameters' current
// values. Relative error is |analytic − numeric| / max(1, |numeric|), and the
// report keeps the worst offender.
template <typename Scalar, typename LossFn>
GradCheckReport check_gradients(LossFn&& loss, const std::vector<Tensor<Scalar>*>& params,
                                const std::vector<Tensor<Scalar>>& analytic,
                                double h = 1e-5) {
  if (params.size() != analytic.size()) {
    throw ShapeError("check_gradients: parameter/gradient count mismatch");
  }
  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<Scalar>& p = *params[pi];
    if (!p.same_shape(analytic[pi])) {
      throw ShapeError("check_gradients: gradient shape mismatch at parameter " +
                       std::to_string(pi));
    }
    for (Index e = 0; e < p.size(); ++e) {
      const Scalar orig = p(e);
      p(e) = orig + static_cast<Scalar>(h);
      const double up = static_cast<double>(loss());
      p(e) = orig - static_cast<Scalar>(h);
      const double down = static_cast<double>(loss());
      p(e) = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("check_gradients: non-finite loss at finite-difference probe");
      }
      const double numeric = (up - down) / (2.0 * h);
      const double a = static_cast<double>(analytic[pi](e));
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = pi;
        report.worst_element = e;
        report.analytic_at_worst = a;
        report.numeric_at_worst = numeric;
      }
    }
  }
  return report;
}

}  // namespace qatiger
