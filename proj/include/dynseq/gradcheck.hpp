#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "dynseq/parameters.hpp"

namespace dynseq {

/// Evaluates a loss at the current parameter values. When `with_grad` is set
/// the function must also run backward, accumulating into the set's gradients.
using LossFunction = std::function<double(ParameterSet&, bool with_grad)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares analytic gradients against central differences coordinate by
/// coordinate. Error per coordinate is |analytic - numeric| / max(1, |analytic|).
/// `tamper` (test hook) may modify analytic gradients before the comparison.
inline GradCheckResult finite_diff_check(ParameterSet& params, const LossFunction& loss, double eps = 1e-5,
                                         const std::function<void(ParameterSet&)>& tamper = {}) {
  params.zero_grad();
  const double base = loss(params, true);
  if (!std::isfinite(base)) throw NumericError("finite_diff_check: non-finite loss at the base point");
  if (tamper) tamper(params);

  GradCheckResult result;
  for (auto& [name, p] : params) {
    const Tensor analytic = p.grad;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double saved = p.value[i];
      p.value[i] = saved + eps;
      const double up = loss(params, false);
      p.value[i] = saved - eps;
      const double down = loss(params, false);
      p.value[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("finite_diff_check: non-finite loss perturbing " + name + "[" + std::to_string(i) + "]");
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::fabs(analytic[i] - numeric) / std::max(1.0, std::fabs(analytic[i]));
      ++result.coordinates;
      if (err >= result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_parameter = name;
        result.worst_index = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
  }
  params.zero_grad();
  return result;
}

}  // namespace dynseq
