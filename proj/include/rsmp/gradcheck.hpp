#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "rsmp/autodiff.hpp"

namespace rsmp {

/// Builds a scalar loss on `tape` from leaf variables bound to the current
/// parameter values. Must be deterministic.
template <typename Scalar>
using LossBuilder = std::function<Var<Scalar>(Tape<Scalar>&, std::span<const Var<Scalar>>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Index worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t elements = 0;
  /// Elements whose numeric derivative changed between step eps and eps/2
  /// by more than the requested resolution (a kink inside the stencil, or a
  /// derivative below the roundoff floor). Excluded from max_rel_error.
  std::size_t unresolved = 0;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

/// Compares reverse-mode gradients against central differences for every
/// element of every parameter. The error of one element is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
///
/// The fourth-order stencil (-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h
/// allows a step large enough that roundoff does not swamp small gradients.
/// With resolution > 0 every element is also differenced at h/2 and skipped
/// (counted in `unresolved`) when the two estimates disagree by more than
/// that relative amount.
template <typename Scalar>
GradCheckResult finite_diff_check(const LossBuilder<Scalar>& f, std::vector<Tensor<Scalar>> params, Scalar eps,
                                  double resolution = 0.0) {
  auto evaluate = [&](const std::vector<Tensor<Scalar>>& values, std::vector<Tensor<Scalar>>* grads) {
    Tape<Scalar> tape;
    std::vector<Var<Scalar>> leaves;
    leaves.reserve(values.size());
    for (const auto& v : values) leaves.push_back(tape.variable(v));
    Var<Scalar> loss = f(tape, leaves);
    if (grads) {
      tape.backward(loss);
      grads->clear();
      for (const auto& leaf : leaves) grads->push_back(tape.grad(leaf));
    }
    return loss.item();
  };

  std::vector<Tensor<Scalar>> analytic;
  evaluate(params, &analytic);

  GradCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Index i = 0; i < params[p].size(); ++i) {
      const Scalar saved = params[p].values[i];
      auto derivative = [&](Scalar h) {
        auto at = [&](Scalar offset) {
          params[p].values[i] = saved + offset;
          return static_cast<double>(evaluate(params, nullptr));
        };
        const double plus2 = at(2 * h), plus = at(h), minus = at(-h), minus2 = at(-2 * h);
        params[p].values[i] = saved;
        // paired differences cancel exactly when f ignores the element
        return (8.0 * (plus - minus) - (plus2 - minus2)) / (12.0 * static_cast<double>(h));
      };
      ++result.elements;
      const double numeric = derivative(eps);
      if (resolution > 0.0 && relative_error(numeric, derivative(eps / 2)) > resolution) {
        ++result.unresolved;
        continue;
      }
      const double exact = static_cast<double>(analytic[p].values[i]);
      const double err = relative_error(exact, numeric);
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p;
        result.worst_index = i;
        result.analytic = exact;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace rsmp
