#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ucount/numerics/tape.hpp"

namespace ucount {

/// Builds a scalar on a fresh tape from variables bound to the parameter tensors.
using ScalarFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
  bool finite = true;
  std::string message;

  bool passed(double tolerance) const { return finite && max_relative_error < tolerance; }
};

/// Compares reverse-mode gradients against central differences,
/// error = |analytic - numeric| / max(1, |numeric|), maximized over coordinates.
/// `stride` > 1 checks every stride-th coordinate of each parameter (always including the first).
inline GradCheckResult grad_check(const ScalarFunction& f, std::vector<Tensor> params, double step = 1e-6,
                                  std::size_t stride = 1) {
  GradCheckResult result;
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(tape.variable(p));
    Var root = f(tape, vars);
    if (!std::isfinite(root.value().item())) {
      result.finite = false;
      result.message = "function is not finite at the base point";
      return result;
    }
    tape.backward(root);
    for (const Var& v : vars) analytic.push_back(v.grad());
  }

  auto evaluate = [&]() {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(tape.constant(p));
    return f(tape, vars).value().item();
  };

  stride = std::max<std::size_t>(stride, 1);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < params[pi].size(); i += stride) {
      const double saved = params[pi][i];
      params[pi][i] = saved + step;
      const double up = evaluate();
      params[pi][i] = saved - step;
      const double down = evaluate();
      params[pi][i] = saved;
      ++result.coordinates_checked;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        result.finite = false;
        result.worst_param = pi;
        result.worst_index = i;
        result.message = "non-finite value perturbing parameter " + std::to_string(pi) + " at index " +
                         std::to_string(i);
        return result;
      }
      const double numeric = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[pi][i] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_param = pi;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace ucount
