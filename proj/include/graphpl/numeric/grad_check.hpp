// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "graphpl/numeric/autograd.hpp"

namespace graphpl {

/// Non-finite objective during a gradient check.
class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_input;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckInput {
  std::string name;
  Var var;
};

/// Relative error with an absolute floor so entries whose true derivative is
/// ~0 are judged on an absolute scale instead of amplifying round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Compares reverse-mode gradients of `f` against central differences for
/// every element of every input. `f` must rebuild its graph from the current
/// input values on each call.
inline GradCheckReport grad_check(const std::function<Var()>& f, std::vector<GradCheckInput> inputs,
                                  double eps = 1e-5) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw DomainError("grad_check: eps must lie in [1e-7, 1e-3]");

  for (auto& in : inputs) in.var.zero_grad();
  Var out = f();
  if (!out.value().all_finite()) throw EvaluationError("grad_check: objective is not finite");
  backward(out);

  std::vector<Tensor> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) analytic.push_back(in.var.has_grad() ? in.var.grad() : Tensor(in.var.shape()));

  auto eval = [&]() {
    double v = f().value().item();
    if (!std::isfinite(v)) throw EvaluationError("grad_check: objective is not finite under perturbation");
    return v;
  };

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& x = inputs[k].var.mutable_value();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + eps;
      const double up = eval();
      x[i] = orig - eps;
      const double down = eval();
      x[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[k][i], numeric);
      if (err > report.max_rel_error) {
        report = {err, inputs[k].name, i, analytic[k][i], numeric};
      }
    }
  }
  return report;
}

}  // namespace graphpl
