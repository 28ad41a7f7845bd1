// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <random>
#include <string>

#include "graphpl/numeric/ops.hpp"
#include "graphpl/numeric/random.hpp"

namespace graphpl {

/// Fully connected layer holding `<prefix>.weight` [in,out] and `<prefix>.bias` [out].
struct Dense {
  Parameter weight;
  Parameter bias;

  Dense() = default;

  /// Glorot-uniform weights, zero bias.
  Dense(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng)
      : weight(prefix + ".weight", Tensor(Shape{in, out})), bias(prefix + ".bias", Tensor(Shape{out})) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& w : weight.mutable_value().storage()) w = dist(rng);
  }

  std::size_t in_dim() const { return weight.value().rows(); }
  std::size_t out_dim() const { return weight.value().cols(); }

  Var operator()(const Var& x) const { return linear(x, weight.var, bias.var); }

  template <typename Fn>
  void visit(Fn&& fn) {
    fn(weight);
    fn(bias);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    fn(weight);
    fn(bias);
  }
};

}  // namespace graphpl
