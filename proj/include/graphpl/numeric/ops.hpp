// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "graphpl/numeric/autograd.hpp"
#include "graphpl/numeric/tensor.hpp"

namespace graphpl {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

inline CMapMat as_mat(const Tensor& t) {
  return CMapMat(t.storage().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
inline MapMat as_mat(Tensor& t) {
  return MapMat(t.storage().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

inline Node* grad_parent(Node& self, std::size_t i) {
  Node* p = self.parents[i].get();
  return p->requires_grad ? p : nullptr;
}

template <typename F>
Var unary_elementwise(const Var& a, F&& f, auto&& df) {
  Tensor out(a.shape());
  const auto& x = a.value().storage();
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return make_result(std::move(out), {a}, [df](Node& self) {
    if (Node* p = grad_parent(self, 0)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(p->value[i], self.value[i]);
    }
  });
}

}  // namespace detail

/// Matrix product of rank-2 operands.
inline Var matmul(const Var& a, const Var& b) {
  require_rank2(a.value(), "matmul");
  require_rank2(b.value(), "matmul");
  if (a.value().cols() != b.value().rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out(Shape{a.value().rows(), b.value().cols()});
  detail::as_mat(out).noalias() = detail::as_mat(a.value()) * detail::as_mat(b.value());
  return detail::make_result(std::move(out), {a, b}, [](Node& self) {
    auto g = detail::as_mat(std::as_const(self.grad));
    if (Node* pa = detail::grad_parent(self, 0)) {
      detail::as_mat(pa->ensure_grad()).noalias() += g * detail::as_mat(std::as_const(self.parents[1]->value)).transpose();
    }
    if (Node* pb = detail::grad_parent(self, 1)) {
      detail::as_mat(pb->ensure_grad()).noalias() += detail::as_mat(std::as_const(self.parents[0]->value)).transpose() * g;
    }
  });
}

/// y = xW + b, with x:[n,in], W:[in,out], b:[out].
inline Var linear(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.cols() != wv.rows() || b.value().size() != wv.cols()) {
    throw DimensionError("linear: incompatible shapes x" + shape_str(xv.shape()) + " W" + shape_str(wv.shape()) +
                         " b" + shape_str(b.shape()));
  }
  Tensor out(Shape{xv.rows(), wv.cols()});
  auto y = detail::as_mat(out);
  y.noalias() = detail::as_mat(xv) * detail::as_mat(wv);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.value().storage().data(), static_cast<Eigen::Index>(wv.cols()));
  return detail::make_result(std::move(out), {x, w, b}, [](Node& self) {
    auto g = detail::as_mat(std::as_const(self.grad));
    const Tensor& xv = self.parents[0]->value;
    const Tensor& wv = self.parents[1]->value;
    if (Node* px = detail::grad_parent(self, 0)) {
      detail::as_mat(px->ensure_grad()).noalias() += g * detail::as_mat(wv).transpose();
    }
    if (Node* pw = detail::grad_parent(self, 1)) {
      detail::as_mat(pw->ensure_grad()).noalias() += detail::as_mat(xv).transpose() * g;
    }
    if (Node* pb = detail::grad_parent(self, 2)) {
      Tensor& gb = pb->ensure_grad();
      Eigen::Map<Eigen::RowVectorXd>(gb.storage().data(), static_cast<Eigen::Index>(gb.size())) += g.colwise().sum();
    }
  });
}

inline Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return detail::make_result(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (Node* p = detail::grad_parent(self, k)) {
        Tensor& g = p->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return detail::make_result(std::move(out), {a, b}, [](Node& self) {
    if (Node* p = detail::grad_parent(self, 0)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (Node* p = detail::grad_parent(self, 1)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

/// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return detail::make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    if (Node* p = detail::grad_parent(self, 0)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (Node* p = detail::grad_parent(self, 1)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

/// Elementwise quotient.
inline Var div(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "div");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] / b.value()[i];
  return detail::make_result(std::move(out), {a, b}, [](Node& self) {
    const Tensor& bv = self.parents[1]->value;
    if (Node* p = detail::grad_parent(self, 0)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / bv[i];
    }
    if (Node* p = detail::grad_parent(self, 1)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / bv[i];
    }
  });
}

inline Var scale(const Var& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
  return detail::make_result(std::move(out), {a}, [s](Node& self) {
    if (Node* p = detail::grad_parent(self, 0)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
    }
  });
}

inline Var add_scalar(const Var& a, double c) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + c;
  return detail::make_result(std::move(out), {a}, [](Node& self) {
    if (Node* p = detail::grad_parent(self, 0)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

/// Sum of all elements as a rank-0 tensor.
inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().storage()) s += v;
  return detail::make_result(Tensor::scalar(s), {a}, [](Node& self) {
    if (Node* p = detail::grad_parent(self, 0)) {
      Tensor& g = p->ensure_grad();
      const double up = self.grad[0];
      for (double& v : g.storage()) v += up;
    }
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Mean of same-shaped terms, summed in list order.
inline Var average(std::span<const Var> terms) {
  if (terms.empty()) throw PreconditionError("average: no terms");
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

inline Var relu(const Var& a) {
  return detail::unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

/// log(1 + e^x), evaluated without overflow.
inline Var softplus(const Var& a) {
  return detail::unary_elementwise(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Var exp(const Var& a) {
  return detail::unary_elementwise(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary_elementwise(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

/// Clamps into [lo, hi]; the gradient is zero where the bound is active.
inline Var clamp(const Var& a, double lo, double hi) {
  return detail::unary_elementwise(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

/// Row-wise normalisation to zero mean and unit variance, then gamma/beta affine.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5) {
  const Tensor& xv = x.value();
  require_rank2(xv, "layer_norm");
  const std::size_t n = xv.rows();
  const std::size_t c = xv.cols();
  if (c == 0) throw DimensionError("layer_norm: zero channels");
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw DimensionError("layer_norm: affine parameters " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " do not match channel count of " + shape_str(xv.shape()));
  }
  if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");

  Tensor normed(xv.shape());
  std::vector<double> inv_std(n);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < n; ++r) {
    auto row = xv.row_span(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(c);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      normed.at(r, j) = (row[j] - mu) * inv_std[r];
      out.at(r, j) = normed.at(r, j) * gamma.value()[j] + beta.value()[j];
    }
  }

  return detail::make_result(std::move(out), {x, gamma, beta},
                             [normed = std::move(normed), inv_std = std::move(inv_std), n, c](Node& self) {
    const Tensor& gv = self.parents[1]->value;
    if (Node* px = detail::grad_parent(self, 0)) {
      Tensor& g = px->ensure_grad();
      std::vector<double> dxhat(c);
      for (std::size_t r = 0; r < n; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          dxhat[j] = self.grad.at(r, j) * gv[j];
          m1 += dxhat[j];
          m2 += dxhat[j] * normed.at(r, j);
        }
        m1 /= static_cast<double>(c);
        m2 /= static_cast<double>(c);
        for (std::size_t j = 0; j < c; ++j) g.at(r, j) += inv_std[r] * (dxhat[j] - m1 - normed.at(r, j) * m2);
      }
    }
    if (Node* pg = detail::grad_parent(self, 1)) {
      Tensor& g = pg->ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad.at(r, j) * normed.at(r, j);
    }
    if (Node* pb = detail::grad_parent(self, 2)) {
      Tensor& g = pb->ensure_grad();
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad.at(r, j);
    }
  });
}

/// z = mu + exp(logvar / 2) * noise. The noise is a constant drawn by the caller.
inline Var reparameterize(const Var& mu, const Var& logvar, const Tensor& noise) {
  require_same_shape(mu.value(), logvar.value(), "reparameterize");
  require_same_shape(mu.value(), noise, "reparameterize");
  Tensor out(mu.shape());
  Tensor sigma(mu.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    sigma[i] = std::exp(0.5 * logvar.value()[i]);
    out[i] = mu.value()[i] + sigma[i] * noise[i];
  }
  return detail::make_result(std::move(out), {mu, logvar}, [sigma = std::move(sigma), noise](Node& self) {
    if (Node* p = detail::grad_parent(self, 0)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (Node* p = detail::grad_parent(self, 1)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 0.5 * sigma[i] * noise[i];
    }
  });
}

/// KL(N(mu, exp(logvar)) || N(0, I)) summed over every element.
inline Var gaussian_kl(const Var& mu, const Var& logvar) {
  require_same_shape(mu.value(), logvar.value(), "gaussian_kl");
  double s = 0.0;
  for (std::size_t i = 0; i < mu.value().size(); ++i) {
    const double m = mu.value()[i];
    const double lv = logvar.value()[i];
    s += -0.5 * (1.0 + lv - m * m - std::exp(lv));
  }
  return detail::make_result(Tensor::scalar(s), {mu, logvar}, [](Node& self) {
    const double up = self.grad[0];
    const Tensor& m = self.parents[0]->value;
    const Tensor& lv = self.parents[1]->value;
    if (Node* p = detail::grad_parent(self, 0)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * m[i];
    }
    if (Node* p = detail::grad_parent(self, 1)) {
      Tensor& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * 0.5 * (std::exp(lv[i]) - 1.0);
    }
  });
}

enum class Likelihood { kGaussian, kBernoulli };

inline std::string to_string(Likelihood k) { return k == Likelihood::kGaussian ? "gaussian" : "bernoulli"; }

inline Likelihood likelihood_from_string(const std::string& s) {
  if (s == "gaussian") return Likelihood::kGaussian;
  if (s == "bernoulli") return Likelihood::kBernoulli;
  throw ConfigError("unknown likelihood '" + s + "' (expected gaussian or bernoulli)");
}

/// Negative log-likelihood of `target` under the decoder output, summed.
///
/// Gaussian: unit variance, constants dropped, so 0.5 * ||x_hat - x||^2.
/// Bernoulli: x_hat are logits, x in [0, 1]; logistic cross-entropy.
inline Var recon_nll(const Var& x_hat, const Tensor& target, Likelihood kind) {
  require_same_shape(x_hat.value(), target, "recon_nll");
  const Tensor& z = x_hat.value();
  double s = 0.0;
  if (kind == Likelihood::kGaussian) {
    for (std::size_t i = 0; i < z.size(); ++i) s += 0.5 * (z[i] - target[i]) * (z[i] - target[i]);
  } else {
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (!(target[i] >= 0.0 && target[i] <= 1.0)) {
        throw DomainError("recon_nll: bernoulli target " + std::to_string(target[i]) + " outside [0,1]");
      }
      // softplus(l) - x*l
      s += std::max(z[i], 0.0) + std::log1p(std::exp(-std::abs(z[i]))) - target[i] * z[i];
    }
  }
  return detail::make_result(Tensor::scalar(s), {x_hat}, [target, kind](Node& self) {
    Node* p = detail::grad_parent(self, 0);
    if (!p) return;
    const double up = self.grad[0];
    Tensor& g = p->ensure_grad();
    const Tensor& z = p->value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = kind == Likelihood::kGaussian ? z[i] - target[i] : 1.0 / (1.0 + std::exp(-z[i])) - target[i];
      g[i] += up * d;
    }
  });
}

/// Stacks rank-2 operands with equal column counts.
inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw PreconditionError("concat_rows: no operands");
  const std::size_t c = parts[0].value().cols();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank2(p.value(), "concat_rows");
    if (p.value().cols() != c) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    n += p.value().rows();
  }
  Tensor out(Shape{n, c});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(), out.storage().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().size();
  }
  return detail::make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::size_t len = self.parents[k]->value.size();
      if (Node* p = detail::grad_parent(self, k)) {
        Tensor& g = p->ensure_grad();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
      }
      off += len;
    }
  });
}

/// Rows [begin, begin + count) of a rank-2 operand.
inline Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  require_rank2(a.value(), "slice_rows");
  if (begin + count > a.value().rows()) {
    throw DimensionError("slice_rows: range exceeds " + shape_str(a.shape()));
  }
  Tensor out = take_rows(a.value(), begin, count);
  return detail::make_result(std::move(out), {a}, [begin](Node& self) {
    if (Node* p = detail::grad_parent(self, 0)) {
      Tensor& g = p->ensure_grad();
      const std::size_t off = begin * p->value.cols();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[off + i] += self.grad[i];
    }
  });
}

}  // namespace graphpl
