// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "graphpl/data.hpp"
#include "graphpl/training.hpp"

namespace graphpl {

/// Nearest-prototype classifier; Bayes-optimal for the synthetic views.
class OracleClassifier {
 public:
  explicit OracleClassifier(Prototypes protos) : protos_(std::move(protos)) {}

  int classify(std::size_t modality, std::span<const double> view) const {
    const Tensor& p = protos_.per_modality.at(modality);
    if (view.size() != p.cols()) throw DimensionError("oracle: view width does not match prototypes");
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < p.rows(); ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < p.cols(); ++j) d += (view[j] - p.at(c, j)) * (view[j] - p.at(c, j));
      if (d < best_d) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    return best;
  }

  /// Fraction of rows of `views` (modality m) classified as their label.
  double accuracy(std::size_t modality, const Tensor& views, std::span<const int> labels) const {
    if (views.rows() != labels.size()) throw DimensionError("oracle: label count mismatch");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += classify(modality, views.row_span(i)) == labels[i];
    return labels.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(labels.size());
  }

  const Prototypes& prototypes() const { return protos_; }

 private:
  Prototypes protos_;
};

/// Mean oracle accuracy over the given reconstructions.
inline double score_imputations(const std::map<int, Tensor>& imputed, std::span<const int> labels,
                                const OracleClassifier& oracle) {
  if (imputed.empty()) return 1.0;
  double s = 0.0;
  for (const auto& [m, v] : imputed) s += oracle.accuracy(static_cast<std::size_t>(m), v, labels);
  return s / static_cast<double>(imputed.size());
}

/// Imputes `missing` from the given observed views and scores the result.
inline double generation_quality(const ModelBundle& model, const std::map<int, Tensor>& observed,
                                 std::span<const int> labels, const std::set<int>& missing,
                                 const OracleClassifier& oracle, const NoiseSource& noise) {
  if (labels.empty()) throw PreconditionError("generation_quality: empty test set");
  if (missing.empty()) {
    std::cerr << "warning: generation_quality with nothing missing is vacuously 1.0\n";
    return 1.0;
  }
  return score_imputations(infer_impute(model, observed, missing, noise), labels, oracle);
}

/// GQ with every modality outside `missing` observed.
inline double generation_quality(const ModelBundle& model, const Dataset& test, const std::set<int>& missing,
                                 const OracleClassifier& oracle, const NoiseSource& noise) {
  std::set<int> observed;
  for (std::size_t m = 0; m < test.modalities(); ++m)
    if (!missing.contains(static_cast<int>(m))) observed.insert(static_cast<int>(m));
  return generation_quality(model, test.select(observed), test.labels, missing, oracle, noise);
}

/// Mean GQ over each single missing modality, imputed from all the others.
inline double leave_one_out_gq(const ModelBundle& model, const Dataset& test, const OracleClassifier& oracle,
                               const NoiseSource& noise) {
  double s = 0.0;
  for (std::size_t m = 0; m < test.modalities(); ++m) s += generation_quality(model, test, {static_cast<int>(m)}, oracle, noise);
  return s / static_cast<double>(test.modalities());
}

struct ProbeConfig {
  double l2 = 1e-3;
  std::size_t max_steps = 500;
  double learning_rate = 0.5;
  double tolerance = 1e-6;
};

/// Multinomial logistic regression on standardised features, fitted by
/// full-batch gradient descent from a zero start.
class ProbeClassifier {
 public:
  void fit(const Tensor& x, std::span<const int> y, std::size_t classes, const ProbeConfig& cfg = {}) {
    const std::size_t n = x.rows();
    const std::size_t f = x.cols();
    if (n == 0 || n != y.size()) throw PreconditionError("probe: empty or mismatched training data");
    classes_ = classes;
    mean_.assign(f, 0.0);
    inv_std_.assign(f, 1.0);
    for (std::size_t j = 0; j < f; ++j) {
      double m = 0.0, v = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += x.at(i, j);
      m /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) v += (x.at(i, j) - m) * (x.at(i, j) - m);
      v /= static_cast<double>(n);
      mean_[j] = m;
      inv_std_[j] = v > 1e-12 ? 1.0 / std::sqrt(v) : 0.0;
    }
    Tensor z = standardise(x);
    weights_ = Tensor(Shape{f + 1, classes});
    Tensor grad(weights_.shape());
    std::vector<double> p(classes);
    steps_ = 0;
    for (; steps_ < cfg.max_steps; ++steps_) {
      grad.fill(0.0);
      for (std::size_t i = 0; i < n; ++i) {
        softmax_row(z.row_span(i), p);
        for (std::size_t c = 0; c < classes; ++c) {
          const double err = (p[c] - (y[i] == static_cast<int>(c) ? 1.0 : 0.0)) / static_cast<double>(n);
          for (std::size_t j = 0; j < f; ++j) grad.at(j, c) += err * z.at(i, j);
          grad.at(f, c) += err;
        }
      }
      double gmax = 0.0;
      for (std::size_t j = 0; j <= f; ++j)
        for (std::size_t c = 0; c < classes; ++c) {
          if (j < f) grad.at(j, c) += cfg.l2 * weights_.at(j, c);
          gmax = std::max(gmax, std::abs(grad.at(j, c)));
        }
      if (gmax < cfg.tolerance) break;
      for (std::size_t k = 0; k < weights_.size(); ++k) weights_[k] -= cfg.learning_rate * grad[k];
    }
  }

  int predict(std::span<const double> row) const {
    std::vector<double> z(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) z[j] = (row[j] - mean_[j]) * inv_std_[j];
    std::vector<double> p(classes_);
    softmax_row(z, p);
    return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
  }

  double accuracy(const Tensor& x, std::span<const int> y) const {
    if (y.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < y.size(); ++i) hits += predict(x.row_span(i)) == y[i];
    return static_cast<double>(hits) / static_cast<double>(y.size());
  }

  std::size_t steps() const { return steps_; }

 private:
  Tensor standardise(const Tensor& x) const {
    Tensor z(x.shape());
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) z.at(i, j) = (x.at(i, j) - mean_[j]) * inv_std_[j];
    return z;
  }

  void softmax_row(std::span<const double> z, std::vector<double>& p) const {
    const std::size_t f = z.size();
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes_; ++c) {
      double a = weights_.at(f, c);
      for (std::size_t j = 0; j < f; ++j) a += z[j] * weights_.at(j, c);
      p[c] = a;
      mx = std::max(mx, a);
    }
    double s = 0.0;
    for (auto& v : p) s += (v = std::exp(v - mx));
    for (auto& v : p) v /= s;
  }

  std::size_t classes_ = 0;
  std::vector<double> mean_, inv_std_;
  Tensor weights_;
  std::size_t steps_ = 0;
};

struct ClientRepresentationQuality {
  int client_id = 0;
  double accuracy = 0.0;
  bool degenerate = false;  // single class in the training split
};

struct RepresentationQuality {
  std::vector<ClientRepresentationQuality> clients;
  double mean = 0.0;
};

/// Seeded 80/20 train/test split of `n` indices.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> train_test_split(std::size_t n, Rng& rng,
                                                                                      double train_fraction = 0.8) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto cut = static_cast<std::size_t>(std::round(train_fraction * static_cast<double>(n)));
  return {{idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut)},
          {idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end()}};
}

/// Fits a probe on labelled features and scores it on a held-out split.
inline ClientRepresentationQuality probe_accuracy(const Tensor& train_x, std::span<const int> train_y,
                                                  const Tensor& test_x, std::span<const int> test_y,
                                                  std::size_t classes, const ProbeConfig& cfg = {}) {
  ClientRepresentationQuality out;
  out.degenerate = std::set<int>(train_y.begin(), train_y.end()).size() < 2;
  ProbeClassifier probe;
  probe.fit(train_x, train_y, classes, cfg);
  out.accuracy = probe.accuracy(test_x, test_y);
  return out;
}

/// Per-client downstream accuracy on concatenated observed + imputed latents.
/// Each client's own bundle supplies the features; the 80/20 split is seeded
/// by (split_seed, client id).
inline RepresentationQuality representation_quality(std::span<const ClientState> clients, std::size_t modalities,
                                                     std::size_t classes, const NoiseSource& noise,
                                                     std::uint64_t split_seed, const ProbeConfig& cfg = {}) {
  RepresentationQuality rq;
  for (const auto& c : clients) {
    std::set<int> missing;
    for (std::size_t m = 0; m < modalities; ++m)
      if (!c.observed.contains(static_cast<int>(m))) missing.insert(static_cast<int>(m));
    Rng rng = derive_rng(split_seed, {0x7271ULL, static_cast<std::uint64_t>(c.client_id)});
    auto [train_idx, test_idx] = train_test_split(c.shard.size(), rng);
    Dataset train = c.shard.subset(train_idx);
    Dataset test = c.shard.subset(test_idx);
    Tensor train_x = infer_features(c.bundle, train.select(c.observed), missing, noise);
    Tensor test_x = infer_features(c.bundle, test.select(c.observed), missing, noise);
    auto r = probe_accuracy(train_x, train.labels, test_x, test.labels, classes, cfg);
    r.client_id = c.client_id;
    rq.clients.push_back(r);
  }
  double s = 0.0;
  for (const auto& r : rq.clients) s += r.accuracy;
  rq.mean = rq.clients.empty() ? 0.0 : s / static_cast<double>(rq.clients.size());
  return rq;
}

/// GQ of one missing modality while a single conditional is interpolated
/// towards noise, for every conditional and every scale.
struct SweepResult {
  std::string method;
  int missing = 0;
  std::vector<double> scales;           // ascending
  std::vector<int> noised;              // conditional modalities, ascending
  std::vector<std::vector<double>> gq;  // [scale][noised index]
  std::vector<double> min_gq;           // per scale

  double gq_at(double s, int modality) const {
    for (std::size_t i = 0; i < scales.size(); ++i)
      if (scales[i] == s)
        for (std::size_t k = 0; k < noised.size(); ++k)
          if (noised[k] == modality) return gq[i][k];
    throw PreconditionError("sweep: no cell for the requested scale and modality");
  }
  double min_at(double s) const {
    for (std::size_t i = 0; i < scales.size(); ++i)
      if (scales[i] == s) return min_gq[i];
    throw PreconditionError("sweep: scale not in grid");
  }
};

/// Fixed corruption noise for modality m: N(0, scale(m)^2), seeded per modality
/// so every grid point interpolates towards the same draw.
inline Tensor corruption_noise(const Prototypes& protos, std::size_t modality, std::size_t rows, std::uint64_t seed) {
  NoiseSource src(seed, 0);
  Tensor n = src.normal(NoisePurpose::kCorruption, static_cast<int>(modality), rows, protos.dim());
  const double s = protos.scale(modality);
  for (double& v : n.storage()) v *= s;
  return n;
}

inline SweepResult robustness_sweep(const ModelBundle& model, const Dataset& test, std::vector<double> scales,
                                    int missing, const OracleClassifier& oracle, const NoiseSource& noise,
                                    std::uint64_t corruption_seed) {
  std::sort(scales.begin(), scales.end());
  if (scales.empty() || scales.front() != 0.0) throw PreconditionError("robustness_sweep: scale grid must include 0");
  SweepResult res;
  res.method = to_string(model.spec.method);
  res.missing = missing;
  res.scales = scales;
  std::set<int> cond;
  for (std::size_t m = 0; m < test.modalities(); ++m)
    if (static_cast<int>(m) != missing) cond.insert(static_cast<int>(m));
  res.noised.assign(cond.begin(), cond.end());

  const auto clean = test.select(cond);
  std::map<int, Tensor> noise_for;
  for (int m : cond) noise_for.emplace(m, corruption_noise(oracle.prototypes(), static_cast<std::size_t>(m), test.size(), corruption_seed));

  for (double s : scales) {
    std::vector<double> row;
    for (int m : res.noised) {
      auto observed = clean;
      observed[m] = corrupt_rows(clean.at(m), s, noise_for.at(m));
      row.push_back(generation_quality(model, observed, test.labels, {missing}, oracle, noise));
    }
    res.min_gq.push_back(*std::min_element(row.begin(), row.end()));
    res.gq.push_back(std::move(row));
  }
  return res;
}

struct CollapseDiagnostic {
  std::vector<int> modalities;
  std::vector<double> sensitivity;  // GQ(clean) - GQ(modality fully noised)
  double clean_gq = 0.0;
  double score = 0.0;               // max / min sensitivity; larger means more collapse
  bool defined = true;
};

/// Sensitivities below this are treated as this, bounding the ratio.
inline constexpr double kSensitivityFloor = 0.01;

inline CollapseDiagnostic collapse_from_sensitivities(std::vector<int> modalities, std::vector<double> sensitivity,
                                                      double clean_gq) {
  CollapseDiagnostic d{std::move(modalities), std::move(sensitivity), clean_gq, 0.0, clean_gq > 0.0};
  if (!d.defined || d.sensitivity.empty()) {
    d.defined = false;
    return d;
  }
  const auto [lo, hi] = std::minmax_element(d.sensitivity.begin(), d.sensitivity.end());
  d.score = std::max(*hi, kSensitivityFloor) / std::max(*lo, kSensitivityFloor);
  return d;
}

inline CollapseDiagnostic collapse_diagnostic(const ModelBundle& model, const Dataset& test, int missing,
                                              const OracleClassifier& oracle, const NoiseSource& noise,
                                              std::uint64_t corruption_seed) {
  SweepResult sweep = robustness_sweep(model, test, {0.0, 1.0}, missing, oracle, noise, corruption_seed);
  std::vector<double> sens;
  for (std::size_t k = 0; k < sweep.noised.size(); ++k) sens.push_back(sweep.gq[0][k] - sweep.gq[1][k]);
  return collapse_from_sensitivities(sweep.noised, std::move(sens), sweep.gq[0].empty() ? 0.0 : sweep.gq[0][0]);
}

}  // namespace graphpl
