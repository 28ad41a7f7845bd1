// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <span>
#include <vector>

#include "graphpl/numeric/random.hpp"
#include "graphpl/numeric/tensor.hpp"

namespace graphpl {

/// Shape of the synthetic multi-modal benchmark.
///
/// Every modality renders the shared class label through its own set of
/// class prototypes; a view is its prototype plus isotropic Gaussian noise.
struct SyntheticSpec {
  std::size_t modalities = 3;
  std::size_t classes = 10;
  std::size_t dim = 32;
  double sigma = 0.3;
  /// Per-coordinate standard deviation of the raw prototype draw.
  double prototype_scale = 2.0;
  /// Minimum pairwise prototype distance, in units of sigma. Must exceed 6.
  double margin = 6.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (modalities < 1) throw ConfigError("modalities must be >= 1");
    if (classes < 2) throw ConfigError("classes must be >= 2");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
    if (!(prototype_scale > 0.0)) throw ConfigError("prototype_scale must be > 0");
    if (!(margin > 6.0)) throw ConfigError("margin must be > 6 (in units of sigma)");
  }
};

/// Class prototypes, one [classes, dim] matrix per modality.
struct Prototypes {
  std::vector<Tensor> per_modality;

  std::size_t modalities() const { return per_modality.size(); }
  std::size_t classes() const { return per_modality.empty() ? 0 : per_modality[0].rows(); }
  std::size_t dim() const { return per_modality.empty() ? 0 : per_modality[0].cols(); }

  /// Root-mean-square prototype coordinate of modality m.
  double scale(std::size_t m) const {
    const Tensor& p = per_modality.at(m);
    double s = 0.0;
    for (double v : p.storage()) s += v * v;
    return std::sqrt(s / static_cast<double>(p.size()));
  }

  double min_pairwise_distance(std::size_t m) const {
    const Tensor& p = per_modality.at(m);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < p.rows(); ++a)
      for (std::size_t b = a + 1; b < p.rows(); ++b) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j) d2 += (p.at(a, j) - p.at(b, j)) * (p.at(a, j) - p.at(b, j));
        best = std::min(best, std::sqrt(d2));
      }
    return best;
  }
};

/// Deterministic in spec.seed. Each modality's prototypes are drawn
/// N(0, prototype_scale^2 I) and scaled up if needed so the closest pair is
/// at least margin * sigma apart.
inline Prototypes make_prototypes(const SyntheticSpec& spec) {
  spec.validate();
  Prototypes protos;
  for (std::size_t m = 0; m < spec.modalities; ++m) {
    Rng rng = derive_rng(spec.seed, {0x70726f746fULL, m});
    Prototypes single{{normal_tensor(Shape{spec.classes, spec.dim}, rng, spec.prototype_scale)}};
    const double required = spec.margin * spec.sigma;
    const double closest = single.min_pairwise_distance(0);
    if (closest <= required) {
      const double factor = required / closest * (1.0 + 1e-9);
      for (double& v : single.per_modality[0].storage()) v *= factor;
    }
    protos.per_modality.push_back(std::move(single.per_modality[0]));
  }
  return protos;
}

/// One paired multi-modal observation.
struct Sample {
  int label = 0;
  std::map<int, std::vector<double>> views;
};

/// Column-oriented sample collection: labels plus one [n, dim] tensor per modality.
struct Dataset {
  std::vector<int> labels;
  std::vector<Tensor> views;

  std::size_t size() const { return labels.size(); }
  std::size_t modalities() const { return views.size(); }

  Sample sample(std::size_t i) const {
    Sample s{labels.at(i), {}};
    for (std::size_t m = 0; m < views.size(); ++m) {
      auto r = views[m].row_span(i);
      s.views.emplace(static_cast<int>(m), std::vector<double>(r.begin(), r.end()));
    }
    return s;
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.labels.reserve(idx.size());
    for (auto i : idx) out.labels.push_back(labels.at(i));
    for (const auto& v : views) out.views.push_back(gather_rows(v, idx));
    return out;
  }

  /// Views of the listed modalities, keyed by modality id.
  std::map<int, Tensor> select(const std::set<int>& modalities) const {
    std::map<int, Tensor> out;
    for (int m : modalities) out.emplace(m, views.at(static_cast<std::size_t>(m)));
    return out;
  }
};

/// Draws n samples with uniform labels; view_m = P[m, label] + sigma * N(0, I).
inline Dataset generate(const SyntheticSpec& spec, const Prototypes& protos, std::size_t n, Rng& rng) {
  if (n < 1) throw PreconditionError("generate: n must be >= 1");
  if (protos.modalities() != spec.modalities || protos.classes() != spec.classes || protos.dim() != spec.dim) {
    throw DimensionError("generate: prototypes do not match the synthetic shape");
  }
  for (std::size_t m = 0; m < spec.modalities; ++m) {
    if (spec.sigma > 0.0 && !(protos.min_pairwise_distance(m) > spec.margin * spec.sigma)) {
      throw PreconditionError("generate: prototypes of modality " + std::to_string(m) + " violate the margin");
    }
  }
  Dataset ds;
  ds.labels.resize(n);
  std::uniform_int_distribution<int> label_dist(0, static_cast<int>(spec.classes) - 1);
  for (auto& l : ds.labels) l = label_dist(rng);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t m = 0; m < spec.modalities; ++m) {
    Tensor v(Shape{n, spec.dim});
    const Tensor& p = protos.per_modality.at(m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < spec.dim; ++j)
        v.at(i, j) = p.at(static_cast<std::size_t>(ds.labels[i]), j) + spec.sigma * noise(rng);
    ds.views.push_back(std::move(v));
  }
  return ds;
}

/// Class-imbalanced partition of sample indices.
struct HeterogeneousSplit {
  std::vector<std::vector<int>> classes;            // per client, ascending
  std::vector<std::vector<std::size_t>> indices;    // per client, ascending
};

/// Gives each client `classes_per_client` classes from a seeded cyclic walk
/// over a shuffled class order, so every class is held by some client. A
/// class shared by several clients has its samples dealt round-robin among
/// them; the shards are disjoint and cover every sample.
inline HeterogeneousSplit split_heterogeneous(std::span<const int> labels, std::size_t n_classes, std::size_t n_clients,
                                              std::size_t classes_per_client, Rng& rng) {
  if (n_clients == 0) throw ConfigError("split_heterogeneous: need at least one client");
  if (classes_per_client == 0 || classes_per_client > n_classes) {
    throw ConfigError("split_heterogeneous: classes_per_client must lie in [1, n_classes]");
  }
  if (n_clients * classes_per_client < n_classes) {
    throw ConfigError("split_heterogeneous: " + std::to_string(n_clients) + " clients x " +
                      std::to_string(classes_per_client) + " classes cannot cover " + std::to_string(n_classes) +
                      " classes");
  }
  std::vector<int> order(n_classes);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  HeterogeneousSplit split;
  split.classes.resize(n_clients);
  split.indices.resize(n_clients);
  std::vector<std::vector<std::size_t>> holders(n_classes);
  for (std::size_t c = 0; c < n_clients; ++c) {
    std::set<int> mine;
    for (std::size_t j = 0; j < classes_per_client; ++j) mine.insert(order[(c * classes_per_client + j) % n_classes]);
    split.classes[c].assign(mine.begin(), mine.end());
    for (int k : mine) holders[static_cast<std::size_t>(k)].push_back(c);
  }

  std::vector<std::size_t> dealt(n_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto k = static_cast<std::size_t>(labels[i]);
    if (k >= n_classes) throw PreconditionError("split_heterogeneous: label out of range");
    const auto& h = holders[k];
    split.indices[h[dealt[k]++ % h.size()]].push_back(i);
  }
  return split;
}

/// (1 - s) * view + s * noise.
inline std::vector<double> corrupt(std::span<const double> view, double s, std::span<const double> noise) {
  if (!(s >= 0.0 && s <= 1.0)) throw DomainError("corrupt: scale must lie in [0, 1]");
  if (view.size() != noise.size()) throw DimensionError("corrupt: view and noise differ in length");
  std::vector<double> out(view.size());
  for (std::size_t i = 0; i < view.size(); ++i) out[i] = (1.0 - s) * view[i] + s * noise[i];
  return out;
}

/// Interpolates towards Gaussian noise whose per-coordinate deviation is
/// `noise_scale` (the prototype scale of the modality).
inline std::vector<double> corrupt(std::span<const double> view, double s, double noise_scale, Rng& rng) {
  if (!(s >= 0.0 && s <= 1.0)) throw DomainError("corrupt: scale must lie in [0, 1]");
  std::normal_distribution<double> dist(0.0, noise_scale);
  std::vector<double> noise(view.size());
  for (double& v : noise) v = dist(rng);
  return corrupt(view, s, noise);
}

/// Row-wise corruption of a whole [n, dim] view matrix.
inline Tensor corrupt_rows(const Tensor& views, double s, const Tensor& noise) {
  require_same_shape(views, noise, "corrupt_rows");
  Tensor out(views.shape());
  for (std::size_t r = 0; r < views.rows(); ++r) {
    auto row = corrupt(views.row_span(r), s, noise.row_span(r));
    std::copy(row.begin(), row.end(), out.row_span(r).begin());
  }
  return out;
}

/// How modalities are withheld from clients when building a patchwork.
struct DropPolicy {
  enum class Mode { kProbabilistic, kExactly };
  Mode mode = Mode::kExactly;
  double probability = 0.0;  // kProbabilistic: independent per-modality drop chance
  std::size_t count = 1;     // kExactly: modalities dropped per client

  static DropPolicy probabilistic(double p) { return {Mode::kProbabilistic, p, 0}; }
  static DropPolicy exactly(std::size_t k) { return {Mode::kExactly, 0.0, k}; }

  void validate(std::size_t modalities) const {
    if (mode == Mode::kProbabilistic && !(probability >= 0.0 && probability < 1.0)) {
      throw ConfigError("drop probability must lie in [0, 1)");
    }
    if (mode == Mode::kExactly && count >= modalities) throw ConfigError("drop count must be < number of modalities");
  }
};

/// sample_id,label,modality_id,v0..v{dim-1}
inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
  const std::size_t dim = ds.views.empty() ? 0 : ds.views[0].cols();
  os << "sample_id,label,modality_id";
  for (std::size_t j = 0; j < dim; ++j) os << ",v" << j;
  os << '\n';
  os.precision(17);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t m = 0; m < ds.modalities(); ++m) {
      os << i << ',' << ds.labels[i] << ',' << m;
      for (double v : ds.views[m].row_span(i)) os << ',' << v;
      os << '\n';
    }
}

}  // namespace graphpl
