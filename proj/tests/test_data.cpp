// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "graphpl/data.hpp"
#include "graphpl/eval.hpp"

using namespace graphpl;

namespace {

SyntheticSpec spec_with_seed(std::uint64_t seed) {
  SyntheticSpec s;
  s.seed = seed;
  return s;
}

}  // namespace

TEST(Prototypes, DeterministicAndSeparated) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SyntheticSpec s = spec_with_seed(seed);
    Prototypes a = make_prototypes(s), b = make_prototypes(s);
    for (std::size_t m = 0; m < s.modalities; ++m) {
      EXPECT_EQ(a.per_modality[m], b.per_modality[m]);
      EXPECT_GT(a.min_pairwise_distance(m), 6.0 * s.sigma);
    }
  }
  EXPECT_NE(make_prototypes(spec_with_seed(1)).per_modality[0], make_prototypes(spec_with_seed(2)).per_modality[0]);
}

TEST(Prototypes, RescaledWhenDrawTooTight) {
  SyntheticSpec s;
  s.prototype_scale = 1e-3;
  Prototypes p = make_prototypes(s);
  for (std::size_t m = 0; m < s.modalities; ++m) EXPECT_GT(p.min_pairwise_distance(m), s.margin * s.sigma);
}

TEST(Spec, MarginMustExceedSix) {
  SyntheticSpec s;
  s.margin = 6.0;
  EXPECT_THROW(s.validate(), ConfigError);
}

TEST(Generate, ZeroNoiseReturnsPrototypes) {
  SyntheticSpec s;
  s.sigma = 0.0;
  Prototypes p = make_prototypes(s);
  Rng rng(1);
  Dataset ds = generate(s, p, 50, rng);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t m = 0; m < s.modalities; ++m)
      for (std::size_t j = 0; j < s.dim; ++j)
        EXPECT_EQ(ds.views[m].at(i, j), p.per_modality[m].at(static_cast<std::size_t>(ds.labels[i]), j));
}

TEST(Generate, SameSeedSameData) {
  SyntheticSpec s;
  Prototypes p = make_prototypes(s);
  Rng a(9), b(9);
  Dataset x = generate(s, p, 100, a), y = generate(s, p, 100, b);
  EXPECT_EQ(x.labels, y.labels);
  for (std::size_t m = 0; m < s.modalities; ++m) EXPECT_EQ(x.views[m], y.views[m]);
}

TEST(Generate, OracleIsNearPerfect) {
  SyntheticSpec s;
  Prototypes p = make_prototypes(s);
  Rng rng(3);
  Dataset ds = generate(s, p, 1000, rng);
  OracleClassifier oracle(p);
  for (std::size_t m = 0; m < s.modalities; ++m) EXPECT_GE(oracle.accuracy(m, ds.views[m], ds.labels), 0.99);
}

TEST(Generate, LabelsRoughlyUniform) {
  SyntheticSpec s;
  Prototypes p = make_prototypes(s);
  Rng rng(4);
  Dataset ds = generate(s, p, 5000, rng);
  std::vector<std::size_t> count(s.classes, 0);
  for (int l : ds.labels) ++count[static_cast<std::size_t>(l)];
  for (auto c : count) {
    EXPECT_GE(c, 400u);
    EXPECT_LE(c, 600u);
  }
}

TEST(Generate, RejectsBadInputs) {
  SyntheticSpec s;
  Prototypes p = make_prototypes(s);
  Rng rng(1);
  EXPECT_THROW(generate(s, p, 0, rng), PreconditionError);
  Prototypes tight = p;
  tight.per_modality[1].fill(0.0);
  EXPECT_THROW(generate(s, tight, 5, rng), PreconditionError);
}

TEST(Generate, ViewsShareTheLabel) {
  SyntheticSpec s;
  Prototypes p = make_prototypes(s);
  Rng rng(6);
  Dataset ds = generate(s, p, 200, rng);
  OracleClassifier oracle(p);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Sample smp = ds.sample(i);
    for (const auto& [m, v] : smp.views) EXPECT_EQ(oracle.classify(static_cast<std::size_t>(m), v), smp.label);
  }
}

TEST(Split, FullClassesIsHomogeneous) {
  std::vector<int> labels(1000);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  Rng rng(1);
  auto split = split_heterogeneous(labels, 10, 5, 10, rng);
  for (const auto& cls : split.classes) EXPECT_EQ(cls.size(), 10u);
  for (const auto& idx : split.indices) EXPECT_EQ(idx.size(), 200u);
}

TEST(Split, TwoClassesPerClientCoverAll) {
  std::vector<int> labels(500);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
  Rng rng(2);
  auto split = split_heterogeneous(labels, 10, 5, 2, rng);
  std::set<int> all;
  for (std::size_t c = 0; c < 5; ++c) {
    EXPECT_LE(split.classes[c].size(), 2u);
    all.insert(split.classes[c].begin(), split.classes[c].end());
    std::set<int> seen;
    for (auto i : split.indices[c]) seen.insert(labels[i]);
    for (int l : seen) EXPECT_TRUE(std::count(split.classes[c].begin(), split.classes[c].end(), l));
  }
  EXPECT_EQ(all.size(), 10u);
}

TEST(Split, ShardsPartitionTheSamples) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    std::vector<int> labels(300);
    std::uniform_int_distribution<int> d(0, 9);
    for (auto& l : labels) l = d(rng);
    const std::size_t clients = 2 + seed % 5;
    const std::size_t per = (10 + clients - 1) / clients + seed % 3;
    auto split = split_heterogeneous(labels, 10, clients, std::min<std::size_t>(per, 10), rng);
    std::vector<int> hits(labels.size(), 0);
    for (const auto& idx : split.indices)
      for (auto i : idx) ++hits[i];
    for (int h : hits) ASSERT_EQ(h, 1) << "seed " << seed;
  }
}

TEST(Split, DeterministicAndInfeasibleRejected) {
  std::vector<int> labels{0, 1, 2, 3, 4, 5};
  Rng a(3), b(3);
  EXPECT_EQ(split_heterogeneous(labels, 6, 3, 2, a).indices, split_heterogeneous(labels, 6, 3, 2, b).indices);
  Rng rng(1);
  EXPECT_THROW(split_heterogeneous(labels, 10, 3, 2, rng), ConfigError);
  EXPECT_THROW(split_heterogeneous(labels, 6, 3, 7, rng), ConfigError);
}

TEST(Corrupt, Endpoints) {
  std::vector<double> v{1.0, -2.0, 3.0}, n{0.5, 0.5, -1.0};
  EXPECT_EQ(corrupt(v, 0.0, n), v);
  EXPECT_EQ(corrupt(v, 1.0, n), n);
  auto mid = corrupt(v, 0.5, n);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(mid[i], 0.5 * v[i] + 0.5 * n[i]);
  EXPECT_THROW(corrupt(v, 1.5, n), DomainError);
  EXPECT_THROW(corrupt(v, -0.1, n), DomainError);
}

TEST(Corrupt, AffineInScale) {
  std::vector<double> v{1.0, 2.0}, n{-3.0, 0.25};
  for (double s : {0.1, 0.3, 0.7}) {
    auto a = corrupt(v, s, n);
    for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(a[i], v[i] + s * (n[i] - v[i]), 1e-15);
  }
}

TEST(Corrupt, FullScaleIsIndependentOfView) {
  Rng rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  const int n = 10000;
  double sxy = 0, sx = 0, sy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<double> v{g(rng)};
    double y = corrupt(v, 1.0, 1.0, rng)[0];
    sx += v[0];
    sy += y;
    sxy += v[0] * y;
    sxx += v[0] * v[0];
    syy += y * y;
  }
  const double cov = sxy / n - sx / n * sy / n;
  const double corr = cov / std::sqrt((sxx / n - sx / n * sx / n) * (syy / n - sy / n * sy / n));
  EXPECT_LT(std::abs(corr), 0.05);
}

TEST(DropPolicy, Validation) {
  EXPECT_NO_THROW(DropPolicy::exactly(2).validate(3));
  EXPECT_THROW(DropPolicy::exactly(3).validate(3), ConfigError);
  EXPECT_THROW(DropPolicy::probabilistic(1.0).validate(3), ConfigError);
  EXPECT_NO_THROW(DropPolicy::probabilistic(0.0).validate(3));
}

TEST(DatasetCsv, HeaderAndRowCount) {
  SyntheticSpec s;
  s.dim = 3;
  Prototypes p = make_prototypes(s);
  Rng rng(1);
  Dataset ds = generate(s, p, 4, rng);
  std::ostringstream os;
  write_dataset_csv(os, ds);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "sample_id,label,modality_id,v0,v1,v2");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 12);
}
