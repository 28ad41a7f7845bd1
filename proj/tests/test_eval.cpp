// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "graphpl/eval.hpp"
#include "support/oracles.hpp"
#include "support/suites.hpp"

using namespace graphpl;
namespace gt = graphpl::testing;
using graphpl::testing::detail_suite::small_spec;

namespace {

struct Fixture {
  SyntheticSpec data;
  Prototypes protos;
  Dataset test;

  explicit Fixture(std::size_t dim = 5, std::size_t n = 400) {
    data.dim = dim;
    data.seed = 4;
    protos = make_prototypes(data);
    Rng rng(8);
    test = generate(data, protos, n, rng);
  }
};

}  // namespace

TEST(Gq, GroundTruthScoresOne) {
  Fixture f;
  OracleClassifier oracle(f.protos);
  EXPECT_EQ(score_imputations({{1, f.test.views[1]}, {2, f.test.views[2]}}, f.test.labels, oracle), 1.0);
}

TEST(Gq, PureNoiseScoresChance) {
  Fixture f(32, 3000);
  OracleClassifier oracle(f.protos);
  Tensor noise = corruption_noise(f.protos, 0, f.test.size(), 17);
  EXPECT_NEAR(score_imputations({{0, noise}}, f.test.labels, oracle), 0.10, 0.03);
}

TEST(Gq, MonotoneUnderGroundTruthSubstitution) {
  Fixture f(32, 500);
  OracleClassifier oracle(f.protos);
  Tensor imputed = corruption_noise(f.protos, 2, f.test.size(), 3);
  double last = score_imputations({{2, imputed}}, f.test.labels, oracle);
  for (std::size_t r = 0; r < f.test.size(); r += 50) {
    for (std::size_t k = r; k < r + 50; ++k)
      for (std::size_t j = 0; j < f.data.dim; ++j) imputed.at(k, j) = f.test.views[2].at(k, j);
    const double now = score_imputations({{2, imputed}}, f.test.labels, oracle);
    EXPECT_GE(now, last);
    last = now;
  }
  EXPECT_EQ(last, 1.0);
}

TEST(Gq, NothingMissingAndEmptyTestSet) {
  Fixture f;
  OracleClassifier oracle(f.protos);
  Rng rng(1);
  ModelBundle b = ModelBundle::create(small_spec(FusionMethod::kPoe), {0, 1, 2}, rng);
  EXPECT_EQ(generation_quality(b, f.test, {}, oracle, NoiseSource(1)), 1.0);
  EXPECT_THROW(generation_quality(b, f.test.select({0}), std::vector<int>{}, {1}, oracle, NoiseSource(1)),
               PreconditionError);
}

TEST(Gq, ValueLiesInUnitInterval) {
  Fixture f;
  OracleClassifier oracle(f.protos);
  for (auto method : {FusionMethod::kGraph, FusionMethod::kPoe}) {
    Rng rng(2);
    ModelBundle b = ModelBundle::create(small_spec(method), {0, 1, 2}, rng);
    const double gq = leave_one_out_gq(b, f.test, oracle, NoiseSource(1));
    EXPECT_GE(gq, 0.0);
    EXPECT_LE(gq, 1.0);
  }
}

TEST(Probe, OneHotFeaturesAreLearnedPerfectly) {
  const std::size_t n = 200, k = 4;
  Tensor x(Shape{n, k});
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % k);
    x.at(i, i % k) = 1.0;
  }
  auto r = probe_accuracy(x, y, x, y, k);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_FALSE(r.degenerate);
}

TEST(Probe, ConstantFeaturesGiveTheMajorityRate) {
  const std::size_t n = 100;
  Tensor x(Shape{n, 3}, 1.0);
  std::vector<int> y(n, 0);
  for (std::size_t i = 0; i < 30; ++i) y[i] = 1;
  auto r = probe_accuracy(x, y, x, y, 2);
  EXPECT_NEAR(r.accuracy, 0.70, 1e-12);
}

TEST(Probe, SingleClassTrainingSplitIsFlagged) {
  Tensor x(Shape{10, 2}, 0.5);
  std::vector<int> y(10, 3);
  auto r = probe_accuracy(x, y, x, y, 5);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(Probe, FitIsDeterministic) {
  Rng rng(5);
  Tensor x = gt::uniform_tensor(Shape{80, 6}, rng);
  std::vector<int> y(80);
  for (std::size_t i = 0; i < 80; ++i) y[i] = x.at(i, 0) + x.at(i, 3) > 0 ? 1 : 0;
  EXPECT_EQ(probe_accuracy(x, y, x, y, 2).accuracy, probe_accuracy(x, y, x, y, 2).accuracy);
}

TEST(Probe, SplitIsSeededAndDisjoint) {
  Rng a(3), b(3);
  auto [tr, te] = train_test_split(50, a);
  EXPECT_EQ(tr, train_test_split(50, b).first);
  EXPECT_EQ(tr.size(), 40u);
  std::set<std::size_t> all(tr.begin(), tr.end());
  all.insert(te.begin(), te.end());
  EXPECT_EQ(all.size(), 50u);
}

TEST(Sweep, CleanPointDoesNotDependOnWhichModalityIsNoised) {
  Fixture f;
  OracleClassifier oracle(f.protos);
  for (auto method : {FusionMethod::kGraph, FusionMethod::kPoe}) {
    Rng rng(6);
    ModelBundle b = ModelBundle::create(small_spec(method), {0, 1, 2}, rng);
    SweepResult s = robustness_sweep(b, f.test, {1.0, 0.0, 0.5}, 2, oracle, NoiseSource(1), 9);
    EXPECT_EQ(s.scales, (std::vector<double>{0.0, 0.5, 1.0}));
    EXPECT_EQ(s.noised, (std::vector<int>{0, 1}));
    EXPECT_EQ(s.gq[0][0], s.gq[0][1]);
    for (std::size_t i = 0; i < s.scales.size(); ++i)
      EXPECT_EQ(s.min_gq[i], std::min(s.gq[i][0], s.gq[i][1]));
    EXPECT_EQ(s.min_at(0.5), s.min_gq[1]);
    EXPECT_EQ(s.gq_at(1.0, 1), s.gq[2][1]);
    EXPECT_THROW(s.min_at(0.25), PreconditionError);
  }
}

TEST(Sweep, GridWithoutZeroIsRejected) {
  Fixture f;
  OracleClassifier oracle(f.protos);
  Rng rng(1);
  ModelBundle b = ModelBundle::create(small_spec(FusionMethod::kPoe), {0, 1, 2}, rng);
  EXPECT_THROW(robustness_sweep(b, f.test, {0.5, 1.0}, 2, oracle, NoiseSource(1), 1), PreconditionError);
}

TEST(Collapse, IgnoredModalityHasZeroSensitivity) {
  Fixture f;
  OracleClassifier oracle(f.protos);
  Rng rng(7);
  ModelBundle b = ModelBundle::create(small_spec(FusionMethod::kPoe), {0, 1, 2}, rng);
  // zero weights make modality 0's posterior independent of its input
  b.vaes.at(0).encoder.visit([](Parameter& p) {
    if (p.name.ends_with(".weight")) p.mutable_value().fill(0.0);
  });
  SweepResult s = robustness_sweep(b, f.test, {0.0, 0.5, 1.0}, 2, oracle, NoiseSource(1), 3);
  for (std::size_t i = 0; i < s.scales.size(); ++i) EXPECT_EQ(s.gq[i][0], s.gq[0][0]);
  auto d = collapse_diagnostic(b, f.test, 2, oracle, NoiseSource(1), 3);
  if (d.defined) {
    EXPECT_EQ(d.sensitivity[0], 0.0);
  }
}

TEST(Collapse, ScoreFromSensitivities) {
  auto d = collapse_from_sensitivities({0, 1}, {0.4, 0.1}, 0.8);
  EXPECT_TRUE(d.defined);
  EXPECT_NEAR(d.score, 4.0, 1e-12);
  EXPECT_NEAR(collapse_from_sensitivities({0, 1}, {0.5, 0.0}, 0.8).score, 50.0, 1e-12);
  EXPECT_NEAR(collapse_from_sensitivities({0, 1}, {-0.2, 0.001}, 0.8).score, 1.0, 1e-12);
  EXPECT_GE(collapse_from_sensitivities({0, 1, 2}, {0.3, 0.2, 0.25}, 0.5).score, 1.0);
}

TEST(Collapse, UndefinedWithoutCleanSignal) {
  EXPECT_FALSE(collapse_from_sensitivities({0, 1}, {0.0, 0.0}, 0.0).defined);
  EXPECT_FALSE(collapse_from_sensitivities({}, {}, 0.5).defined);
}

TEST(Rq, EveryClientIsScored) {
  SyntheticSpec data;
  data.dim = 5;
  Prototypes protos = make_prototypes(data);
  Rng rng(9);
  std::vector<ClientState> clients(2);
  for (int i = 0; i < 2; ++i) {
    clients[i].client_id = i;
    clients[i].observed = i == 0 ? std::set<int>{0, 1} : std::set<int>{2};
    clients[i].shard = generate(data, protos, 60, rng);
    clients[i].bundle = ModelBundle::create(small_spec(FusionMethod::kGraph), clients[i].observed, rng);
  }
  auto rq = representation_quality(clients, 3, data.classes, NoiseSource(1), 4);
  ASSERT_EQ(rq.clients.size(), 2u);
  EXPECT_EQ(rq.mean, (rq.clients[0].accuracy + rq.clients[1].accuracy) / 2.0);
  for (const auto& c : rq.clients) {
    EXPECT_GE(c.accuracy, 0.0);
    EXPECT_LE(c.accuracy, 1.0);
  }
}
