// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "graphpl/federation.hpp"
#include "support/suites.hpp"

using namespace graphpl;
namespace gt = graphpl::testing;
using graphpl::testing::detail_suite::small_spec;

namespace {

ParamPackage pkg(int id, double w, std::map<std::string, Tensor> t) { return {id, w, std::move(t)}; }

std::vector<ClientState> small_federation(FusionMethod method, std::uint64_t seed, GlobalModel& global) {
  ModelSpec spec = small_spec(method);
  SyntheticSpec data;
  data.dim = 5;
  data.seed = seed;
  Prototypes protos = make_prototypes(data);
  Rng rng(seed);
  std::vector<Dataset> shards;
  for (int i = 0; i < 4; ++i) shards.push_back(generate(data, protos, 60, rng));
  auto observed = build_patchwork(4, 3, DropPolicy::exactly(1), rng);
  global = init_global(spec, seed);
  return make_clients(spec, observed, std::move(shards), global, seed);
}

}  // namespace

TEST(FedAvg, WeightedMean) {
  GlobalModel prev;
  auto g = fedavg({pkg(0, 1, {{"w", Tensor::row({0, 0})}}), pkg(1, 3, {{"w", Tensor::row({4, 8})}})}, prev);
  EXPECT_EQ(g.tensors.at("w"), Tensor::row({3, 6}));
  EXPECT_EQ(g.round_index, 1u);
}

TEST(FedAvg, SingleContributorIsCopiedExactly) {
  GlobalModel prev;
  Tensor t = Tensor::row({0.1, 1.0 / 3.0});
  auto g = fedavg({pkg(2, 0.7, {{"w", t}})}, prev);
  EXPECT_EQ(g.tensors.at("w"), t);
}

TEST(FedAvg, UncarriedNamesKeepPreviousValue) {
  GlobalModel prev{{{"a", Tensor::row({1.0})}, {"b", Tensor::row({2.0})}}, 4};
  auto g = fedavg({pkg(0, 1, {{"a", Tensor::row({5.0})}})}, prev);
  EXPECT_EQ(g.tensors.at("a"), Tensor::row({5.0}));
  EXPECT_EQ(g.tensors.at("b"), Tensor::row({2.0}));
  EXPECT_EQ(g.round_index, 5u);
}

TEST(FedAvg, PackageOrderDoesNotChangeBits) {
  Rng rng(3);
  std::vector<ParamPackage> ps;
  for (int i = 0; i < 6; ++i)
    ps.push_back(pkg(i, 1.0 + i, {{"w", gt::uniform_tensor(Shape{4, 4}, rng)}}));
  GlobalModel prev;
  auto forward = fedavg(ps, prev);
  for (int k = 0; k < 10; ++k) {
    std::shuffle(ps.begin(), ps.end(), rng);
    EXPECT_EQ(fedavg(ps, prev).tensors.at("w"), forward.tensors.at("w"));
  }
}

TEST(FedAvg, Errors) {
  GlobalModel prev;
  EXPECT_THROW(fedavg({}, prev), PreconditionError);
  EXPECT_THROW(fedavg({pkg(1, 1, {{"w", Tensor::row({1.0})}}), pkg(1, 1, {{"w", Tensor::row({1.0})}})}, prev),
               AggregationError);
  EXPECT_THROW(fedavg({pkg(0, 1, {{"w", Tensor::row({1.0})}}), pkg(1, 1, {{"w", Tensor::row({1.0, 2.0})}})}, prev),
               AggregationError);
  EXPECT_THROW(fedavg({pkg(0, 0, {{"w", Tensor::row({1.0})}})}, prev), AggregationError);
  GlobalModel shaped{{{"w", Tensor::row({1.0, 2.0})}}, 0};
  EXPECT_THROW(fedavg({pkg(0, 1, {{"w", Tensor::row({1.0})}})}, shaped), AggregationError);
}

TEST(Patchwork, ExactlyOneDropIsValid) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(s);
    auto sets = build_patchwork(5, 3, DropPolicy::exactly(1), rng);
    ASSERT_EQ(sets.size(), 5u);
    std::set<int> covered;
    for (const auto& o : sets) {
      EXPECT_EQ(o.size(), 2u);
      covered.insert(o.begin(), o.end());
    }
    EXPECT_EQ(covered, (std::set<int>{0, 1, 2}));
  }
}

TEST(Patchwork, ProbabilisticDrawsStayValid) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    Rng rng(s);
    auto sets = build_patchwork(4, 4, DropPolicy::probabilistic(0.6), rng);
    std::set<int> covered;
    for (const auto& o : sets) {
      EXPECT_FALSE(o.empty());
      covered.insert(o.begin(), o.end());
    }
    EXPECT_EQ(covered.size(), 4u);
  }
}

TEST(Patchwork, Errors) {
  Rng rng(1);
  EXPECT_THROW(build_patchwork(1, 3, DropPolicy::exactly(2), rng, 20), ConfigError);
  EXPECT_THROW(build_patchwork(3, 3, DropPolicy::exactly(3), rng), ConfigError);
  EXPECT_THROW(build_patchwork(3, 1, DropPolicy::exactly(0), rng), PreconditionError);
  Rng a(7), b(7);
  EXPECT_EQ(build_patchwork(5, 3, DropPolicy::exactly(1), a), build_patchwork(5, 3, DropPolicy::exactly(1), b));
}

TEST(Broadcast, ClientsMatchTheGlobalModel) {
  GlobalModel global;
  auto clients = small_federation(FusionMethod::kGraph, 1, global);
  for (const auto& c : clients) {
    c.bundle.visit_all([&](const Parameter& p) { EXPECT_EQ(p.value(), global.tensors.at(p.name)) << p.name; });
  }
  GlobalModel broken = global;
  broken.tensors.erase(broken.tensors.begin());
  EXPECT_THROW(broadcast(broken, clients), PreconditionError);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelSpec spec = small_spec(FusionMethod::kGraph);
  GlobalModel g = init_global(spec, 9);
  g.tensors["odd"] = Tensor::row({-0.0, 1e-310, 1.0 / 3.0});
  std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
  write_checkpoint(ss, g);
  GlobalModel back = read_checkpoint(ss);
  ASSERT_EQ(back.tensors.size(), g.tensors.size());
  for (const auto& [name, t] : g.tensors) {
    ASSERT_EQ(back.tensors.at(name).shape(), t.shape());
    EXPECT_EQ(std::memcmp(back.tensors.at(name).storage().data(), t.storage().data(), t.size() * sizeof(double)), 0) << name;
  }
  EXPECT_EQ(checksum(back), checksum(g));
}

TEST(Checkpoint, FileRoundTripAndErrors) {
  auto dir = std::filesystem::temp_directory_path() / ("graphpl_ckpt_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  GlobalModel g = init_global(small_spec(FusionMethod::kPoe), 2);
  const std::string path = (dir / "m.gpl").string();
  save_checkpoint(path, g);
  EXPECT_EQ(checksum(load_checkpoint(path)), checksum(g));

  std::string bytes = gt::read_file(path);
  std::ofstream(dir / "short.gpl", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(load_checkpoint((dir / "short.gpl").string()), CheckpointError);
  std::ofstream(dir / "magic.gpl", std::ios::binary) << "GPL2" << bytes.substr(4);
  EXPECT_THROW(load_checkpoint((dir / "magic.gpl").string()), CheckpointError);
  EXPECT_THROW(load_checkpoint((dir / "absent.gpl").string()), CheckpointError);
  std::filesystem::remove_all(dir);
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Federation, WorkerCountDoesNotChangeTheResult) {
  FederationConfig cfg;
  cfg.global_rounds = 2;
  cfg.train.local_steps = 3;
  cfg.train.batch_size = 16;
  std::string reference;
  for (std::size_t workers : {1u, 2u, 4u}) {
    GlobalModel global;
    auto clients = small_federation(FusionMethod::kGraph, 3, global);
    cfg.workers = workers;
    auto result = run_federation(clients, cfg, global);
    if (reference.empty()) reference = checksum(result.global);
    EXPECT_EQ(checksum(result.global), reference) << "workers=" << workers;
  }
}

TEST(Federation, HookSeesEveryRound) {
  GlobalModel global;
  auto clients = small_federation(FusionMethod::kPoe, 4, global);
  FederationConfig cfg;
  cfg.global_rounds = 3;
  cfg.train.local_steps = 2;
  std::vector<std::size_t> rounds;
  auto result = run_federation(clients, cfg, global, [&](std::size_t r, const GlobalModel& g, std::span<ClientState>) {
    rounds.push_back(r);
    EXPECT_EQ(g.round_index, r);
  });
  EXPECT_EQ(rounds, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(result.metrics.size(), 3u * clients.size());
}

TEST(Federation, LossFallsOverRounds) {
  for (FusionMethod method : {FusionMethod::kGraph, FusionMethod::kPoe}) {
    GlobalModel global;
    auto clients = small_federation(method, 5, global);
    FederationConfig cfg;
    cfg.global_rounds = 8;
    cfg.train.local_steps = 20;
    cfg.train.batch_size = 32;
    cfg.train.learning_rate = 3e-3;
    auto result = run_federation(clients, cfg, global);
    EXPECT_LT(result.round_mean_loss(8), result.round_mean_loss(1)) << to_string(method);
  }
}

TEST(Federation, UnobservedModalitiesStayAtInit) {
  GlobalModel global;
  auto clients = small_federation(FusionMethod::kGraph, 6, global);
  std::set<int> seen;
  for (const auto& c : clients) seen.insert(c.observed.begin(), c.observed.end());
  ASSERT_EQ(seen.size(), 3u);
  // a name nobody trains: drop it from every upload and confirm it survives
  FederationConfig cfg;
  cfg.global_rounds = 1;
  cfg.train.local_steps = 1;
  global.tensors["orphan"] = Tensor::row({4.0});
  auto result = run_federation(clients, cfg, global);
  EXPECT_EQ(result.global.tensors.at("orphan"), Tensor::row({4.0}));
}
