// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "graphpl/data.hpp"
#include "graphpl/training.hpp"

namespace graphpl {

/// Server-side failure combining client uploads.
class AggregationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or unreadable checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using NamedTensors = std::map<std::string, Tensor>;

/// One client's upload for a global round.
struct ParamPackage {
  int client_id = 0;
  double weight = 0.0;
  NamedTensors tensors;
};

/// Server copy of every modality's VAE and the fusion stack.
struct GlobalModel {
  NamedTensors tensors;
  std::size_t round_index = 0;
};

/// Observed-modality sets for `n_clients` clients. Each client keeps at least
/// one modality and every modality is observed somewhere; failing draws are
/// repeated up to `max_retries` times.
inline std::vector<std::set<int>> build_patchwork(std::size_t n_clients, std::size_t modalities, const DropPolicy& policy,
                                                  Rng& rng, std::size_t max_retries = 1000) {
  if (modalities < 2) throw PreconditionError("build_patchwork: need at least two modalities");
  if (n_clients < 1) throw PreconditionError("build_patchwork: need at least one client");
  policy.validate(modalities);

  std::vector<int> all(modalities);
  std::iota(all.begin(), all.end(), 0);
  std::bernoulli_distribution drop(policy.probability);

  for (std::size_t attempt = 0; attempt < max_retries; ++attempt) {
    std::vector<std::set<int>> sets(n_clients);
    bool ok = true;
    for (auto& s : sets) {
      if (policy.mode == DropPolicy::Mode::kExactly) {
        std::vector<int> order = all;
        std::shuffle(order.begin(), order.end(), rng);
        s.insert(order.begin() + static_cast<std::ptrdiff_t>(policy.count), order.end());
      } else {
        for (int m : all)
          if (!drop(rng)) s.insert(m);
      }
      if (s.empty()) ok = false;
    }
    std::set<int> covered;
    for (const auto& s : sets) covered.insert(s.begin(), s.end());
    if (ok && covered.size() == modalities) return sets;
  }
  throw ConfigError("build_patchwork: no valid patchwork after " + std::to_string(max_retries) +
                    " draws; the drop policy is too aggressive");
}

/// Copies a model's named tensors.
inline NamedTensors snapshot(const ModelBundle& bundle, bool include_shared_decoders) {
  NamedTensors out;
  auto take = [&](const Parameter& p) { out.emplace(p.name, p.value()); };
  if (include_shared_decoders) {
    bundle.visit_all(take);
  } else {
    bundle.visit_trainable(take);
  }
  return out;
}

/// Deep copy of the client's observed-modality VAEs and the fusion stack,
/// weighted by its sample count.
inline ParamPackage package(const ClientState& client) {
  return {client.client_id, static_cast<double>(client.sample_count()), snapshot(client.bundle, false)};
}

/// Sample-weighted average per name over the packages that carry it. Names no
/// package carries keep their previous value. Accumulation runs in ascending
/// client id, so package order does not affect the bits of the result.
inline GlobalModel fedavg(std::vector<ParamPackage> packages, const GlobalModel& prev) {
  if (packages.empty()) throw PreconditionError("fedavg: no packages");
  std::sort(packages.begin(), packages.end(), [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
  for (std::size_t i = 1; i < packages.size(); ++i) {
    if (packages[i].client_id == packages[i - 1].client_id) {
      throw AggregationError("fedavg: duplicate package from client " + std::to_string(packages[i].client_id));
    }
  }

  GlobalModel next{prev.tensors, prev.round_index + 1};
  std::map<std::string, std::vector<const ParamPackage*>> contributors;
  for (const auto& p : packages)
    for (const auto& [name, _] : p.tensors) contributors[name].push_back(&p);

  for (const auto& [name, from] : contributors) {
    const Tensor& first = from.front()->tensors.at(name);
    double total = 0.0;
    bool identical = true;
    for (const ParamPackage* p : from) {
      const Tensor& t = p->tensors.at(name);
      if (t.shape() != first.shape()) {
        throw AggregationError("fedavg: tensor '" + name + "' has shape " + shape_str(t.shape()) + " from client " +
                               std::to_string(p->client_id) + " but " + shape_str(first.shape()) + " elsewhere");
      }
      if (!(p->weight > 0.0)) throw AggregationError("fedavg: non-positive weight from client " + std::to_string(p->client_id));
      total += p->weight;
      identical = identical && t == first;
    }
    if (auto it = prev.tensors.find(name); it != prev.tensors.end() && it->second.shape() != first.shape()) {
      throw AggregationError("fedavg: tensor '" + name + "' changed shape from " + shape_str(it->second.shape()) +
                             " to " + shape_str(first.shape()));
    }
    if (identical) {
      next.tensors[name] = first;
      continue;
    }
    Tensor acc(first.shape());
    for (const ParamPackage* p : from) {
      const double w = p->weight / total;
      const Tensor& t = p->tensors.at(name);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * t[i];
    }
    next.tensors[name] = std::move(acc);
  }
  return next;
}

/// Overwrites a bundle's parameters (including cached decoders) with the
/// global values of the same name.
inline void load_into(const GlobalModel& global, ModelBundle& bundle) {
  bundle.visit_all([&](Parameter& p) {
    auto it = global.tensors.find(p.name);
    if (it == global.tensors.end()) throw PreconditionError("broadcast: global model lacks '" + p.name + "'");
    if (it->second.shape() != p.value().shape()) {
      throw DimensionError("broadcast: '" + p.name + "' has global shape " + shape_str(it->second.shape()) +
                           " but local shape " + shape_str(p.value().shape()));
    }
    p.mutable_value() = it->second;
  });
}

inline void broadcast(const GlobalModel& global, std::span<ClientState> clients) {
  for (auto& c : clients) load_into(global, c.bundle);
}

/// Bundle holding a trainable VAE for every modality, loaded from `global`.
inline ModelBundle full_bundle(const ModelSpec& spec, const GlobalModel& global) {
  std::set<int> all;
  for (std::size_t m = 0; m < spec.modalities; ++m) all.insert(static_cast<int>(m));
  Rng rng(0);
  ModelBundle b = ModelBundle::create(spec, all, rng);
  load_into(global, b);
  return b;
}

/// Server-side initial model, deterministic in `seed`.
inline GlobalModel init_global(const ModelSpec& spec, std::uint64_t seed) {
  std::set<int> all;
  for (std::size_t m = 0; m < spec.modalities; ++m) all.insert(static_cast<int>(m));
  Rng rng = derive_rng(seed, {0x676c6f62616cULL});
  return {snapshot(ModelBundle::create(spec, all, rng), true), 0};
}

inline std::uint64_t client_seed(std::uint64_t master_seed, int client_id) {
  Rng rng = derive_rng(master_seed, {0x636c69656e74ULL, static_cast<std::uint64_t>(client_id)});
  return rng();
}

/// Clients with private seeds split from `master_seed`, loaded from `global`.
inline std::vector<ClientState> make_clients(const ModelSpec& spec, const std::vector<std::set<int>>& observed,
                                             std::vector<Dataset> shards, const GlobalModel& global,
                                             std::uint64_t master_seed) {
  if (observed.size() != shards.size()) throw PreconditionError("make_clients: observed sets and shards differ in count");
  std::vector<ClientState> clients;
  clients.reserve(observed.size());
  for (std::size_t i = 0; i < observed.size(); ++i) {
    ClientState c;
    c.client_id = static_cast<int>(i);
    c.observed = observed[i];
    c.shard = std::move(shards[i]);
    c.seed = client_seed(master_seed, c.client_id);
    c.rng = derive_rng(c.seed, {0x6261746368ULL});
    Rng init(0);
    c.bundle = ModelBundle::create(spec, c.observed, init);
    load_into(global, c.bundle);
    clients.push_back(std::move(c));
  }
  return clients;
}

struct FederationConfig {
  std::size_t global_rounds = 20;
  TrainConfig train;
  std::size_t workers = 1;

  void validate() const {
    if (global_rounds < 1) throw ConfigError("global_rounds must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    train.validate();
  }
};

struct ClientRoundMetrics {
  std::size_t round = 0;
  int client_id = 0;
  double mean_local_loss = 0.0;
};

struct FederationResult {
  GlobalModel global;
  std::vector<ClientRoundMetrics> metrics;

  /// Mean over clients of the mean local loss in a 1-based round.
  double round_mean_loss(std::size_t round) const {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& m : metrics)
      if (m.round == round) {
        s += m.mean_local_loss;
        ++n;
      }
    return n ? s / static_cast<double>(n) : 0.0;
  }
};

/// Runs `fn(i)` for every i in [0, n) on up to `workers` threads.
inline void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Called after each global round with the 1-based round number.
using RoundHook = std::function<void(std::size_t round, const GlobalModel&, std::span<ClientState>)>;

/// Alternates local rounds on every client with FedAvg + broadcast.
inline FederationResult run_federation(std::vector<ClientState>& clients, const FederationConfig& cfg,
                                       GlobalModel global, const RoundHook& hook = {}) {
  cfg.validate();
  if (clients.empty()) throw PreconditionError("run_federation: no clients");
  FederationResult result;
  for (std::size_t r = 1; r <= cfg.global_rounds; ++r) {
    std::vector<LocalRoundResult> rounds(clients.size());
    parallel_for(clients.size(), cfg.workers, [&](std::size_t i) { rounds[i] = local_round(clients[i], cfg.train); });

    std::vector<ParamPackage> packages;
    for (std::size_t i = 0; i < clients.size(); ++i) {
      packages.push_back(package(clients[i]));
      result.metrics.push_back({r, clients[i].client_id, rounds[i].mean_loss()});
    }
    global = fedavg(std::move(packages), global);
    broadcast(global, clients);
    if (hook) hook(r, global, clients);
  }
  result.global = std::move(global);
  return result;
}

// Checkpoint: "GPL1", u32 count, then per tensor u32 name length, UTF-8 name,
// u32 rank, u32 dims, f64 values; all little-endian.
namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

inline void put_f64(std::ostream& os, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const GlobalModel& model) {
  os.write("GPL1", 4);
  detail::put_u32(os, static_cast<std::uint32_t>(model.tensors.size()));
  for (const auto& [name, t] : model.tensors) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (double v : t.storage()) detail::put_f64(os, v);
  }
}

/// The format does not carry the round index; it is restored as 0.
inline GlobalModel read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "GPL1") throw CheckpointError("not a GPL1 checkpoint");
  GlobalModel model;
  const std::uint32_t count = detail::get_u32(is);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(detail::get_u32(is), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size()))) throw CheckpointError("checkpoint truncated");
    Shape shape(detail::get_u32(is));
    for (auto& d : shape) d = detail::get_u32(is);
    Tensor t(shape);
    for (double& v : t.storage()) v = detail::get_f64(is);
    if (!model.tensors.emplace(std::move(name), std::move(t)).second) throw CheckpointError("duplicate tensor name");
  }
  return model;
}

inline void save_checkpoint(const std::string& path, const GlobalModel& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  write_checkpoint(os, model);
  if (!os) throw CheckpointError("failed writing '" + path + "'");
}

inline GlobalModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open '" + path + "'");
  return read_checkpoint(is);
}

/// Lower-case hex SHA-256.
inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

/// SHA-256 of the model's checkpoint encoding.
inline std::string checksum(const GlobalModel& model) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, model);
  return sha256_hex(os.str());
}

}  // namespace graphpl
