// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "graphpl/data.hpp"
#include "graphpl/fusion.hpp"
#include "graphpl/numeric/ops.hpp"
#include "graphpl/numeric/random.hpp"
#include "graphpl/vae.hpp"

namespace graphpl {

/// Raised when a client is asked to decode a modality it holds no decoder for.
class CapabilityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FusionMethod { kGraph, kPoe };

inline std::string to_string(FusionMethod m) { return m == FusionMethod::kGraph ? "graphpl" : "poe-baseline"; }

inline FusionMethod fusion_method_from_string(const std::string& s) {
  if (s == "graphpl") return FusionMethod::kGraph;
  if (s == "poe-baseline") return FusionMethod::kPoe;
  throw ConfigError("unknown method '" + s + "' (expected graphpl or poe-baseline)");
}

struct TrainConfig {
  double lambda = 1.0;
  double beta = 1.0;
  double learning_rate = 1e-3;
  std::size_t batch_size = 64;
  std::size_t local_steps = 50;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (local_steps < 1) throw ConfigError("local_steps must be >= 1");
  }
};

/// Everything needed to instantiate identical model skeletons everywhere.
struct ModelSpec {
  FusionMethod method = FusionMethod::kGraph;
  std::size_t modalities = 3;
  VaeConfig vae;
  FusionConfig fusion;

  void validate() const {
    vae.validate();
    fusion.validate();
    if (modalities < 1) throw ConfigError("modalities must be >= 1");
    if (fusion.latent_dim != vae.latent_dim) throw ConfigError("fusion latent_dim must equal the VAE latent_dim");
  }
};

/// A client's model: trainable VAEs for its observed modalities, the fusion
/// stack, and read-only decoders for modalities it never observes.
struct ModelBundle {
  ModelSpec spec;
  std::map<int, ModalityVae> vaes;
  std::map<int, Decoder> shared_decoders;
  FusionStack fusion;

  /// Observed modalities get full VAEs; all others get only a decoder slot.
  static ModelBundle create(const ModelSpec& spec, const std::set<int>& observed, Rng& rng) {
    spec.validate();
    ModelBundle b;
    b.spec = spec;
    for (std::size_t m = 0; m < spec.modalities; ++m) {
      const int id = static_cast<int>(m);
      // Always draw a full VAE so every modality's init is independent of `observed`.
      ModalityVae vae(id, spec.vae, rng);
      if (observed.contains(id)) {
        b.vaes.emplace(id, std::move(vae));
      } else {
        b.shared_decoders.emplace(id, std::move(vae.decoder));
      }
    }
    b.fusion = FusionStack(spec.fusion, rng);
    return b;
  }

  std::set<int> observed() const {
    std::set<int> s;
    for (const auto& [m, _] : vaes) s.insert(m);
    return s;
  }

  std::size_t latent_dim() const { return spec.vae.latent_dim; }

  const Decoder* decoder_for(int m) const {
    if (auto it = vaes.find(m); it != vaes.end()) return &it->second.decoder;
    if (auto it = shared_decoders.find(m); it != shared_decoders.end()) return &it->second;
    return nullptr;
  }

  const ModalityVae& vae(int m) const {
    auto it = vaes.find(m);
    if (it == vaes.end()) throw CapabilityError("no encoder for modality " + std::to_string(m) + " in this bundle");
    return it->second;
  }

  /// Parameters updated by local training: observed VAEs, plus the fusion
  /// stack when it is used.
  template <typename Fn>
  void visit_trainable(Fn&& fn) {
    for (auto& [_, v] : vaes) v.visit(fn);
    if (spec.method == FusionMethod::kGraph) fusion.visit(fn);
  }
  template <typename Fn>
  void visit_trainable(Fn&& fn) const {
    for (const auto& [_, v] : vaes) v.visit(fn);
    if (spec.method == FusionMethod::kGraph) fusion.visit(fn);
  }

  /// Trainable parameters plus the cached decoders.
  template <typename Fn>
  void visit_all(Fn&& fn) {
    visit_trainable(fn);
    for (auto& [_, d] : shared_decoders) d.visit(fn);
  }
  template <typename Fn>
  void visit_all(Fn&& fn) const {
    visit_trainable(fn);
    for (const auto& [_, d] : shared_decoders) d.visit(fn);
  }

  std::vector<Parameter*> trainable_parameters() {
    std::vector<Parameter*> out;
    visit_trainable([&](Parameter& p) { out.push_back(&p); });
    return out;
  }

  void zero_grad() {
    visit_trainable([](Parameter& p) { p.var.zero_grad(); });
  }
};

/// Adam with bias correction; moment buffers are keyed by parameter name.
class Adam {
 public:
  explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void set_learning_rate(double lr) { lr_ = lr; }
  std::size_t steps() const { return t_; }

  void step(std::span<Parameter* const> params) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Parameter* p : params) {
      if (!p->trainable || !p->var.has_grad()) continue;
      auto [it, fresh] = slots_.try_emplace(p->name);
      Slot& s = it->second;
      if (fresh || s.m.shape() != p->value().shape()) s = {Tensor(p->value().shape()), Tensor(p->value().shape())};
      Tensor& w = p->mutable_value();
      const Tensor& g = p->var.grad();
      for (std::size_t i = 0; i < w.size(); ++i) {
        s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g[i];
        s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g[i] * g[i];
        w[i] -= lr_ * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
      }
    }
  }

 private:
  struct Slot {
    Tensor m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Slot> slots_;
};

namespace detail {

struct EncodedBatch {
  std::map<int, Posterior> posteriors;
  std::map<int, Var> samples;
};

inline EncodedBatch encode_batch(const ModelBundle& bundle, const std::map<int, Tensor>& batch,
                                 const NoiseSource& noise) {
  EncodedBatch enc;
  for (const auto& [m, x] : batch) {
    Posterior post = bundle.vae(m).encode(x);
    Var z = reparameterize(post.mu, post.logvar,
                           noise.normal(NoisePurpose::kLatentSample, m, x.rows(), bundle.latent_dim()));
    enc.posteriors.emplace(m, post);
    enc.samples.emplace(m, z);
  }
  return enc;
}

/// Target latent for training: fused by the GNN from conditional samples, or
/// a reparameterised draw from the product of conditional posteriors.
inline Var training_target_latent(const ModelBundle& bundle, const EncodedBatch& enc, int target,
                                  const NoiseSource& noise) {
  if (bundle.spec.method == FusionMethod::kGraph) {
    std::map<int, Var> cond;
    for (const auto& [m, z] : enc.samples)
      if (m != target) cond.emplace(m, z);
    return fuse(bundle.fusion, cond, {target}, noise).at(target);
  }
  std::vector<Posterior> experts;
  for (const auto& [m, post] : enc.posteriors)
    if (m != target) experts.push_back(post);
  Posterior joint = poe_fuse(experts, true);
  return reparameterize(joint.mu, joint.logvar,
                        noise.normal(NoisePurpose::kPoeSample, target, joint.mu.value().rows(), bundle.latent_dim()));
}

inline Var impute_from(const ModelBundle& bundle, const std::map<int, Tensor>& batch, const EncodedBatch& enc,
                       int target, const NoiseSource& noise) {
  Var z = training_target_latent(bundle, enc, target, noise);
  const Tensor& x = batch.at(target);
  Var nll = recon_nll(bundle.vae(target).decode(z), x, bundle.spec.vae.likelihood);
  return scale(nll, 1.0 / static_cast<double>(x.rows()));
}

inline void check_batch(const std::map<int, Tensor>& batch) {
  if (batch.empty()) throw PreconditionError("empty batch");
  const std::size_t n = batch.begin()->second.rows();
  for (const auto& [m, x] : batch) {
    if (x.rows() != n || x.rows() == 0) throw DimensionError("batch modalities disagree on row count");
  }
}

}  // namespace detail

/// Reconstruction NLL of `target` from every other modality in `batch`,
/// averaged over rows. Conditionals enter fusion as reparameterised samples.
inline Var impute_loss(const ModelBundle& bundle, const std::map<int, Tensor>& batch, int target,
                       const NoiseSource& noise) {
  detail::check_batch(batch);
  if (!batch.contains(target)) throw PreconditionError("impute_loss: target modality not in batch");
  if (batch.size() < 2) throw PreconditionError("impute_loss: target is the only observed modality");
  std::map<int, Tensor> cond_batch;
  for (const auto& [m, x] : batch)
    if (m != target) cond_batch.emplace(m, x);
  detail::EncodedBatch enc = detail::encode_batch(bundle, cond_batch, noise);
  return detail::impute_from(bundle, batch, enc, target, noise);
}

struct LocalLoss {
  Var total;
  std::vector<int> targets;  // imputation targets evaluated, ascending
  std::vector<Var> impute_terms;
  std::vector<Var> single_terms;
};

/// Mean imputation loss over every choice of target plus lambda times the
/// mean single-modality loss. A client with one modality only has the
/// single-modality term.
inline LocalLoss local_loss(const ModelBundle& bundle, const std::map<int, Tensor>& batch, const TrainConfig& cfg,
                            const NoiseSource& noise) {
  detail::check_batch(batch);
  detail::EncodedBatch enc = detail::encode_batch(bundle, batch, noise);
  VaeConfig vcfg = bundle.spec.vae;
  vcfg.beta = cfg.beta;

  LocalLoss out;
  for (const auto& [m, x] : batch) {
    out.single_terms.push_back(
        single_loss_from(bundle.vae(m).decoder, x, enc.posteriors.at(m), enc.samples.at(m), vcfg));
  }
  Var single_mean = average(out.single_terms);
  if (batch.size() == 1) {
    out.total = single_mean;
    return out;
  }
  for (const auto& [m, _] : batch) {
    out.targets.push_back(m);
    out.impute_terms.push_back(detail::impute_from(bundle, batch, enc, m, noise));
  }
  out.total = add(average(out.impute_terms), scale(single_mean, cfg.lambda));
  return out;
}

/// Trainer-side state of one participant.
struct ClientState {
  int client_id = 0;
  std::set<int> observed;
  Dataset shard;
  ModelBundle bundle;
  Adam optimizer;
  std::uint64_t seed = 0;
  Rng rng;
  std::uint64_t steps_taken = 0;

  std::size_t sample_count() const { return shard.size(); }
};

struct LocalRoundResult {
  std::vector<double> losses;

  double mean_loss() const {
    return losses.empty() ? 0.0 : std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(losses.size());
  }
};

/// Draws a minibatch of the client's observed modalities.
inline std::map<int, Tensor> sample_batch(const ClientState& client, std::size_t batch_size, Rng& rng) {
  const std::size_t n = client.shard.size();
  std::vector<std::size_t> idx;
  if (n <= batch_size) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  } else {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::sample(all.begin(), all.end(), std::back_inserter(idx), static_cast<std::ptrdiff_t>(batch_size), rng);
  }
  std::map<int, Tensor> batch;
  for (int m : client.observed) batch.emplace(m, gather_rows(client.shard.views.at(static_cast<std::size_t>(m)), idx));
  return batch;
}

/// Runs cfg.local_steps Adam steps on the client's own bundle.
inline LocalRoundResult local_round(ClientState& client, const TrainConfig& cfg) {
  cfg.validate();
  if (client.shard.size() == 0) throw PreconditionError("local_round: client " + std::to_string(client.client_id) + " has no data");
  client.optimizer.set_learning_rate(cfg.learning_rate);
  auto params = client.bundle.trainable_parameters();
  LocalRoundResult result;
  result.losses.reserve(cfg.local_steps);
  for (std::size_t s = 0; s < cfg.local_steps; ++s) {
    auto batch = sample_batch(client, cfg.batch_size, client.rng);
    NoiseSource noise(client.seed, client.steps_taken++);
    client.bundle.zero_grad();
    LocalLoss loss = local_loss(client.bundle, batch, cfg, noise);
    backward(loss.total);
    client.optimizer.step(params);
    result.losses.push_back(loss.total.value().item());
  }
  return result;
}

/// Target latents inferred from encoder means of every observed modality.
inline std::map<int, Tensor> infer_latents(const ModelBundle& bundle, const std::map<int, Tensor>& observed,
                                           const std::set<int>& missing, const NoiseSource& noise) {
  if (observed.empty()) throw PreconditionError("infer: no observed modalities");
  for (int m : missing)
    if (observed.contains(m)) throw PreconditionError("infer: modality " + std::to_string(m) + " is both observed and missing");
  if (missing.empty()) return {};
  detail::check_batch(observed);
  NoGradGuard no_grad;

  std::map<int, Tensor> out;
  if (bundle.spec.method == FusionMethod::kGraph) {
    std::map<int, Var> cond;
    for (const auto& [m, x] : observed) cond.emplace(m, bundle.vae(m).encode(x).mu);
    for (auto& [m, z] : fuse(bundle.fusion, cond, missing, noise)) out.emplace(m, z.value());
  } else {
    std::vector<Posterior> experts;
    for (const auto& [m, x] : observed) experts.push_back(bundle.vae(m).encode(x));
    Tensor mu = poe_fuse(experts, true).mu.value();
    for (int m : missing) out.emplace(m, mu);
  }
  return out;
}

/// Decoded reconstructions of each missing modality.
inline std::map<int, Tensor> infer_impute(const ModelBundle& bundle, const std::map<int, Tensor>& observed,
                                          const std::set<int>& missing, const NoiseSource& noise) {
  for (int m : missing) {
    if (!bundle.decoder_for(m)) {
      throw CapabilityError("no decoder for missing modality " + std::to_string(m) + " in this bundle");
    }
  }
  NoGradGuard no_grad;
  std::map<int, Tensor> out;
  for (auto& [m, z] : infer_latents(bundle, observed, missing, noise)) {
    out.emplace(m, (*bundle.decoder_for(m))(constant(std::move(z))).value());
  }
  return out;
}

/// [n, M*d] features: encoder means for observed modalities, fused latents
/// for missing ones, slot m at columns [m*d, (m+1)*d). Slots in neither set
/// stay zero.
inline Tensor infer_features(const ModelBundle& bundle, const std::map<int, Tensor>& observed,
                             const std::set<int>& missing, const NoiseSource& noise) {
  if (observed.empty()) throw PreconditionError("infer_features: no observed modalities");
  NoGradGuard no_grad;
  const std::size_t d = bundle.latent_dim();
  const std::size_t n = observed.begin()->second.rows();
  Tensor feats(Shape{n, bundle.spec.modalities * d});
  auto place = [&](int m, const Tensor& z) {
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < d; ++j) feats.at(r, static_cast<std::size_t>(m) * d + j) = z.at(r, j);
  };
  for (const auto& [m, x] : observed) place(m, bundle.vae(m).encode(x).mu.value());
  for (const auto& [m, z] : infer_latents(bundle, observed, missing, noise)) place(m, z);
  return feats;
}

}  // namespace graphpl
