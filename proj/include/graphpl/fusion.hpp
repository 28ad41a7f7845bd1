// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "graphpl/numeric/dense.hpp"
#include "graphpl/numeric/ops.hpp"
#include "graphpl/numeric/random.hpp"
#include "graphpl/vae.hpp"

namespace graphpl {

/// Modality graph for one fusion call.
///
/// Nodes are the conditional modalities (ascending id) followed by one
/// virtual node per target (ascending id). Conditionals form a clique, every
/// target links to every conditional, targets never link to each other. The
/// adjacency is D^-1/2 (A + I) D^-1/2.
struct FusionGraph {
  std::vector<int> node_ids;
  std::size_t cond_count = 0;
  std::size_t target_count = 0;
  Tensor adjacency;

  std::size_t node_count() const { return node_ids.size(); }
};

inline FusionGraph build_graph(const std::set<int>& cond_ids, const std::set<int>& target_ids) {
  if (cond_ids.empty()) throw PreconditionError("build_graph: at least one conditional modality is required");
  for (int t : target_ids) {
    if (cond_ids.contains(t)) {
      throw PreconditionError("build_graph: modality " + std::to_string(t) + " is both conditional and target");
    }
  }
  FusionGraph g;
  g.node_ids.assign(cond_ids.begin(), cond_ids.end());
  g.node_ids.insert(g.node_ids.end(), target_ids.begin(), target_ids.end());
  g.cond_count = cond_ids.size();
  g.target_count = target_ids.size();

  const std::size_t n = g.node_count();
  Tensor a(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool i_cond = i < g.cond_count;
      const bool j_cond = j < g.cond_count;
      if (i == j || i_cond || j_cond) a.at(i, j) = 1.0;
    }
  }
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += a.at(i, j);
    inv_sqrt_deg[i] = 1.0 / std::sqrt(deg);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a.at(i, j) *= inv_sqrt_deg[i] * inv_sqrt_deg[j];
  g.adjacency = std::move(a);
  return g;
}

/// i.i.d. standard-normal starting features for the virtual target nodes.
inline Tensor init_target_nodes(std::size_t target_count, std::size_t d, Rng& rng) {
  if (d == 0) throw PreconditionError("init_target_nodes: d must be >= 1");
  return normal_tensor(Shape{target_count, d}, rng);
}

/// Grouped graph convolution followed by ReLU.
///
/// `h` holds node features node-major: rows [i*B, (i+1)*B) belong to node i,
/// so a batch of B samples sharing one graph is processed in a single call.
/// `weight` is [g, d/g, d/g]; group k maps channels [k*d/g, (k+1)*d/g) with
/// its own square matrix after neighbourhood aggregation by `adj`.
inline Var grouped_gcn(const Var& h, const Tensor& adj, const Var& weight) {
  const Tensor& hv = h.value();
  const Tensor& wv = weight.value();
  require_rank2(hv, "grouped_gcn");
  require_rank2(adj, "grouped_gcn");
  if (wv.rank() != 3 || wv.shape()[1] != wv.shape()[2]) {
    throw DimensionError("grouped_gcn: weight must be [g, d/g, d/g], got " + shape_str(wv.shape()));
  }
  const std::size_t groups = wv.shape()[0];
  const std::size_t width = wv.shape()[1];
  const std::size_t d = hv.cols();
  if (groups == 0 || d % groups != 0) {
    throw ConfigError("grouped_gcn: groups (" + std::to_string(groups) + ") must divide feature width (" +
                      std::to_string(d) + ")");
  }
  if (groups * width != d) {
    throw DimensionError("grouped_gcn: weight " + shape_str(wv.shape()) + " does not cover width " + std::to_string(d));
  }
  const std::size_t nodes = adj.rows();
  if (adj.cols() != nodes || nodes == 0 || hv.rows() % nodes != 0) {
    throw DimensionError("grouped_gcn: adjacency " + shape_str(adj.shape()) + " incompatible with features " +
                         shape_str(hv.shape()));
  }
  const std::size_t batch = hv.rows() / nodes;

  using detail::RowMat;
  auto node_block = [batch, d](const Tensor& t, std::size_t i) {
    return detail::CMapMat(t.storage().data() + i * batch * d, static_cast<Eigen::Index>(batch),
                           static_cast<Eigen::Index>(d));
  };

  // agg_i = sum_j adj(i,j) h_j
  Tensor agg(hv.shape());
  for (std::size_t i = 0; i < nodes; ++i) {
    detail::MapMat dst(agg.storage().data() + i * batch * d, static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < nodes; ++j)
      if (adj.at(i, j) != 0.0) dst += adj.at(i, j) * node_block(hv, j);
  }

  Tensor out(hv.shape());
  {
    auto a = detail::as_mat(std::as_const(agg));
    auto o = detail::as_mat(out);
    const auto w = static_cast<Eigen::Index>(width);
    for (std::size_t k = 0; k < groups; ++k) {
      detail::CMapMat wk(wv.storage().data() + k * width * width, w, w);
      const auto c0 = static_cast<Eigen::Index>(k * width);
      o.middleCols(c0, w).noalias() = a.middleCols(c0, w) * wk;
    }
    o = o.cwiseMax(0.0);
  }

  return detail::make_result(std::move(out), {h, weight},
                             [agg = std::move(agg), adj, nodes, batch, groups, width, d](Node& self) {
    // Gradient through the ReLU.
    Tensor dpre(self.value.shape());
    for (std::size_t i = 0; i < dpre.size(); ++i) dpre[i] = self.value[i] > 0.0 ? self.grad[i] : 0.0;
    auto dp = detail::as_mat(std::as_const(dpre));
    const auto w = static_cast<Eigen::Index>(width);
    const Tensor& wv = self.parents[1]->value;

    if (Node* pw = detail::grad_parent(self, 1)) {
      Tensor& gw = pw->ensure_grad();
      auto a = detail::as_mat(agg);
      for (std::size_t k = 0; k < groups; ++k) {
        detail::MapMat gk(gw.storage().data() + k * width * width, w, w);
        const auto c0 = static_cast<Eigen::Index>(k * width);
        gk.noalias() += a.middleCols(c0, w).transpose() * dp.middleCols(c0, w);
      }
    }
    if (Node* ph = detail::grad_parent(self, 0)) {
      Tensor dagg(self.value.shape());
      auto da = detail::as_mat(dagg);
      for (std::size_t k = 0; k < groups; ++k) {
        detail::CMapMat wk(wv.storage().data() + k * width * width, w, w);
        const auto c0 = static_cast<Eigen::Index>(k * width);
        da.middleCols(c0, w).noalias() = dp.middleCols(c0, w) * wk.transpose();
      }
      Tensor& gh = ph->ensure_grad();
      for (std::size_t j = 0; j < nodes; ++j) {
        detail::MapMat dst(gh.storage().data() + j * batch * d, static_cast<Eigen::Index>(batch),
                           static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < nodes; ++i) {
          if (adj.at(i, j) == 0.0) continue;
          dst += adj.at(i, j) * detail::CMapMat(dagg.storage().data() + i * batch * d, static_cast<Eigen::Index>(batch),
                                                static_cast<Eigen::Index>(d));
        }
      }
    }
  });
}

/// Per row: view channels as (g, d/g), transpose, flatten.
inline Var channel_shuffle(const Var& h, std::size_t groups) {
  const Tensor& hv = h.value();
  require_rank2(hv, "channel_shuffle");
  const std::size_t d = hv.cols();
  if (groups == 0 || d % groups != 0) {
    throw ConfigError("channel_shuffle: groups (" + std::to_string(groups) + ") must divide feature width (" +
                      std::to_string(d) + ")");
  }
  const std::size_t width = d / groups;
  // dest[j * g + k] = src[k * width + j]
  std::vector<std::size_t> src_of(d);
  for (std::size_t k = 0; k < groups; ++k)
    for (std::size_t j = 0; j < width; ++j) src_of[j * groups + k] = k * width + j;

  Tensor out(hv.shape());
  for (std::size_t r = 0; r < hv.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) out.at(r, c) = hv.at(r, src_of[c]);

  return detail::make_result(std::move(out), {h}, [src_of = std::move(src_of), d](Node& self) {
    if (Node* p = detail::grad_parent(self, 0)) {
      Tensor& g = p->ensure_grad();
      const std::size_t rows = self.value.rows();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) g.at(r, src_of[c]) += self.grad.at(r, c);
    }
  });
}

/// Widths and depth of the fusion stack.
struct FusionConfig {
  std::size_t latent_dim = 16;
  std::size_t groups = 4;
  std::size_t blocks = 2;
  std::size_t ffn_hidden = 32;

  void validate() const {
    if (latent_dim == 0) throw ConfigError("latent_dim must be positive");
    if (groups == 0 || latent_dim % groups != 0) throw ConfigError("groups must divide latent_dim");
    if (blocks == 0) throw ConfigError("blocks must be >= 1");
    if (ffn_hidden == 0) throw ConfigError("ffn_hidden must be positive");
  }
};

/// grouped GCN -> channel shuffle -> FFN (residual) -> LayerNorm.
struct FusionBlock {
  Parameter gcn_weight;
  Dense ffn1, ffn2;
  Parameter norm_gamma, norm_beta;

  FusionBlock() = default;
  FusionBlock(std::size_t index, const FusionConfig& cfg, Rng& rng) {
    const std::string p = "fusion.block" + std::to_string(index);
    const std::size_t width = cfg.latent_dim / cfg.groups;
    Tensor w(Shape{cfg.groups, width, width});
    const double limit = std::sqrt(6.0 / static_cast<double>(2 * width));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : w.storage()) v = dist(rng);
    gcn_weight = Parameter(p + ".gcn.weight", std::move(w));
    ffn1 = Dense(p + ".ffn1", cfg.latent_dim, cfg.ffn_hidden, rng);
    ffn2 = Dense(p + ".ffn2", cfg.ffn_hidden, cfg.latent_dim, rng);
    norm_gamma = Parameter(p + ".norm.gamma", Tensor(Shape{cfg.latent_dim}, 1.0));
    norm_beta = Parameter(p + ".norm.beta", Tensor(Shape{cfg.latent_dim}, 0.0));
  }

  Var operator()(const Var& h, const FusionGraph& graph, std::size_t groups) const {
    Var conv = channel_shuffle(grouped_gcn(h, graph.adjacency, gcn_weight.var), groups);
    Var ffn = ffn2(relu(ffn1(conv)));
    return layer_norm(add(conv, ffn), norm_gamma.var, norm_beta.var, 1e-5);
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    fn(gcn_weight);
    ffn1.visit(fn);
    ffn2.visit(fn);
    fn(norm_gamma);
    fn(norm_beta);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    fn(gcn_weight);
    ffn1.visit(fn);
    ffn2.visit(fn);
    fn(norm_gamma);
    fn(norm_beta);
  }
};

/// Stack of identical fusion blocks shared by every target modality.
class FusionStack {
 public:
  FusionStack() = default;
  FusionStack(const FusionConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    for (std::size_t b = 0; b < cfg.blocks; ++b) blocks_.emplace_back(b, cfg, rng);
  }

  const FusionConfig& config() const { return cfg_; }
  std::size_t latent_dim() const { return cfg_.latent_dim; }
  const std::vector<FusionBlock>& blocks() const { return blocks_; }

  Var forward(Var h, const FusionGraph& graph) const {
    for (const auto& block : blocks_) h = block(h, graph, cfg_.groups);
    return h;
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    for (auto& b : blocks_) b.visit(fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    for (const auto& b : blocks_) b.visit(fn);
  }

 private:
  FusionConfig cfg_;
  std::vector<FusionBlock> blocks_;
};

/// Fuses conditional latents ([B, d] each) into one [B, d] latent per target.
/// Virtual-node features are drawn from `noise` keyed by target id.
inline std::map<int, Var> fuse(const FusionStack& stack, const std::map<int, Var>& cond_latents,
                               const std::set<int>& target_ids, const NoiseSource& noise) {
  if (cond_latents.empty()) throw PreconditionError("fuse: no conditional latents");
  if (target_ids.empty()) return {};
  std::set<int> cond_ids;
  const std::size_t batch = cond_latents.begin()->second.value().rows();
  const std::size_t d = stack.latent_dim();
  std::vector<Var> nodes;
  for (const auto& [m, z] : cond_latents) {
    if (z.value().rank() != 2 || z.value().rows() != batch || z.value().cols() != d) {
      throw DimensionError("fuse: latent of modality " + std::to_string(m) + " has shape " + shape_str(z.shape()) +
                           ", expected [" + std::to_string(batch) + "," + std::to_string(d) + "]");
    }
    cond_ids.insert(m);
    nodes.push_back(z);
  }
  FusionGraph graph = build_graph(cond_ids, target_ids);
  // one init per target node, shared by every row of the batch
  for (int t : target_ids) {
    const Tensor init = noise.normal(NoisePurpose::kVirtualNode, t, 1, d);
    Tensor tiled(Shape{batch, d});
    for (std::size_t r = 0; r < batch; ++r) std::copy_n(init.data().begin(), d, tiled.data().begin() + static_cast<std::ptrdiff_t>(r * d));
    nodes.push_back(constant(std::move(tiled)));
  }

  Var h = stack.forward(concat_rows(nodes), graph);

  std::map<int, Var> out;
  for (std::size_t k = 0; k < graph.target_count; ++k) {
    out.emplace(graph.node_ids[graph.cond_count + k], slice_rows(h, (graph.cond_count + k) * batch, batch));
  }
  return out;
}

/// Product of Gaussian experts, optionally with a standard-normal prior expert.
inline Posterior poe_fuse(std::span<const Posterior> experts, bool include_prior = true) {
  if (experts.empty()) throw PreconditionError("poe_fuse: no experts");
  Var precision;
  Var weighted;
  for (const auto& e : experts) {
    require_same_shape(e.mu.value(), experts[0].mu.value(), "poe_fuse");
    Var prec = exp(scale(e.logvar, -1.0));
    Var pm = mul(prec, e.mu);
    precision = precision ? add(precision, prec) : prec;
    weighted = weighted ? add(weighted, pm) : pm;
  }
  if (include_prior) precision = add_scalar(precision, 1.0);
  return {div(weighted, precision), scale(log(precision), -1.0)};
}

}  // namespace graphpl
