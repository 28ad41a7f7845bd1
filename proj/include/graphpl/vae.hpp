// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>

#include "graphpl/numeric/dense.hpp"
#include "graphpl/numeric/ops.hpp"
#include "graphpl/numeric/random.hpp"

namespace graphpl {

/// Sizes and loss weights of one per-modality beta-VAE.
struct VaeConfig {
  double beta = 1.0;
  Likelihood likelihood = Likelihood::kGaussian;
  std::size_t input_dim = 32;
  std::size_t latent_dim = 16;
  std::size_t hidden_dim = 64;

  void validate() const {
    if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
    if (input_dim == 0 || latent_dim == 0 || hidden_dim == 0) throw ConfigError("VAE dimensions must be positive");
  }
};

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

inline std::string vae_prefix(int modality) { return "vae." + std::to_string(modality); }

struct Posterior {
  Var mu;
  Var logvar;
};

/// input -> hidden -> hidden -> {mu, logvar}; both heads share the trunk.
struct Encoder {
  Dense fc1, fc2, mu_head, logvar_head;

  Encoder() = default;
  Encoder(int modality, const VaeConfig& cfg, Rng& rng)
      : fc1(vae_prefix(modality) + ".encoder.fc1", cfg.input_dim, cfg.hidden_dim, rng),
        fc2(vae_prefix(modality) + ".encoder.fc2", cfg.hidden_dim, cfg.hidden_dim, rng),
        mu_head(vae_prefix(modality) + ".encoder.mu", cfg.hidden_dim, cfg.latent_dim, rng),
        logvar_head(vae_prefix(modality) + ".encoder.logvar", cfg.hidden_dim, cfg.latent_dim, rng) {}

  std::size_t input_dim() const { return fc1.in_dim(); }
  std::size_t latent_dim() const { return mu_head.out_dim(); }

  /// logvar is clamped to [-10, 10].
  Posterior operator()(const Var& x) const {
    if (x.value().rank() != 2 || x.value().cols() != input_dim()) {
      throw DimensionError("encode: expected input of width " + std::to_string(input_dim()) + ", got " +
                           shape_str(x.shape()));
    }
    Var h = relu(fc2(relu(fc1(x))));
    return {mu_head(h), clamp(logvar_head(h), kLogvarMin, kLogvarMax)};
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    fc1.visit(fn);
    fc2.visit(fn);
    mu_head.visit(fn);
    logvar_head.visit(fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    fc1.visit(fn);
    fc2.visit(fn);
    mu_head.visit(fn);
    logvar_head.visit(fn);
  }
};

/// latent -> hidden -> hidden -> input (logits for the bernoulli likelihood).
struct Decoder {
  Dense fc1, fc2, out;

  Decoder() = default;
  Decoder(int modality, const VaeConfig& cfg, Rng& rng)
      : fc1(vae_prefix(modality) + ".decoder.fc1", cfg.latent_dim, cfg.hidden_dim, rng),
        fc2(vae_prefix(modality) + ".decoder.fc2", cfg.hidden_dim, cfg.hidden_dim, rng),
        out(vae_prefix(modality) + ".decoder.out", cfg.hidden_dim, cfg.input_dim, rng) {}

  std::size_t latent_dim() const { return fc1.in_dim(); }
  std::size_t output_dim() const { return out.out_dim(); }

  Var operator()(const Var& z) const {
    if (z.value().rank() != 2 || z.value().cols() != latent_dim()) {
      throw DimensionError("decode: expected latent of width " + std::to_string(latent_dim()) + ", got " +
                           shape_str(z.shape()));
    }
    return out(relu(fc2(relu(fc1(z)))));
  }

  template <typename Fn>
  void visit(Fn&& fn) {
    fc1.visit(fn);
    fc2.visit(fn);
    out.visit(fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    fc1.visit(fn);
    fc2.visit(fn);
    out.visit(fn);
  }
};

class ModalityVae {
 public:
  ModalityVae() = default;
  ModalityVae(int modality, const VaeConfig& cfg, Rng& rng)
      : encoder(modality, cfg, rng), decoder(modality, cfg, rng), modality_(modality) {
    cfg.validate();
  }

  int modality() const { return modality_; }
  std::size_t input_dim() const { return encoder.input_dim(); }
  std::size_t latent_dim() const { return encoder.latent_dim(); }

  Posterior encode(const Tensor& x) const { return encoder(constant(x)); }
  Posterior encode(const Var& x) const { return encoder(x); }
  Var decode(const Var& z) const { return decoder(z); }

  template <typename Fn>
  void visit(Fn&& fn) {
    encoder.visit(fn);
    decoder.visit(fn);
  }
  template <typename Fn>
  void visit(Fn&& fn) const {
    encoder.visit(fn);
    decoder.visit(fn);
  }

  Encoder encoder;
  Decoder decoder;

 private:
  int modality_ = 0;
};

/// Per-sample reconstruction + beta * KL given an already-encoded posterior
/// and its reparameterised sample.
inline Var single_loss_from(const Decoder& decoder, const Tensor& x, const Posterior& post, const Var& z,
                            const VaeConfig& cfg) {
  Var nll = recon_nll(decoder(z), x, cfg.likelihood);
  Var kl = gaussian_kl(post.mu, post.logvar);
  const double n = static_cast<double>(x.rows());
  return scale(add(nll, scale(kl, cfg.beta)), 1.0 / n);
}

/// Single-modality beta-VAE loss, averaged over the rows of `x`.
/// Reparameterisation noise comes from `noise` keyed by this modality.
inline Var single_loss(const ModalityVae& vae, const Tensor& x, const VaeConfig& cfg, const NoiseSource& noise) {
  Posterior post = vae.encode(x);
  Var z = reparameterize(post.mu, post.logvar,
                         noise.normal(NoisePurpose::kLatentSample, vae.modality(), x.rows(), vae.latent_dim()));
  return single_loss_from(vae.decoder, x, post, z, cfg);
}

}  // namespace graphpl
