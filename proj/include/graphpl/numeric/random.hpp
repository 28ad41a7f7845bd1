// Copyright 2026 The GraphPL Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "graphpl/numeric/tensor.hpp"

namespace graphpl {

using Rng = std::mt19937_64;

/// Derives an independent generator from a root seed and a key path.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> key) {
  std::vector<std::uint32_t> words;
  words.reserve(2 + 2 * key.size());
  auto push = [&](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto k : key) push(k);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

inline Tensor normal_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.storage()) v = dist(rng);
  return t;
}

/// What a keyed noise draw is used for.
enum class NoisePurpose : std::uint64_t {
  kLatentSample = 1,  // reparameterisation noise for a modality's posterior
  kVirtualNode = 2,   // initial features of a target node
  kPoeSample = 3,     // reparameterisation noise for a product-of-experts target
  kCorruption = 4,    // interpolation noise for the robustness probe
};

/// Standard-normal draws addressed by (purpose, modality) rather than call order.
///
/// Two consumers asking for the same key get the same tensor, which keeps
/// the imputation loss and the combined local loss on identical samples and
/// makes fusion independent of the order conditionals are supplied in.
class NoiseSource {
 public:
  NoiseSource() = default;
  NoiseSource(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  Tensor normal(NoisePurpose purpose, int modality, std::size_t rows, std::size_t cols) const {
    Rng rng = derive_rng(seed_, {stream_, static_cast<std::uint64_t>(purpose), static_cast<std::uint64_t>(modality)});
    return normal_tensor(Shape{rows, cols}, rng);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
};

}  // namespace graphpl
