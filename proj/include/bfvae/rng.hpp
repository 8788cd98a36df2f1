// SPDX-License-Identifier: Apache-2.0
//
// Seeded random streams. All randomness in the library flows through Rng so
// that runs are bit-reproducible on one platform: the generators below are
// implemented here (not delegated to std::*_distribution, whose sequences
// are implementation-defined).
#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace bfvae {

// Mixes a parent seed with stream labels; used to give every consumer
// (batch sampler, reparam noise, permutations, ...) its own stream.
uint64_t derive_seed(uint64_t parent, uint64_t stream, uint64_t index = 0);

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi);

  // Integer uniform on [0, n).
  size_t index(size_t n);

  // Standard normal via Box-Muller (pair cached).
  double gaussian();

  // Gamma(shape, rate) variate, shape > 0, rate > 0 (Marsaglia-Tsang).
  double gamma(double shape, double rate);

  // In-place Fisher-Yates shuffle of [0, n) indices.
  std::vector<size_t> permutation(size_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bfvae
