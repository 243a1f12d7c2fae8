// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace udaforge {

// All randomness in the library goes through these helpers instead of
// std::*_distribution, whose outputs are implementation-defined. mt19937_64
// plus the mappings below give bit-identical streams on every platform,
// which the run-determinism contract depends on.

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

/// Derives an independent seed from (seed, stream_id), e.g. one per epoch
/// or per document. SplitMix64 finalizer keeps nearby ids decorrelated.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream_id) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream_id + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng derive_rng(std::uint64_t seed, std::uint64_t stream_id) {
  return Rng(derive_seed(seed, stream_id));
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_real(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  // Rejection-free modulo is biased for huge n; all n here are tiny relative
  // to 2^64 so the bias is far below observable levels.
  return static_cast<std::size_t>(rng() % n);
}

/// Standard normal via Box-Muller.
inline double normal(Rng& rng) {
  double u1 = uniform_real(rng);
  double u2 = uniform_real(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Fisher-Yates shuffle with our own index mapping.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

/// Samples an index from unnormalized nonnegative weights.
std::size_t sample_discrete(Rng& rng, const std::vector<double>& weights);

}  // namespace udaforge
