// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "udaforge/matrix.hpp"

namespace udaforge {

struct TsneResult {
  FeatureMatrix coords;          // N x 2
  std::vector<double> kl_trace;  // objective per iteration
};

/// Exact O(N^2) t-SNE: per-point bandwidths matched to the perplexity by
/// bisection, early exaggeration (x12 for the first 250 iterations), and
/// momentum 0.5 -> 0.8 at iteration 250 with adaptive gains.
TsneResult tsne_project_traced(const FeatureMatrix& x, double perplexity,
                               std::size_t iters, std::uint64_t seed);

FeatureMatrix tsne_project(const FeatureMatrix& x, double perplexity = 30.0,
                           std::size_t iters = 1000, std::uint64_t seed = 0);

/// Conditional distributions p_{j|i} for the bandwidth search; exposed so the
/// entropy contract is directly checkable.
FeatureMatrix tsne_conditional_p(const FeatureMatrix& x, double perplexity);

}  // namespace udaforge
