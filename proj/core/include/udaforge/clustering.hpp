// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "udaforge/matrix.hpp"

namespace udaforge {

struct GmmParams {
  std::vector<double> weights;  // mixture simplex
  FeatureMatrix means;          // k x dim
  FeatureMatrix variances;      // k x dim, diagonal covariances, floored
};

struct ClusterModel {
  std::string algorithm;
  std::size_t k = 0;
  std::vector<int> assignment;          // -1 = noise (hdbscan only)
  FeatureMatrix centroids;              // kmeans centroids / gmm means
  std::vector<std::size_t> medoids;     // kmedoids row indices
  GmmParams gmm;
  std::vector<double> objective_trace;  // per-iteration cost (or log-likelihood)
  std::vector<std::string> warnings;
};

enum class KmeansMetric { euclidean, cosine };

/// k-means++ seeding, then Lloyd iterations until the assignment is stable.
/// Cosine mode normalizes rows and keeps centroids on the unit sphere. The
/// objective trace records distortion after every assignment step.
ClusterModel kmeans(const FeatureMatrix& x, std::size_t k, KmeansMetric metric,
                    std::uint64_t seed, std::size_t max_iter = 300);

/// PAM: greedy build, then best-improvement swaps until no swap helps. The
/// trace records total euclidean dissimilarity after build and each swap.
ClusterModel kmedoids(const FeatureMatrix& x, std::size_t k, std::uint64_t seed,
                      std::size_t max_iter = 100);

/// Diagonal-covariance EM from a k-means initialization; stops when the
/// log-likelihood gain drops below tol. The trace records log-likelihood.
ClusterModel gmm_em(const FeatureMatrix& x, std::size_t k, std::uint64_t seed,
                    double tol = 1e-6, std::size_t max_iter = 200);

/// Mutual-reachability HDBSCAN: core distances, MST, single-linkage
/// hierarchy, condensed tree, excess-of-mass extraction. Noise gets -1.
ClusterModel hdbscan(const FeatureMatrix& x, std::size_t min_cluster_size,
                     std::size_t min_samples);

struct ElbowResult {
  std::size_t k = 0;
  bool warned = false;  // no knee found, smallest k returned
  std::vector<double> distortions;
};

/// Fits once per k and picks the knee by maximum second difference of the
/// distortion curve; ties go to the smaller k. Algorithms: "kmeans",
/// "kmeans_cosine", "kmedoids", "gmm" (negative log-likelihood).
ElbowResult elbow_k(const FeatureMatrix& x, const std::string& algorithm,
                    std::span<const std::size_t> k_range, std::uint64_t seed);

/// Knee of a distortion curve (sorted k ascending): the k maximizing the
/// discrete curvature d[i-1] - 2 d[i] + d[i+1]. Monotone-flat curves have no
/// knee; the smallest k is returned with the warned flag set.
std::size_t knee_from_distortions(std::span<const double> distortions,
                                  std::span<const std::size_t> ks, bool& warned);

}  // namespace udaforge
