// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "udaforge/clustering.hpp"
#include "udaforge/corpus.hpp"
#include "udaforge/matrix.hpp"

namespace udaforge {

/// N x V nonnegative term counts for the probabilistic topic models.
struct CountMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint32_t> data;

  CountMatrix() = default;
  CountMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0) {}
  std::uint32_t& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  std::uint32_t operator()(std::size_t i, std::size_t j) const {
    return data[i * cols + j];
  }
};

CountMatrix count_matrix(const Corpus& corpus, const Vocabulary& vocab);

struct TopicModel {
  std::string algorithm;
  std::size_t k = 0;
  FeatureMatrix topic_term;             // k x V
  FeatureMatrix doc_topic;              // N x k
  std::vector<int> assignment;          // argmax topic per document
  std::vector<double> objective_trace;  // log-likelihood / objective, when iterative
  std::vector<double> singular_values;  // lsa only, non-increasing
  std::vector<std::string> warnings;
};

/// Collapsed Gibbs sampling; theta/phi estimated from the final counts with
/// Dirichlet smoothing. Pass alpha <= 0 for the 50/k default.
TopicModel lda_gibbs(const CountMatrix& counts, std::size_t k, double alpha,
                     double beta, std::size_t iters, std::uint64_t seed);

/// Multiplicative updates for ||X - WH||_F^2 with epsilon-stabilized
/// denominators; stops when the relative objective change drops below tol.
TopicModel nmf(const FeatureMatrix& x, std::size_t k, std::size_t iters, double tol,
               std::uint64_t seed);

/// Rank-k truncated SVD by subspace power iteration with a Rayleigh-Ritz
/// finish; doc_topic = U_k * Sigma_k, assignment by largest |component|.
TopicModel lsa(const FeatureMatrix& x, std::size_t k);

/// EM over P(z|d,w); stops when the log-likelihood gain drops below tol.
TopicModel plsa_em(const CountMatrix& counts, std::size_t k, std::size_t iters,
                   double tol, std::uint64_t seed);

/// Per-document domain labels: argmax topic/cluster, ties to the lower id;
/// HDBSCAN noise points are mapped to the nearest cluster centroid.
std::vector<int> assign_domains(const TopicModel& model);
std::vector<int> assign_domains(const ClusterModel& model, const FeatureMatrix& x);

/// topics.txt: top-10 terms per topic with weights.
void save_topics_txt(const TopicModel& model, const Vocabulary& vocab,
                     const std::string& path);

}  // namespace udaforge
