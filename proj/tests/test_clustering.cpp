// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "test_util.hpp"
#include "udaforge/clustering.hpp"

using namespace udaforge;

namespace {

// Three separated gaussian blobs; returns features plus ground-truth labels.
std::pair<FeatureMatrix, std::vector<int>> blobs3(std::size_t per_blob, double spread,
                                                  std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const double centers[3][2] = {{0.0, 0.0}, {10.0, 0.0}, {0.0, 10.0}};
  FeatureMatrix x(per_blob * 3, 2);
  std::vector<int> truth(per_blob * 3);
  for (std::size_t b = 0; b < 3; ++b) {
    for (std::size_t i = 0; i < per_blob; ++i) {
      const std::size_t row = b * per_blob + i;
      truth[row] = static_cast<int>(b);
      x(row, 0) = centers[b][0] + spread * normal(rng);
      x(row, 1) = centers[b][1] + spread * normal(rng);
    }
  }
  return {x, truth};
}

// Clustering accuracy up to label permutation (k <= 3).
double permuted_accuracy(const std::vector<int>& got, const std::vector<int>& truth,
                         int k) {
  std::vector<int> perm(k);
  for (int i = 0; i < k; ++i) perm[i] = i;
  double best = 0.0;
  do {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < got.size(); ++i) {
      if (got[i] >= 0 && perm[got[i]] == truth[i]) ++hits;
    }
    best = std::max(best, static_cast<double>(hits) / got.size());
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("kmeans: degenerate optimum, monotone distortion, exhaustive fixpoint") {
  SUBCASE("points equal to k distinct locations") {
    FeatureMatrix x(3, 2);
    x(0, 0) = 1.0;
    x(1, 1) = 5.0;
    x(2, 0) = -3.0;
    ClusterModel m = kmeans(x, 3, KmeansMetric::euclidean, 1);
    CHECK(m.objective_trace.back() == doctest::Approx(0.0).epsilon(1e-15));
    std::set<int> ids(m.assignment.begin(), m.assignment.end());
    CHECK(ids.size() == 3);
  }

  SUBCASE("distortion is non-increasing at every recorded step") {
    Rng rng = make_rng(3);
    FeatureMatrix x = testutil::random_matrix(40, 3, rng);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      ClusterModel m = kmeans(x, 4, KmeansMetric::euclidean, seed);
      for (std::size_t i = 1; i < m.objective_trace.size(); ++i) {
        CHECK(m.objective_trace[i] <= m.objective_trace[i - 1] + 1e-9);
      }
    }
  }

  SUBCASE("8 points, k=2: converged partition is a Lloyd fixpoint, verified "
          "against exhaustive enumeration") {
    Rng rng = make_rng(7);
    FeatureMatrix x = testutil::random_matrix(8, 2, rng);

    // Enumerate all 2^8 labelings; record which are Lloyd fixpoints.
    auto is_fixpoint = [&](const std::vector<int>& labels) {
      double centroid[2][2] = {{0, 0}, {0, 0}};
      std::size_t count[2] = {0, 0};
      for (std::size_t i = 0; i < 8; ++i) {
        centroid[labels[i]][0] += x(i, 0);
        centroid[labels[i]][1] += x(i, 1);
        count[labels[i]]++;
      }
      if (count[0] == 0 || count[1] == 0) return false;
      for (int c = 0; c < 2; ++c) {
        centroid[c][0] /= static_cast<double>(count[c]);
        centroid[c][1] /= static_cast<double>(count[c]);
      }
      for (std::size_t i = 0; i < 8; ++i) {
        double d[2];
        for (int c = 0; c < 2; ++c) {
          const double dx = x(i, 0) - centroid[c][0];
          const double dy = x(i, 1) - centroid[c][1];
          d[c] = dx * dx + dy * dy;
        }
        if (d[labels[i]] > d[1 - labels[i]] + 1e-12) return false;
      }
      return true;
    };

    std::set<std::vector<int>> fixpoints;
    for (unsigned mask = 0; mask < 256; ++mask) {
      std::vector<int> labels(8);
      for (std::size_t i = 0; i < 8; ++i) labels[i] = (mask >> i) & 1;
      if (!is_fixpoint(labels)) continue;
      if (labels[0] == 1) {
        for (auto& l : labels) l = 1 - l;  // canonical orientation
      }
      fixpoints.insert(labels);
    }
    REQUIRE(!fixpoints.empty());

    ClusterModel m = kmeans(x, 2, KmeansMetric::euclidean, 5);
    std::vector<int> got = m.assignment;
    if (got[0] == 1) {
      for (auto& l : got) l = 1 - l;
    }
    CHECK(fixpoints.count(got) == 1);
  }

  SUBCASE("cosine assignment invariant to positive row rescaling") {
    Rng rng = make_rng(11);
    FeatureMatrix x = testutil::random_matrix(20, 3, rng);
    for (double& v : x.data) v += 2.5;  // keep rows away from zero
    FeatureMatrix scaled = x;
    for (std::size_t i = 0; i < scaled.rows; ++i) {
      const double s = 0.5 + 3.0 * uniform_real(rng);
      for (double& v : scaled.row(i)) v *= s;
    }
    ClusterModel a = kmeans(x, 3, KmeansMetric::cosine, 9);
    ClusterModel b = kmeans(scaled, 3, KmeansMetric::cosine, 9);
    CHECK(a.assignment == b.assignment);
  }

  SUBCASE("k > rows errors") {
    FeatureMatrix x(2, 2);
    CHECK_THROWS_AS(kmeans(x, 3, KmeansMetric::euclidean, 0), std::invalid_argument);
  }
}

TEST_CASE("kmedoids: degenerate case, monotone swaps, exhaustive pair optimum") {
  SUBCASE("k equals rows: every point its own medoid at cost 0") {
    Rng rng = make_rng(13);
    FeatureMatrix x = testutil::random_matrix(5, 2, rng);
    ClusterModel m = kmedoids(x, 5, 0);
    CHECK(m.objective_trace.back() == doctest::Approx(0.0).epsilon(1e-12));
    std::set<std::size_t> medoids(m.medoids.begin(), m.medoids.end());
    CHECK(medoids.size() == 5);
  }

  SUBCASE("swap phase never increases the cost") {
    Rng rng = make_rng(17);
    FeatureMatrix x = testutil::random_matrix(25, 3, rng);
    ClusterModel m = kmedoids(x, 3, 0);
    for (std::size_t i = 1; i < m.objective_trace.size(); ++i) {
      CHECK(m.objective_trace[i] <= m.objective_trace[i - 1] + 1e-12);
    }
  }

  SUBCASE("7 points, k=2: final cost equals the exhaustive C(7,2) minimum") {
    Rng rng = make_rng(19);
    FeatureMatrix x = testutil::random_matrix(7, 2, rng);
    double best = 1e300;
    for (std::size_t a = 0; a < 7; ++a) {
      for (std::size_t b = a + 1; b < 7; ++b) {
        double cost = 0.0;
        for (std::size_t i = 0; i < 7; ++i) {
          const double da = std::sqrt(squared_distance(x.row(i), x.row(a)));
          const double db = std::sqrt(squared_distance(x.row(i), x.row(b)));
          cost += std::min(da, db);
        }
        best = std::min(best, cost);
      }
    }
    ClusterModel m = kmedoids(x, 2, 0);
    CHECK(m.objective_trace.back() == doctest::Approx(best).epsilon(1e-9));
  }
}

TEST_CASE("gmm_em: monotone likelihood, blob recovery, closed-form k=1") {
  SUBCASE("log-likelihood non-decreasing at every EM step") {
    Rng rng = make_rng(23);
    FeatureMatrix x = testutil::random_matrix(30, 2, rng);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      ClusterModel m = gmm_em(x, 3, seed);
      for (std::size_t i = 1; i < m.objective_trace.size(); ++i) {
        CHECK(m.objective_trace[i] >= m.objective_trace[i - 1] - 1e-9);
      }
    }
  }

  SUBCASE("two far unit blobs: responsibilities recomputed from the fitted "
          "parameters are one-hot") {
    Rng rng = make_rng(29);
    FeatureMatrix x(40, 2);
    for (std::size_t i = 0; i < 40; ++i) {
      const double cx = i < 20 ? 0.0 : 30.0;
      x(i, 0) = cx + normal(rng);
      x(i, 1) = normal(rng);
    }
    ClusterModel m = gmm_em(x, 2, 1);
    for (std::size_t i = 0; i < 40; ++i) {
      double logp[2];
      for (std::size_t c = 0; c < 2; ++c) {
        logp[c] = std::log(m.gmm.weights[c]);
        for (std::size_t d = 0; d < 2; ++d) {
          const double var = m.gmm.variances(c, d);
          const double diff = x(i, d) - m.gmm.means(c, d);
          logp[c] += -0.5 * std::log(2.0 * 3.141592653589793 * var) -
                     diff * diff / (2.0 * var);
        }
      }
      const double mx = std::max(logp[0], logp[1]);
      const double r0 = std::exp(logp[0] - mx) /
                        (std::exp(logp[0] - mx) + std::exp(logp[1] - mx));
      CHECK(std::max(r0, 1.0 - r0) > 0.99);
    }
  }

  SUBCASE("k=1 recovers the sample mean and variance") {
    Rng rng = make_rng(31);
    FeatureMatrix x = testutil::random_matrix(50, 2, rng);
    ClusterModel m = gmm_em(x, 1, 0);
    for (std::size_t d = 0; d < 2; ++d) {
      double mean = 0.0;
      for (std::size_t i = 0; i < 50; ++i) mean += x(i, d);
      mean /= 50.0;
      double var = 0.0;
      for (std::size_t i = 0; i < 50; ++i) {
        var += (x(i, d) - mean) * (x(i, d) - mean);
      }
      var /= 50.0;
      CHECK(m.gmm.means(0, d) == doctest::Approx(mean).epsilon(1e-9));
      CHECK(m.gmm.variances(0, d) == doctest::Approx(var).epsilon(1e-9));
    }
    CHECK(m.gmm.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("hdbscan: blob recovery, all-noise scatter, duplicates, permutation") {
  SUBCASE("three tight separated blobs of 20: exactly 3 clusters, no noise") {
    auto [x, truth] = blobs3(20, 0.3, 5);
    ClusterModel m = hdbscan(x, 10, 5);
    CHECK(m.k == 3);
    for (int a : m.assignment) CHECK(a >= 0);
    CHECK(permuted_accuracy(m.assignment, truth, 3) == doctest::Approx(1.0));
  }

  SUBCASE("uniform scatter with a large min_cluster_size is all noise") {
    Rng rng = make_rng(37);
    FeatureMatrix x(40, 2);
    for (double& v : x.data) v = uniform_real(rng) * 10.0;
    ClusterModel m = hdbscan(x, 25, 5);
    CHECK(m.k == 0);
    for (int a : m.assignment) CHECK(a == -1);
    CHECK_FALSE(m.warnings.empty());
  }

  SUBCASE("duplicate points co-cluster without division issues") {
    FeatureMatrix x(24, 2);
    for (std::size_t i = 0; i < 12; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = 1.0;
    }
    for (std::size_t i = 12; i < 24; ++i) {
      x(i, 0) = 9.0;
      x(i, 1) = 9.0;
    }
    ClusterModel m = hdbscan(x, 5, 3);
    CHECK(m.k == 2);
    std::set<int> left(m.assignment.begin(), m.assignment.begin() + 12);
    std::set<int> right(m.assignment.begin() + 12, m.assignment.end());
    CHECK(left.size() == 1);
    CHECK(right.size() == 1);
    CHECK(*left.begin() != *right.begin());
  }

  SUBCASE("row permutation changes labels only up to relabeling") {
    auto [x, truth] = blobs3(12, 0.4, 9);
    ClusterModel base = hdbscan(x, 6, 3);

    std::vector<std::size_t> perm(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) perm[i] = i;
    Rng rng = make_rng(3);
    shuffle(perm, rng);
    FeatureMatrix shuffled(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
      std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), shuffled.row(i).begin());
    }
    ClusterModel moved = hdbscan(shuffled, 6, 3);
    REQUIRE(moved.k == base.k);
    std::map<int, int> mapping;
    for (std::size_t i = 0; i < x.rows; ++i) {
      const int a = moved.assignment[i];
      const int b = base.assignment[perm[i]];
      auto [it, inserted] = mapping.emplace(a, b);
      CHECK(it->second == b);
    }
  }
}

TEST_CASE("elbow_k: knee detection, flat warning, determinism") {
  SUBCASE("three ideal blobs over k in 2..6 yield 3") {
    auto [x, truth] = blobs3(15, 0.4, 21);
    const std::size_t range[] = {2, 3, 4, 5, 6};
    ElbowResult r = elbow_k(x, "kmeans", range, 4);
    CHECK(r.k == 3);
    CHECK_FALSE(r.warned);
  }
  SUBCASE("deterministic under a fixed seed") {
    auto [x, truth] = blobs3(15, 0.8, 22);
    const std::size_t range[] = {2, 3, 4, 5};
    ElbowResult a = elbow_k(x, "kmeans", range, 6);
    ElbowResult b = elbow_k(x, "kmeans", range, 6);
    CHECK(a.k == b.k);
    CHECK(a.distortions == b.distortions);
  }
  SUBCASE("k_range shorter than 3 errors") {
    FeatureMatrix x(10, 2);
    const std::size_t range[] = {2, 3};
    CHECK_THROWS_AS(elbow_k(x, "kmeans", range, 0), std::invalid_argument);
  }
  SUBCASE("linear distortion decay has no knee: smallest k plus warning") {
    const double linear[] = {10.0, 8.0, 6.0, 4.0};
    const std::size_t ks[] = {2, 3, 4, 5};
    bool warned = false;
    CHECK(knee_from_distortions(linear, ks, warned) == 2);
    CHECK(warned);

    const double kneed[] = {10.0, 4.0, 3.5, 3.0};
    CHECK(knee_from_distortions(kneed, ks, warned) == 3);
    CHECK_FALSE(warned);
  }
}
