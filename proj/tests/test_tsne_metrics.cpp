// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "udaforge/metrics.hpp"
#include "udaforge/tsne.hpp"

using namespace udaforge;

TEST_CASE("metrics: accuracy, F1 conventions, confusion counts") {
  SUBCASE("perfect predictions") {
    const std::vector<int> y = {0, 1, 0, 1, 1};
    Metrics m = metrics(y, y);
    CHECK(m.accuracy == 1.0);
    CHECK(m.f1 == 1.0);
    CHECK(m.confusion[0][0] == 2);
    CHECK(m.confusion[1][1] == 3);
    CHECK(m.confusion[0][1] == 0);
    CHECK(m.confusion[1][0] == 0);
  }
  SUBCASE("all-positive over a balanced set: acc 0.5, F1 ~ 0.667") {
    std::vector<int> preds(100, 1);
    std::vector<int> labels(100);
    for (std::size_t i = 0; i < 100; ++i) labels[i] = static_cast<int>(i % 2);
    Metrics m = metrics(preds, labels);
    CHECK(m.accuracy == doctest::Approx(0.5));
    CHECK(m.f1 == doctest::Approx(2.0 * 0.5 / 1.5).epsilon(1e-12));
    CHECK(has_empty_prediction_column(m.confusion));  // class 0 never predicted
  }
  SUBCASE("no positives anywhere: F1 = 0 by convention") {
    const std::vector<int> preds = {0, 0, 0};
    const std::vector<int> labels = {0, 0, 0};
    Metrics m = metrics(preds, labels);
    CHECK(m.accuracy == 1.0);
    CHECK(m.f1 == 0.0);
  }
  SUBCASE("permutation invariance over pairs") {
    Rng rng = make_rng(3);
    std::vector<int> preds = testutil::random_labels(30, 2, rng);
    std::vector<int> labels = testutil::random_labels(30, 2, rng);
    Metrics base = metrics(preds, labels);
    std::vector<std::size_t> perm(30);
    for (std::size_t i = 0; i < 30; ++i) perm[i] = i;
    shuffle(perm, rng);
    std::vector<int> p2(30);
    std::vector<int> l2(30);
    for (std::size_t i = 0; i < 30; ++i) {
      p2[i] = preds[perm[i]];
      l2[i] = labels[perm[i]];
    }
    Metrics moved = metrics(p2, l2);
    CHECK(moved.accuracy == base.accuracy);
    CHECK(moved.f1 == base.f1);
    CHECK(moved.confusion == base.confusion);
  }
  SUBCASE("empty input rejected") {
    CHECK_THROWS_AS(metrics({}, {}), std::invalid_argument);
  }
}

TEST_CASE("argmax_rows: ties resolve to the lowest index") {
  FeatureMatrix m(2, 3);
  m(0, 0) = 0.2;
  m(0, 1) = 0.7;
  m(0, 2) = 0.1;
  m(1, 0) = 0.5;
  m(1, 1) = 0.5;
  CHECK(argmax_rows(m) == std::vector<int>{1, 0});
}

namespace {

std::pair<FeatureMatrix, std::vector<int>> two_blobs(std::size_t per_blob,
                                                     std::uint64_t seed) {
  Rng rng = make_rng(seed);
  FeatureMatrix x(per_blob * 2, 5);
  std::vector<int> labels(per_blob * 2);
  for (std::size_t i = 0; i < x.rows; ++i) {
    labels[i] = i < per_blob ? 0 : 1;
    for (std::size_t d = 0; d < 5; ++d) {
      x(i, d) = normal(rng) + (labels[i] == 0 ? 0.0 : 12.0);
    }
  }
  return {x, labels};
}

// Mean silhouette over euclidean distances in the embedding.
double silhouette(const FeatureMatrix& y, const std::vector<int>& labels) {
  const std::size_t n = y.rows;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double same = 0.0;
    double other = 0.0;
    std::size_t n_same = 0;
    std::size_t n_other = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = std::sqrt(squared_distance(y.row(i), y.row(j)));
      if (labels[j] == labels[i]) {
        same += d;
        ++n_same;
      } else {
        other += d;
        ++n_other;
      }
    }
    const double a = same / static_cast<double>(n_same);
    const double b = other / static_cast<double>(n_other);
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace

TEST_CASE("tsne: entropy target, trailing monotonicity, blob separation") {
  auto [x, labels] = two_blobs(50, 5);

  SUBCASE("conditional distribution entropy matches log(perplexity)") {
    const double perplexity = 10.0;
    FeatureMatrix p = tsne_conditional_p(x, perplexity);
    for (std::size_t i = 0; i < p.rows; ++i) {
      double h = 0.0;
      for (std::size_t j = 0; j < p.cols; ++j) {
        if (p(i, j) > 0.0) h -= p(i, j) * std::log(p(i, j));
      }
      CHECK(h == doctest::Approx(std::log(perplexity)).epsilon(1e-4));
    }
  }

  SUBCASE("KL trace non-increasing over the trailing 100 iterations") {
    TsneResult res = tsne_project_traced(x, 10.0, 1000, 3);
    REQUIRE(res.kl_trace.size() == 1000);
    for (std::size_t i = 901; i < 1000; ++i) {
      CHECK(res.kl_trace[i] <= res.kl_trace[i - 1] + 1e-10);
    }
  }

  SUBCASE("two far blobs separate with silhouette above 0.5") {
    FeatureMatrix coords = tsne_project(x, 10.0, 500, 3);
    CHECK(silhouette(coords, labels) > 0.5);
  }

  SUBCASE("seeded determinism") {
    FeatureMatrix a = tsne_project(x, 10.0, 120, 9);
    FeatureMatrix b = tsne_project(x, 10.0, 120, 9);
    CHECK(a.data == b.data);
  }

  SUBCASE("too few points for the perplexity") {
    FeatureMatrix tiny(5, 2);
    CHECK_THROWS_AS(tsne_project(tiny, 30.0, 10, 0), std::invalid_argument);
  }
}
