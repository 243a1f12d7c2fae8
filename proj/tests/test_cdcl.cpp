// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "udaforge/cdcl.hpp"

using namespace udaforge;

namespace {

// Naive exponentials, no log-sum-exp: the independent contrastive oracle.
double brute_anchor(std::span<const double> a, int label, const FeatureMatrix& opp,
                    const std::vector<int>& labels, double tau) {
  double denom = 0.0;
  for (std::size_t j = 0; j < opp.rows; ++j) {
    denom += std::exp(dot(a, opp.row(j)) / tau);
  }
  double sum = 0.0;
  std::size_t npos = 0;
  for (std::size_t j = 0; j < opp.rows; ++j) {
    if (labels[j] != label) continue;
    ++npos;
    sum += std::log(std::exp(dot(a, opp.row(j)) / tau) / denom);
  }
  return npos == 0 ? 0.0 : -sum / static_cast<double>(npos);
}

double brute_cdc(const FeatureMatrix& zs, const std::vector<int>& ys,
                 const FeatureMatrix& zt, const std::vector<int>& yt, double tau) {
  double total = 0.0;
  for (int side = 0; side < 2; ++side) {
    const FeatureMatrix& anchors = side == 0 ? zs : zt;
    const FeatureMatrix& opp = side == 0 ? zt : zs;
    const std::vector<int>& alab = side == 0 ? ys : yt;
    const std::vector<int>& olab = side == 0 ? yt : ys;
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t a = 0; a < anchors.rows; ++a) {
      bool has_pos = false;
      for (int l : olab) has_pos |= l == alab[a];
      if (!has_pos) continue;
      ++used;
      sum += brute_anchor(anchors.row(a), alab[a], opp, olab, tau);
    }
    if (used > 0) total += sum / static_cast<double>(used);
  }
  return total;
}

FeatureMatrix random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  return l2_normalize(testutil::random_matrix(n, d, rng));
}

}  // namespace

TEST_CASE("l2_normalize: 3-4-5, idempotence, zero rows, jacobian") {
  FeatureMatrix f(1, 2);
  f(0, 0) = 3.0;
  f(0, 1) = 4.0;
  FeatureMatrix z = l2_normalize(f);
  CHECK(z(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(z(0, 1) == doctest::Approx(0.8).epsilon(1e-12));
  FeatureMatrix zz = l2_normalize(z);
  CHECK(zz(0, 0) == doctest::Approx(z(0, 0)).epsilon(1e-12));

  SUBCASE("zero row is rejected") {
    FeatureMatrix bad(2, 2);
    bad(0, 0) = 1.0;
    CHECK_THROWS_WITH_AS(l2_normalize(bad), "l2_normalize: zero feature vector",
                         std::invalid_argument);
  }

  SUBCASE("backward matches finite differences of an arbitrary functional") {
    Rng rng = make_rng(17);
    FeatureMatrix raw = testutil::random_matrix(4, 3, rng);
    FeatureMatrix probe = testutil::random_matrix(4, 3, rng);
    auto functional = [&]() {
      FeatureMatrix n = l2_normalize(raw);
      double s = 0.0;
      for (std::size_t i = 0; i < n.data.size(); ++i) s += n.data[i] * probe.data[i];
      return s;
    };
    FeatureMatrix df = l2_normalize_backward(raw, probe);
    CHECK(testutil::max_rel_error_vs_fd_matrix(raw, functional, df) < 1e-4);
  }
}

TEST_CASE("cdc_anchor_loss: closed forms and the brute-force oracle") {
  SUBCASE("single positive opposite sample costs nothing") {
    FeatureMatrix opp(1, 2);
    opp(0, 0) = 1.0;
    const std::vector<int> labels = {1};
    const double a[2] = {0.0, 1.0};
    CdcAnchorResult res = cdc_anchor_loss({a, 2}, 1, opp, labels, 0.5);
    CHECK(res.loss == doctest::Approx(0.0).epsilon(1e-12));
    CHECK_FALSE(res.skipped);
  }
  SUBCASE("one positive at dot 1, one negative at dot -1, tau 1") {
    FeatureMatrix opp(2, 2);
    opp(0, 0) = 1.0;   // positive, anchor . z = 1
    opp(1, 0) = -1.0;  // negative, anchor . z = -1
    const std::vector<int> labels = {0, 1};
    const double a[2] = {1.0, 0.0};
    CdcAnchorResult res = cdc_anchor_loss({a, 2}, 0, opp, labels, 1.0);
    const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)));
    CHECK(res.loss == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.1269).epsilon(1e-3));
  }
  SUBCASE("batches of 8 match the exhaustive pair oracle to 1e-9") {
    Rng rng = make_rng(23);
    for (int rep = 0; rep < 10; ++rep) {
      FeatureMatrix opp = random_unit_rows(8, 4, rng);
      std::vector<int> labels = testutil::random_labels(8, 2, rng);
      labels[0] = 0;
      labels[1] = 1;
      FeatureMatrix anchor = random_unit_rows(1, 4, rng);
      for (int cls : {0, 1}) {
        CdcAnchorResult res = cdc_anchor_loss(anchor.row(0), cls, opp, labels, 0.5);
        CHECK(res.loss ==
              doctest::Approx(brute_anchor(anchor.row(0), cls, opp, labels, 0.5))
                  .epsilon(1e-9));
        CHECK(res.loss >= -1e-12);
      }
    }
  }
  SUBCASE("no positives: skipped flag, zero contribution") {
    FeatureMatrix opp(2, 2);
    opp(0, 0) = 1.0;
    opp(1, 1) = 1.0;
    const std::vector<int> labels = {1, 1};
    const double a[2] = {1.0, 0.0};
    CdcAnchorResult res = cdc_anchor_loss({a, 2}, 0, opp, labels, 1.0);
    CHECK(res.skipped);
    CHECK(res.loss == 0.0);
  }
}

TEST_CASE("cdc_loss: degenerate batch, oracle agreement, permutation invariance") {
  SUBCASE("degenerate batch: identical features, one label, oracle decides") {
    // With a single sample per side the numerator equals the denominator and
    // the loss is exactly zero; with several identical rows each log term is
    // log(1/|I|), which only the oracle value captures.
    FeatureMatrix one(1, 2);
    one(0, 0) = 1.0;
    const std::vector<int> single = {1};
    CHECK(cdc_loss(one, single, one, single, 0.5).loss ==
          doctest::Approx(0.0).epsilon(1e-12));

    FeatureMatrix z(3, 2);
    for (std::size_t i = 0; i < 3; ++i) z(i, 0) = 1.0;
    const std::vector<int> labels = {1, 1, 1};
    CdcLossResult res = cdc_loss(z, labels, z, labels, 0.5);
    CHECK(res.loss ==
          doctest::Approx(brute_cdc(z, labels, z, labels, 0.5)).epsilon(1e-9));
    CHECK(res.loss == doctest::Approx(2.0 * std::log(3.0)).epsilon(1e-9));
  }
  SUBCASE("random batches match the oracle for every grid tau") {
    Rng rng = make_rng(29);
    for (double tau : {0.1, 0.5, 1.0}) {
      for (int rep = 0; rep < 8; ++rep) {
        FeatureMatrix zs = random_unit_rows(6, 4, rng);
        FeatureMatrix zt = random_unit_rows(5, 4, rng);
        std::vector<int> ys = testutil::random_labels(6, 2, rng);
        std::vector<int> yt = testutil::random_labels(5, 2, rng);
        ys[0] = 0;
        ys[1] = 1;
        yt[0] = 0;
        yt[1] = 1;
        CdcLossResult res = cdc_loss(zs, ys, zt, yt, tau);
        CHECK(res.loss ==
              doctest::Approx(brute_cdc(zs, ys, zt, yt, tau)).epsilon(1e-9));
        CHECK(std::isfinite(res.loss));
      }
    }
  }
  SUBCASE("row permutation within a side leaves the value unchanged") {
    Rng rng = make_rng(31);
    FeatureMatrix zs = random_unit_rows(5, 3, rng);
    FeatureMatrix zt = random_unit_rows(4, 3, rng);
    std::vector<int> ys = {0, 1, 0, 1, 1};
    std::vector<int> yt = {1, 0, 1, 0};
    const double base = cdc_loss(zs, ys, zt, yt, 0.5).loss;

    const std::size_t perm[] = {3, 0, 4, 1, 2};
    FeatureMatrix zp(5, 3);
    std::vector<int> yp(5);
    for (std::size_t i = 0; i < 5; ++i) {
      std::copy(zs.row(perm[i]).begin(), zs.row(perm[i]).end(), zp.row(i).begin());
      yp[i] = ys[perm[i]];
    }
    CHECK(cdc_loss(zp, yp, zt, yt, 0.5).loss == doctest::Approx(base).epsilon(1e-12));
  }
  SUBCASE("gradients through normalization match finite differences") {
    Rng rng = make_rng(37);
    FeatureMatrix fs = testutil::random_matrix(4, 3, rng);
    FeatureMatrix ft = testutil::random_matrix(4, 3, rng);
    std::vector<int> ys = {0, 1, 0, 1};
    std::vector<int> yt = {1, 0, 1, 0};
    auto objective = [&]() {
      return cdc_loss(l2_normalize(fs), ys, l2_normalize(ft), yt, 0.5).loss;
    };
    CdcLossResult res = cdc_loss(l2_normalize(fs), ys, l2_normalize(ft), yt, 0.5);
    FeatureMatrix dfs = l2_normalize_backward(fs, res.dsource);
    FeatureMatrix dft = l2_normalize_backward(ft, res.dtarget);
    CHECK(testutil::max_rel_error_vs_fd_matrix(fs, objective, dfs) < 1e-4);
    CHECK(testutil::max_rel_error_vs_fd_matrix(ft, objective, dft) < 1e-4);
  }
}

TEST_CASE("pseudo_label_kmeans: initialization semantics and recovery") {
  SUBCASE("targets equal to class means label immediately") {
    FeatureMatrix zs(4, 2);
    zs(0, 0) = 1.0;
    zs(1, 0) = 1.0;
    zs(2, 1) = 1.0;
    zs(3, 1) = 1.0;
    const std::vector<int> ys = {0, 0, 1, 1};
    FeatureMatrix zt(2, 2);
    zt(0, 0) = 1.0;  // class-0 mean
    zt(1, 1) = 1.0;  // class-1 mean
    const std::vector<int> labels = pseudo_label_kmeans(zs, ys, zt);
    CHECK(labels == std::vector<int>{0, 1});
  }
  SUBCASE("single Lloyd step on 4 hand-placed points") {
    FeatureMatrix zs(2, 2);
    zs(0, 1) = 1.0;  // class 0 at (0, 1)
    zs(1, 0) = 1.0;  // class 1 at (1, 0)
    const std::vector<int> ys = {0, 1};
    FeatureMatrix zt(4, 2);
    zt(0, 0) = 0.0; zt(0, 1) = 0.9;
    zt(1, 0) = 0.1; zt(1, 1) = 0.8;
    zt(2, 0) = 0.9; zt(2, 1) = 0.1;
    zt(3, 0) = 1.0; zt(3, 1) = 0.0;
    const std::vector<int> labels = pseudo_label_kmeans(zs, ys, zt);
    CHECK(labels == std::vector<int>{0, 0, 1, 1});
  }
  SUBCASE("well-separated blobs recover withheld labels above 95%") {
    Rng rng = make_rng(41);
    FeatureMatrix zs(40, 3);
    std::vector<int> ys(40);
    FeatureMatrix zt(60, 3);
    std::vector<int> truth(60);
    for (std::size_t i = 0; i < 40; ++i) {
      ys[i] = static_cast<int>(i % 2);
      for (std::size_t d = 0; d < 3; ++d) {
        zs(i, d) = 0.15 * normal(rng) + (ys[i] == 0 ? 1.0 : -1.0);
      }
    }
    for (std::size_t i = 0; i < 60; ++i) {
      truth[i] = static_cast<int>(i % 2);
      for (std::size_t d = 0; d < 3; ++d) {
        zt(i, d) = 0.15 * normal(rng) + (truth[i] == 0 ? 1.0 : -1.0);
      }
    }
    const std::vector<int> labels = pseudo_label_kmeans(zs, ys, zt);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < 60; ++i) {
      if (labels[i] == truth[i]) ++hits;
    }
    CHECK(static_cast<double>(hits) / 60.0 >= 0.95);
  }
  SUBCASE("missing source class is rejected") {
    FeatureMatrix zs(2, 2);
    const std::vector<int> ys = {0, 0};
    FeatureMatrix zt(2, 2);
    CHECK_THROWS_AS(pseudo_label_kmeans(zs, ys, zt), std::invalid_argument);
  }
}

TEST_CASE("train_cdcl: gamma 0 is bit-identical to the lambda-0 trajectory") {
  // With equal source/target sizes the epoch definitions coincide, so gamma
  // must be the only difference between the contrastive and plain loops.
  Rng rng = make_rng(53);
  DomainData source;
  source.train_x = testutil::random_matrix(16, 5, rng);
  source.train_labels = testutil::random_labels(16, 2, rng);
  source.train_labels[0] = 0;
  source.train_labels[1] = 1;
  source.val_x = testutil::random_matrix(6, 5, rng);
  source.val_labels = testutil::random_labels(6, 2, rng);
  DomainData target = source;

  TrainSettings cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.encoder_hidden = {8, 4};
  cfg.head_hidden = 8;
  cfg.seed = 21;
  cfg.gamma = 0.0;
  cfg.lambda = 0.0;

  UdaOutcome cdcl = train_cdcl(source, target, cfg);
  UdaOutcome base = train_uda(source, target, cfg);
  for (std::size_t l = 0; l < cdcl.model.encoder.layers.size(); ++l) {
    CHECK(cdcl.model.encoder.layers[l].weights == base.model.encoder.layers[l].weights);
    CHECK(cdcl.model.encoder.layers[l].bias == base.model.encoder.layers[l].bias);
  }
  for (std::size_t l = 0; l < cdcl.model.label_head.layers.size(); ++l) {
    CHECK(cdcl.model.label_head.layers[l].weights ==
          base.model.label_head.layers[l].weights);
  }
}

TEST_CASE("train_cdcl: end-to-end smoke with pseudo accuracy reporting") {
  Rng rng = make_rng(61);
  DomainData source;
  source.train_x = testutil::random_matrix(20, 5, rng);
  source.train_labels = testutil::random_labels(20, 2, rng);
  source.train_labels[0] = 0;
  source.train_labels[1] = 1;
  source.val_x = testutil::random_matrix(8, 5, rng);
  source.val_labels = testutil::random_labels(8, 2, rng);
  DomainData target;
  target.train_x = testutil::random_matrix(18, 5, rng);
  target.train_labels = testutil::random_labels(18, 2, rng);
  target.val_x = testutil::random_matrix(6, 5, rng);
  target.val_labels = testutil::random_labels(6, 2, rng);

  TrainSettings cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.encoder_hidden = {8, 4};
  cfg.head_hidden = 8;
  cfg.seed = 31;
  cfg.tau = 0.5;
  cfg.gamma = 0.5;

  UdaOutcome out = train_cdcl(source, target, cfg);
  bool saw_pseudo = false;
  for (const auto& row : out.result.epoch_rows) {
    if (row.domain == "target" && row.pseudo_acc.has_value()) {
      saw_pseudo = true;
      CHECK(*row.pseudo_acc >= 0.0);
      CHECK(*row.pseudo_acc <= 1.0);
    }
  }
  CHECK(saw_pseudo);
}
