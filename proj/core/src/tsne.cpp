// SPDX-License-Identifier: Apache-2.0
#include "udaforge/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "udaforge/rng.hpp"

namespace udaforge {
namespace {

constexpr double kExaggeration = 12.0;
constexpr std::size_t kExaggerationIters = 250;
constexpr double kEta = 100.0;
constexpr double kMinGain = 0.01;
constexpr double kPFloor = 1e-12;

std::vector<double> pairwise_sq(const FeatureMatrix& x) {
  const std::size_t n = x.rows;
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dist = squared_distance(x.row(i), x.row(j));
      d[i * n + j] = dist;
      d[j * n + i] = dist;
    }
  }
  return d;
}

}  // namespace

FeatureMatrix tsne_conditional_p(const FeatureMatrix& x, double perplexity) {
  const std::size_t n = x.rows;
  if (static_cast<double>(n) < 3.0 * perplexity) {
    throw std::invalid_argument(
        "tsne: too few points for perplexity " + std::to_string(perplexity) +
        "; lower the perplexity");
  }
  const std::vector<double> d = pairwise_sq(x);
  const double target_entropy = std::log(perplexity);

  FeatureMatrix p(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0;
    double beta_lo = 0.0;
    double beta_hi = std::numeric_limits<double>::infinity();
    auto row = p.row(i);
    for (std::size_t it = 0; it < 50; ++it) {
      double sum = 0.0;
      double weighted = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) {
          row[j] = 0.0;
          continue;
        }
        row[j] = std::exp(-beta * d[i * n + j]);
        sum += row[j];
        weighted += beta * d[i * n + j] * row[j];
      }
      if (sum <= 0.0) sum = 1e-300;
      // H = log(sum) + beta * <d> under the current kernel.
      const double entropy = std::log(sum) + weighted / sum;
      const double diff = entropy - target_entropy;
      if (std::abs(diff) < 1e-7) break;
      if (diff > 0.0) {
        beta_lo = beta;
        beta = std::isinf(beta_hi) ? beta * 2.0 : 0.5 * (beta + beta_hi);
      } else {
        beta_hi = beta;
        beta = beta_lo == 0.0 ? beta * 0.5 : 0.5 * (beta + beta_lo);
      }
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += row[j];
    if (sum <= 0.0) sum = 1e-300;
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
  }
  return p;
}

TsneResult tsne_project_traced(const FeatureMatrix& x, double perplexity,
                               std::size_t iters, std::uint64_t seed) {
  const std::size_t n = x.rows;
  FeatureMatrix cond = tsne_conditional_p(x, perplexity);

  // Symmetrized joint distribution, floored.
  std::vector<double> p(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      p[i * n + j] = std::max((cond(i, j) + cond(j, i)) / (2.0 * static_cast<double>(n)),
                              kPFloor);
    }
  }

  TsneResult result;
  result.coords = FeatureMatrix(n, 2);
  Rng rng = make_rng(seed);
  for (double& v : result.coords.data) v = 1e-4 * normal(rng);

  FeatureMatrix vel(n, 2);
  FeatureMatrix gains(n, 2, 1.0);
  std::vector<double> q(n * n, 0.0);

  for (std::size_t iter = 0; iter < iters; ++iter) {
    const double exag = iter < kExaggerationIters ? kExaggeration : 1.0;
    const double momentum = iter < kExaggerationIters ? 0.5 : 0.8;

    // Student-t affinities in the embedding.
    double qsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double w =
            1.0 / (1.0 + squared_distance(result.coords.row(i), result.coords.row(j)));
        q[i * n + j] = w;
        q[j * n + i] = w;
        qsum += 2.0 * w;
      }
    }
    if (qsum <= 0.0) qsum = 1e-300;

    double kl = 0.0;
    FeatureMatrix grad(n, 2);
    for (std::size_t i = 0; i < n; ++i) {
      auto gi = grad.row(i);
      auto yi = result.coords.row(i);
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double pij = exag * p[i * n + j];
        const double qij = std::max(q[i * n + j] / qsum, kPFloor);
        kl += pij * std::log(pij / qij);
        const double mult = 4.0 * (pij - qij) * q[i * n + j];
        auto yj = result.coords.row(j);
        gi[0] += mult * (yi[0] - yj[0]);
        gi[1] += mult * (yi[1] - yj[1]);
      }
    }
    result.kl_trace.push_back(kl);

    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        const double g = grad(i, c);
        const bool same_sign = (g > 0.0) == (vel(i, c) > 0.0);
        gains(i, c) = same_sign ? std::max(kMinGain, gains(i, c) * 0.8)
                                : gains(i, c) + 0.2;
        vel(i, c) = momentum * vel(i, c) - kEta * gains(i, c) * g;
        result.coords(i, c) += vel(i, c);
      }
    }

    double mean[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      mean[0] += result.coords(i, 0);
      mean[1] += result.coords(i, 1);
    }
    mean[0] /= static_cast<double>(n);
    mean[1] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      result.coords(i, 0) -= mean[0];
      result.coords(i, 1) -= mean[1];
    }
  }
  return result;
}

FeatureMatrix tsne_project(const FeatureMatrix& x, double perplexity, std::size_t iters,
                           std::uint64_t seed) {
  return tsne_project_traced(x, perplexity, iters, seed).coords;
}

}  // namespace udaforge
