// SPDX-License-Identifier: Apache-2.0
#include "udaforge/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "udaforge/rng.hpp"

namespace udaforge {
namespace {

FeatureMatrix normalize_rows_checked(const FeatureMatrix& x) {
  FeatureMatrix out = x;
  for (std::size_t i = 0; i < out.rows; ++i) {
    auto row = out.row(i);
    const double norm = l2_norm(row);
    if (norm > 0.0) {
      for (double& v : row) v /= norm;
    }
  }
  return out;
}

// k-means++: first center uniform, the rest D^2-weighted.
FeatureMatrix kmeanspp_init(const FeatureMatrix& x, std::size_t k, Rng& rng) {
  FeatureMatrix centers(k, x.cols);
  std::vector<double> dist2(x.rows, std::numeric_limits<double>::infinity());

  std::size_t first = uniform_index(rng, x.rows);
  std::copy(x.row(first).begin(), x.row(first).end(), centers.row(0).begin());
  for (std::size_t c = 1; c < k; ++c) {
    for (std::size_t i = 0; i < x.rows; ++i) {
      dist2[i] = std::min(dist2[i], squared_distance(x.row(i), centers.row(c - 1)));
    }
    double total = 0.0;
    for (double d : dist2) total += d;
    std::size_t pick;
    if (total > 0.0) {
      pick = sample_discrete(rng, dist2);
    } else {
      pick = uniform_index(rng, x.rows);  // all points coincide with centers
    }
    std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(c).begin());
  }
  return centers;
}

double assign_points(const FeatureMatrix& x, const FeatureMatrix& centers,
                     std::vector<int>& labels, bool& changed) {
  double distortion = 0.0;
  changed = false;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double best = squared_distance(x.row(i), centers.row(0));
    int best_k = 0;
    for (std::size_t c = 1; c < centers.rows; ++c) {
      const double d = squared_distance(x.row(i), centers.row(c));
      if (d < best) {
        best = d;
        best_k = static_cast<int>(c);
      }
    }
    if (labels[i] != best_k) {
      labels[i] = best_k;
      changed = true;
    }
    distortion += best;
  }
  return distortion;
}

}  // namespace

ClusterModel kmeans(const FeatureMatrix& x, std::size_t k, KmeansMetric metric,
                    std::uint64_t seed, std::size_t max_iter) {
  if (k == 0 || k > x.rows) throw std::invalid_argument("kmeans: need 1 <= k <= rows");

  const FeatureMatrix points =
      metric == KmeansMetric::cosine ? normalize_rows_checked(x) : x;

  ClusterModel model;
  model.algorithm = metric == KmeansMetric::cosine ? "kmeans_cosine" : "kmeans";
  model.k = k;
  model.assignment.assign(points.rows, -1);

  Rng rng = make_rng(seed);
  model.centroids = kmeanspp_init(points, k, rng);

  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    const double distortion = assign_points(points, model.centroids, model.assignment,
                                            changed);
    model.objective_trace.push_back(distortion);
    if (!changed && iter > 0) break;

    FeatureMatrix sums(k, points.cols);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.rows; ++i) {
      auto c = sums.row(static_cast<std::size_t>(model.assignment[i]));
      auto row = points.row(i);
      for (std::size_t d = 0; d < points.cols; ++d) c[d] += row[d];
      ++counts[static_cast<std::size_t>(model.assignment[i])];
    }
    for (std::size_t c = 0; c < k; ++c) {
      auto center = model.centroids.row(c);
      if (counts[c] == 0) {
        // Relocate an empty cluster to the worst-served point.
        std::size_t worst = 0;
        double worst_d = -1.0;
        for (std::size_t i = 0; i < points.rows; ++i) {
          const double d = squared_distance(
              points.row(i),
              model.centroids.row(static_cast<std::size_t>(model.assignment[i])));
          if (d > worst_d) {
            worst_d = d;
            worst = i;
          }
        }
        std::copy(points.row(worst).begin(), points.row(worst).end(), center.begin());
        continue;
      }
      auto s = sums.row(c);
      for (std::size_t d = 0; d < points.cols; ++d) {
        center[d] = s[d] / static_cast<double>(counts[c]);
      }
      if (metric == KmeansMetric::cosine) {
        const double norm = l2_norm(center);
        if (norm > 0.0) {
          for (double& v : center) v /= norm;
        }
      }
    }
  }
  return model;
}

namespace {

double euclid(const FeatureMatrix& x, std::size_t a, std::size_t b) {
  return std::sqrt(squared_distance(x.row(a), x.row(b)));
}

double medoid_cost(const FeatureMatrix& x, const std::vector<std::size_t>& medoids,
                   std::vector<int>* labels_out) {
  double cost = 0.0;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double best = euclid(x, i, medoids[0]);
    int best_m = 0;
    for (std::size_t m = 1; m < medoids.size(); ++m) {
      const double d = euclid(x, i, medoids[m]);
      if (d < best) {
        best = d;
        best_m = static_cast<int>(m);
      }
    }
    cost += best;
    if (labels_out) (*labels_out)[i] = best_m;
  }
  return cost;
}

}  // namespace

namespace {

std::vector<std::size_t> pam_greedy_build(const FeatureMatrix& x, std::size_t k) {
  std::vector<std::size_t> medoids;
  std::vector<bool> is_medoid(x.rows, false);
  std::size_t best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t cand = 0; cand < x.rows; ++cand) {
    double c = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) c += euclid(x, i, cand);
    if (c < best_cost) {
      best_cost = c;
      best = cand;
    }
  }
  medoids.push_back(best);
  is_medoid[best] = true;

  std::vector<double> nearest(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) nearest[i] = euclid(x, i, medoids[0]);
  while (medoids.size() < k) {
    std::size_t pick = 0;
    double best_gain = -std::numeric_limits<double>::infinity();
    for (std::size_t cand = 0; cand < x.rows; ++cand) {
      if (is_medoid[cand]) continue;
      double gain = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) {
        const double d = euclid(x, i, cand);
        if (d < nearest[i]) gain += nearest[i] - d;
      }
      if (gain > best_gain) {
        best_gain = gain;
        pick = cand;
      }
    }
    medoids.push_back(pick);
    is_medoid[pick] = true;
    for (std::size_t i = 0; i < x.rows; ++i) {
      nearest[i] = std::min(nearest[i], euclid(x, i, pick));
    }
  }
  return medoids;
}

struct PamRun {
  std::vector<std::size_t> medoids;
  std::vector<int> assignment;
  std::vector<double> trace;
  double cost = 0.0;
};

// Best-improvement swaps until none improves.
PamRun pam_swap_phase(const FeatureMatrix& x, std::vector<std::size_t> medoids,
                      std::size_t max_iter) {
  PamRun run;
  run.assignment.assign(x.rows, 0);
  std::vector<bool> is_medoid(x.rows, false);
  for (std::size_t m : medoids) is_medoid[m] = true;

  run.cost = medoid_cost(x, medoids, &run.assignment);
  run.trace.push_back(run.cost);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    double best_cost = run.cost;
    std::size_t best_m = 0;
    std::size_t best_o = 0;
    bool found = false;
    for (std::size_t m = 0; m < medoids.size(); ++m) {
      const std::size_t old = medoids[m];
      for (std::size_t o = 0; o < x.rows; ++o) {
        if (is_medoid[o]) continue;
        medoids[m] = o;
        const double c = medoid_cost(x, medoids, nullptr);
        if (c < best_cost - 1e-15) {
          best_cost = c;
          best_m = m;
          best_o = o;
          found = true;
        }
      }
      medoids[m] = old;
    }
    if (!found) break;
    is_medoid[medoids[best_m]] = false;
    is_medoid[best_o] = true;
    medoids[best_m] = best_o;
    run.cost = medoid_cost(x, medoids, &run.assignment);
    run.trace.push_back(run.cost);
  }
  run.medoids = std::move(medoids);
  return run;
}

}  // namespace

ClusterModel kmedoids(const FeatureMatrix& x, std::size_t k, std::uint64_t seed,
                      std::size_t max_iter) {
  if (k == 0 || k > x.rows) throw std::invalid_argument("kmedoids: need 1 <= k <= rows");

  // The greedy build plus a few seeded random builds; swaps alone can stall
  // in a local optimum that restarts escape.
  constexpr std::size_t kRestarts = 4;
  PamRun best = pam_swap_phase(x, pam_greedy_build(x, k), max_iter);
  Rng rng = make_rng(seed);
  for (std::size_t r = 0; r < kRestarts; ++r) {
    std::vector<std::size_t> order(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) order[i] = i;
    shuffle(order, rng);
    order.resize(k);
    PamRun run = pam_swap_phase(x, std::move(order), max_iter);
    if (run.cost < best.cost - 1e-15) best = std::move(run);
  }

  ClusterModel model;
  model.algorithm = "kmedoids";
  model.k = k;
  model.assignment = std::move(best.assignment);
  model.objective_trace = std::move(best.trace);
  model.medoids = std::move(best.medoids);
  return model;
}

ClusterModel gmm_em(const FeatureMatrix& x, std::size_t k, std::uint64_t seed,
                    double tol, std::size_t max_iter) {
  if (k == 0 || k > x.rows) throw std::invalid_argument("gmm_em: need 1 <= k <= rows");
  if (x.cols == 0) throw std::invalid_argument("gmm_em: need at least one dimension");
  constexpr double kVarFloor = 1e-6;
  constexpr double kLog2Pi = 1.8378770664093453;

  ClusterModel model;
  model.algorithm = "gmm";
  model.k = k;

  // Initialize from k-means.
  ClusterModel init = kmeans(x, k, KmeansMetric::euclidean, seed);
  model.gmm.means = init.centroids;
  model.gmm.weights.assign(k, 0.0);
  model.gmm.variances = FeatureMatrix(k, x.cols);
  {
    std::vector<std::size_t> counts(k, 0);
    for (int a : init.assignment) ++counts[static_cast<std::size_t>(a)];
    for (std::size_t c = 0; c < k; ++c) {
      model.gmm.weights[c] =
          std::max<double>(1.0, static_cast<double>(counts[c])) /
          static_cast<double>(x.rows);
    }
    double wsum = 0.0;
    for (double w : model.gmm.weights) wsum += w;
    for (double& w : model.gmm.weights) w /= wsum;

    for (std::size_t i = 0; i < x.rows; ++i) {
      const auto c = static_cast<std::size_t>(init.assignment[i]);
      auto v = model.gmm.variances.row(c);
      auto mu = model.gmm.means.row(c);
      auto row = x.row(i);
      for (std::size_t d = 0; d < x.cols; ++d) {
        const double diff = row[d] - mu[d];
        v[d] += diff * diff;
      }
    }
    bool floored = false;
    for (std::size_t c = 0; c < k; ++c) {
      auto v = model.gmm.variances.row(c);
      const double denom = std::max<double>(1.0, static_cast<double>(counts[c]));
      for (std::size_t d = 0; d < x.cols; ++d) {
        v[d] /= denom;
        if (v[d] < kVarFloor) {
          v[d] = kVarFloor;
          floored = true;
        }
      }
    }
    if (floored) model.warnings.push_back("variance floored at 1e-6 during init");
  }

  FeatureMatrix resp(x.rows, k);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    // E-step with log-sum-exp.
    double loglik = 0.0;
    for (std::size_t i = 0; i < x.rows; ++i) {
      auto r = resp.row(i);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        double lp = std::log(model.gmm.weights[c]);
        auto mu = model.gmm.means.row(c);
        auto v = model.gmm.variances.row(c);
        auto row = x.row(i);
        for (std::size_t d = 0; d < x.cols; ++d) {
          const double diff = row[d] - mu[d];
          lp += -0.5 * (kLog2Pi + std::log(v[d])) - diff * diff / (2.0 * v[d]);
        }
        r[c] = lp;
        mx = std::max(mx, lp);
      }
      double sum = 0.0;
      for (std::size_t c = 0; c < k; ++c) sum += std::exp(r[c] - mx);
      const double lse = mx + std::log(sum);
      loglik += lse;
      for (std::size_t c = 0; c < k; ++c) r[c] = std::exp(r[c] - lse);
    }
    model.objective_trace.push_back(loglik);
    if (loglik - prev_ll < tol && iter > 0) break;
    prev_ll = loglik;

    // M-step.
    bool floored = false;
    for (std::size_t c = 0; c < k; ++c) {
      double nc = 0.0;
      for (std::size_t i = 0; i < x.rows; ++i) nc += resp(i, c);
      if (nc <= 0.0) nc = 1e-12;
      model.gmm.weights[c] = nc / static_cast<double>(x.rows);
      auto mu = model.gmm.means.row(c);
      std::fill(mu.begin(), mu.end(), 0.0);
      for (std::size_t i = 0; i < x.rows; ++i) {
        auto row = x.row(i);
        const double w = resp(i, c);
        for (std::size_t d = 0; d < x.cols; ++d) mu[d] += w * row[d];
      }
      for (std::size_t d = 0; d < x.cols; ++d) mu[d] /= nc;
      auto v = model.gmm.variances.row(c);
      std::fill(v.begin(), v.end(), 0.0);
      for (std::size_t i = 0; i < x.rows; ++i) {
        auto row = x.row(i);
        const double w = resp(i, c);
        for (std::size_t d = 0; d < x.cols; ++d) {
          const double diff = row[d] - mu[d];
          v[d] += w * diff * diff;
        }
      }
      for (std::size_t d = 0; d < x.cols; ++d) {
        v[d] /= nc;
        if (v[d] < kVarFloor) {
          v[d] = kVarFloor;
          floored = true;
        }
      }
    }
    if (floored && model.warnings.empty()) {
      model.warnings.push_back("variance floored at 1e-6");
    }

    double wsum = 0.0;
    for (double w : model.gmm.weights) wsum += w;
    for (double& w : model.gmm.weights) w /= wsum;
  }

  model.assignment.assign(x.rows, 0);
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto r = resp.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (r[c] > r[best]) best = c;
    }
    model.assignment[i] = static_cast<int>(best);
  }
  model.centroids = model.gmm.means;
  return model;
}

ElbowResult elbow_k(const FeatureMatrix& x, const std::string& algorithm,
                    std::span<const std::size_t> k_range, std::uint64_t seed) {
  if (k_range.size() < 3) {
    throw std::invalid_argument("elbow_k: need at least 3 candidate values");
  }
  std::vector<std::size_t> ks(k_range.begin(), k_range.end());
  std::sort(ks.begin(), ks.end());

  ElbowResult out;
  for (std::size_t k : ks) {
    double distortion;
    if (algorithm == "kmeans") {
      distortion = kmeans(x, k, KmeansMetric::euclidean, seed).objective_trace.back();
    } else if (algorithm == "kmeans_cosine") {
      distortion = kmeans(x, k, KmeansMetric::cosine, seed).objective_trace.back();
    } else if (algorithm == "kmedoids") {
      distortion = kmedoids(x, k, seed).objective_trace.back();
    } else if (algorithm == "gmm") {
      distortion = -gmm_em(x, k, seed).objective_trace.back();
    } else {
      throw std::invalid_argument("elbow_k: unknown algorithm " + algorithm);
    }
    out.distortions.push_back(distortion);
  }

  out.k = knee_from_distortions(out.distortions, ks, out.warned);
  return out;
}

std::size_t knee_from_distortions(std::span<const double> distortions,
                                  std::span<const std::size_t> ks, bool& warned) {
  if (distortions.size() != ks.size() || ks.size() < 3) {
    throw std::invalid_argument("knee_from_distortions: need >= 3 aligned values");
  }
  double best_curv = 0.0;
  std::size_t best_idx = 0;
  bool found = false;
  for (std::size_t i = 1; i + 1 < ks.size(); ++i) {
    const double curv = distortions[i - 1] - 2.0 * distortions[i] + distortions[i + 1];
    if (std::isfinite(curv) && curv > best_curv) {
      best_curv = curv;
      best_idx = i;
      found = true;
    }
  }
  const double scale = std::max(1.0, std::abs(distortions.front()));
  if (!found || best_curv <= 1e-9 * scale) {
    warned = true;
    return ks.front();
  }
  warned = false;
  return ks[best_idx];
}

}  // namespace udaforge
