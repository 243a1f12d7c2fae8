// SPDX-License-Identifier: Apache-2.0
#include "udaforge/matrix.hpp"

#include <cmath>

#include "udaforge/rng.hpp"

namespace udaforge {

FeatureMatrix gather_rows(const FeatureMatrix& m, std::span<const std::size_t> idx) {
  FeatureMatrix out(idx.size(), m.cols);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= m.rows) throw std::out_of_range("gather_rows: row index");
    auto src = m.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

std::size_t sample_discrete(Rng& rng, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0)) throw std::invalid_argument("sample_discrete: zero total weight");
  double u = uniform_real(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // Round-off can push u past the last bucket boundary.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return weights.size() - 1;
}

}  // namespace udaforge
