// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace udaforge {

/// Dense row-major real matrix (documents x features). The common currency
/// between the vectorizer, networks, clustering, and topic models.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {data.data() + i * cols, cols};
  }

  bool same_shape(const FeatureMatrix& o) const {
    return rows == o.rows && cols == o.cols;
  }
};

inline void require_shape(const FeatureMatrix& m, std::size_t rows, std::size_t cols,
                          const char* what) {
  if (m.rows != rows || m.cols != cols) {
    throw std::invalid_argument(std::string(what) + ": expected " +
                                std::to_string(rows) + "x" + std::to_string(cols) +
                                ", got " + std::to_string(m.rows) + "x" +
                                std::to_string(m.cols));
  }
}

/// Gathers the listed rows of `m` into a new matrix, preserving order.
FeatureMatrix gather_rows(const FeatureMatrix& m, std::span<const std::size_t> idx);

double squared_distance(std::span<const double> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);

}  // namespace udaforge
