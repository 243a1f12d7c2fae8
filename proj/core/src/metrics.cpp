// SPDX-License-Identifier: Apache-2.0
#include "udaforge/metrics.hpp"

#include <stdexcept>

namespace udaforge {

Metrics metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("metrics: predictions/labels length mismatch");
  }
  if (predictions.empty()) throw std::invalid_argument("metrics: empty input");

  Metrics m;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i];
    const int y = labels[i];
    if (p < 0 || p > 1 || y < 0 || y > 1) {
      throw std::invalid_argument("metrics: labels must be binary");
    }
    m.confusion[static_cast<std::size_t>(y)][static_cast<std::size_t>(p)]++;
    if (p == y) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(predictions.size());

  const double tp = static_cast<double>(m.confusion[1][1]);
  const double fp = static_cast<double>(m.confusion[0][1]);
  const double fn = static_cast<double>(m.confusion[1][0]);
  if (tp + fp == 0.0 || tp + fn == 0.0) {
    m.f1 = 0.0;
  } else {
    const double precision = tp / (tp + fp);
    const double recall = tp / (tp + fn);
    m.f1 = precision + recall == 0.0 ? 0.0
                                     : 2.0 * precision * recall / (precision + recall);
  }
  return m;
}

std::vector<int> argmax_rows(const FeatureMatrix& m) {
  std::vector<int> out(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto row = m.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < m.cols; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

bool has_empty_prediction_column(const Confusion& c) {
  for (std::size_t p = 0; p < 2; ++p) {
    if (c[0][p] + c[1][p] == 0) return true;
  }
  return false;
}

}  // namespace udaforge
