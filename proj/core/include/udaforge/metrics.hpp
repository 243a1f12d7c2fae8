// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "udaforge/matrix.hpp"

namespace udaforge {

/// 2x2 confusion matrix indexed [actual][predicted].
using Confusion = std::array<std::array<std::size_t, 2>, 2>;

struct Metrics {
  double accuracy = 0.0;
  double f1 = 0.0;  // positive class = 1
  Confusion confusion{};
};

/// Binary accuracy and F1 (positive class 1, F1 = 0 when P or R undefined).
Metrics metrics(std::span<const int> predictions, std::span<const int> labels);

/// Argmax per row, ties resolved to the lowest index.
std::vector<int> argmax_rows(const FeatureMatrix& m);

/// True when some class is never predicted (a confusion-matrix column is
/// empty) -- the degenerate single-class collapse signature.
bool has_empty_prediction_column(const Confusion& c);

}  // namespace udaforge
