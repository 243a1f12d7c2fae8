// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "udaforge/matrix.hpp"
#include "udaforge/metrics.hpp"
#include "udaforge/nnet.hpp"
#include "udaforge/rng.hpp"

namespace udaforge {

/// One domain, vectorized and split. Target-domain label vectors may be
/// empty (unlabeled) or populated for evaluation only -- the training loops
/// never read them.
struct DomainData {
  FeatureMatrix train_x;
  std::vector<int> train_labels;
  FeatureMatrix val_x;
  std::vector<int> val_labels;
  FeatureMatrix test_x;
  std::vector<int> test_labels;
  std::vector<std::string> train_ids;
};

struct TrainSettings {
  std::size_t epochs = 3;
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  double weight_decay = 1e-3;
  double warmup_fraction = 0.05;
  double dropout = 0.1;
  std::vector<std::size_t> encoder_hidden = {256, 64};
  std::size_t head_hidden = 256;
  std::uint64_t seed = 0;
  bool select_by_target_val = false;  // usable only when target labels exist

  // uda
  double lambda = 0.1;
  std::optional<std::size_t> tap_layer;  // default: final encoder layer

  // cat
  double alpha = 0.1;
  double margin = 2.0;
  std::size_t ensemble_size = 3;
  double accumulation = 0.8;
  double confidence_threshold = 0.9;

  // cdcl
  double tau = 1.0;
  double gamma = 1.0;
};

struct MetricRow {
  std::size_t epoch;
  std::string split;
  std::string domain;
  double acc;
  double f1;
  std::optional<double> pseudo_acc;
};

struct RunResult {
  std::vector<MetricRow> epoch_rows;
  std::optional<Metrics> test_source;
  std::optional<Metrics> test_target;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  /// Epochs whose validation predictions used a single class only (the
  /// degenerate collapse signature of an over-weighted reversal).
  std::size_t collapsed_epochs = 0;
  double wall_seconds = 0.0;
  std::vector<std::string> warnings;
};

std::vector<int> predict_classes(const Network& encoder, const Network& head,
                                 const FeatureMatrix& x);
Metrics evaluate_classifier(const Network& encoder, const Network& head,
                            const FeatureMatrix& x, std::span<const int> labels);

/// Index pairs for one epoch of two-sided batches: exactly ceil(B/2) source
/// and floor(B/2) target rows each. The driving side is consumed in shuffled
/// order (wrapping to fill the last batch); the other side is resampled with
/// replacement.
struct TwoSideBatch {
  std::vector<std::size_t> source_rows;
  std::vector<std::size_t> target_rows;
};
enum class EpochOver { larger, smaller };
std::vector<TwoSideBatch> make_epoch_batches(std::size_t n_source, std::size_t n_target,
                                             std::size_t batch_size, EpochOver over,
                                             Rng& rng);

}  // namespace udaforge
