// SPDX-License-Identifier: Apache-2.0
#include "udaforge/training.hpp"

#include <stdexcept>

namespace udaforge {

std::vector<int> predict_classes(const Network& encoder, const Network& head,
                                 const FeatureMatrix& x) {
  ForwardPass enc = forward(encoder, x, /*train_mode=*/false, 0);
  ForwardPass out = forward(head, enc.output(), /*train_mode=*/false, 0);
  return argmax_rows(out.output());
}

Metrics evaluate_classifier(const Network& encoder, const Network& head,
                            const FeatureMatrix& x, std::span<const int> labels) {
  const std::vector<int> preds = predict_classes(encoder, head, x);
  return metrics(preds, labels);
}

std::vector<TwoSideBatch> make_epoch_batches(std::size_t n_source, std::size_t n_target,
                                             std::size_t batch_size, EpochOver over,
                                             Rng& rng) {
  if (n_source == 0 || n_target == 0) {
    throw std::invalid_argument("make_epoch_batches: empty side");
  }
  if (batch_size < 2) throw std::invalid_argument("make_epoch_batches: batch_size < 2");
  const std::size_t n_src_per_batch = (batch_size + 1) / 2;
  const std::size_t n_tgt_per_batch = batch_size / 2;

  const bool source_drives = over == EpochOver::larger ? n_source >= n_target
                                                       : n_source <= n_target;
  const std::size_t driver_n = source_drives ? n_source : n_target;
  const std::size_t driver_per_batch = source_drives ? n_src_per_batch : n_tgt_per_batch;
  const std::size_t steps = (driver_n + driver_per_batch - 1) / driver_per_batch;

  std::vector<std::size_t> driver_order(driver_n);
  for (std::size_t i = 0; i < driver_n; ++i) driver_order[i] = i;
  shuffle(driver_order, rng);

  std::vector<TwoSideBatch> batches(steps);
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < steps; ++s) {
    TwoSideBatch& b = batches[s];
    auto& driver_rows = source_drives ? b.source_rows : b.target_rows;
    auto& other_rows = source_drives ? b.target_rows : b.source_rows;
    const std::size_t other_n = source_drives ? n_target : n_source;
    const std::size_t other_per_batch = source_drives ? n_tgt_per_batch : n_src_per_batch;

    for (std::size_t i = 0; i < driver_per_batch; ++i) {
      driver_rows.push_back(driver_order[cursor % driver_n]);
      ++cursor;
    }
    for (std::size_t i = 0; i < other_per_batch; ++i) {
      other_rows.push_back(uniform_index(rng, other_n));
    }
  }
  return batches;
}

}  // namespace udaforge
