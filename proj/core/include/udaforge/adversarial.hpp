// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <utility>

#include "udaforge/training.hpp"

namespace udaforge {

/// Gradient reversal: identity forward, -lambda * g backward.
struct GrlLayer {
  double lambda = 0.1;
};

FeatureMatrix grl_backward(const FeatureMatrix& g, double lambda);

/// Encoder + label predictor + domain discriminator, with the discriminator
/// attached to a configurable encoder layer through the reversal layer.
struct UdaModel {
  Network encoder;
  Network label_head;
  Network domain_head;
  GrlLayer grl;
  std::size_t tap_layer = 0;
};

UdaModel make_uda_model(std::size_t input_dim, const TrainSettings& cfg);

/// Half labeled source rows, half unlabeled target rows.
struct UdaBatch {
  FeatureMatrix source_x;
  std::vector<int> source_labels;
  FeatureMatrix target_x;
};

struct UdaGrads {
  GradBuffer encoder;
  GradBuffer label_head;
  GradBuffer domain_head;
};

struct UdaLossResult {
  double loss = 0.0;         // L = mean L_y - lambda * mean L_d
  double label_loss = 0.0;   // L_y over source rows
  double domain_loss = 0.0;  // L_d over all rows
  UdaGrads grads;
};

/// Combined objective with gradients realized through the reversal layer:
/// the encoder receives dLy - lambda * dLd, the domain head receives +dLd
/// (one descent step on all three networks performs the minimax update).
UdaLossResult uda_loss(const UdaModel& model, const UdaBatch& batch, bool train_mode,
                       std::uint64_t rng_seed);

struct UdaOutcome {
  UdaModel model;
  RunResult result;
};

/// Adversarial training; epochs pass over the larger dataset, batches are
/// half source half target. Best checkpoint kept by validation accuracy
/// (target validation only when its labels exist and the settings ask).
UdaOutcome train_uda(const DomainData& source, const DomainData& target,
                     const TrainSettings& cfg);

/// The supervised reference point: exactly train_uda with lambda = 0, so the
/// only difference between adapted and unadapted runs is the reversal scale.
UdaOutcome train_baseline(const DomainData& source, const DomainData& target,
                          const TrainSettings& cfg);

/// Pooled documents with cluster/topic-derived domain ids, plus held-out
/// evaluation sets for the underlying classification task.
struct PooledData {
  FeatureMatrix x;
  std::vector<std::optional<int>> labels;
  FeatureMatrix val_x;
  std::vector<int> val_labels;
  FeatureMatrix test_x;
  std::vector<int> test_labels;
};

/// Runs UDA between two clusters: documents with domain id `pair.first` act
/// as the labeled source, `pair.second` as the unlabeled target.
UdaOutcome train_uda_with_domain_labels(const PooledData& data,
                                        const std::vector<int>& domain_labels,
                                        std::pair<int, int> pair,
                                        const TrainSettings& cfg);

}  // namespace udaforge
