// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "udaforge/adversarial.hpp"
#include "udaforge/training.hpp"

namespace udaforge {

struct CdclConfig {
  double tau = 1.0;   // contrastive temperature
  double gamma = 1.0; // weight of the contrastive term in the total loss
};

/// Row-wise L2 normalization; rejects all-zero rows.
FeatureMatrix l2_normalize(const FeatureMatrix& features);

/// Pullback of a gradient through row-wise normalization: given the raw
/// features and dL/dz, returns dL/df.
FeatureMatrix l2_normalize_backward(const FeatureMatrix& features,
                                    const FeatureMatrix& dz);

struct CdcAnchorResult {
  double loss = 0.0;
  std::vector<double> danchor;   // wrt the anchor's normalized features
  FeatureMatrix dopposite;       // wrt the opposite side's normalized features
  bool skipped = false;          // no positives on the opposite side
};

/// Softmax-contrastive loss of one anchor against the whole opposite-domain
/// mini-batch, positives being the opposite rows sharing the anchor's label.
/// Log-sum-exp uses max subtraction.
CdcAnchorResult cdc_anchor_loss(std::span<const double> anchor, int anchor_label,
                                const FeatureMatrix& opposite,
                                std::span<const int> opposite_labels, double tau);

struct CdcLossResult {
  double loss = 0.0;
  FeatureMatrix dsource;  // wrt normalized source features
  FeatureMatrix dtarget;  // wrt normalized target features
  std::size_t skipped_anchors = 0;
};

/// Symmetric cross-domain loss: source anchors contrast against the target
/// rows (pseudo-labeled) and vice versa; each side averages over its
/// non-skipped anchors.
CdcLossResult cdc_loss(const FeatureMatrix& z_source, std::span<const int> source_labels,
                       const FeatureMatrix& z_target, std::span<const int> target_pseudo,
                       double tau);

/// Target pseudo-labels from K-Means seeded at the per-class source centroids;
/// Lloyd iterations run on the target only and cluster k keeps class k's
/// identity. A cluster that empties keeps its previous centroid.
std::vector<int> pseudo_label_kmeans(const FeatureMatrix& z_source,
                                     std::span<const int> source_labels,
                                     const FeatureMatrix& z_target);

/// Per epoch: refresh pseudo-labels, then minimize L_y + gamma * L_CDC.
UdaOutcome train_cdcl(const DomainData& source, const DomainData& target,
                      const TrainSettings& cfg);

}  // namespace udaforge
