// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "udaforge/adversarial.hpp"
#include "udaforge/training.hpp"

namespace udaforge {

struct CatConfig {
  double alpha = 0.1;
  double margin = 2.0;                 // m, squared-euclidean units
  std::size_t ensemble_size = 3;
  double accumulation = 0.8;           // EMA decay on accumulated teacher predictions
  double confidence_threshold = 0.9;
};

/// Pairwise pull/push loss: same-label pairs attract, different-label pairs
/// repel until their squared distance reaches the margin. Diagonal pairs are
/// included as written (they contribute zero). Returns the scalar and its
/// exact gradient wrt the feature rows; hinge subgradient is 0 at the kink.
struct ClusteringLossResult {
  double loss = 0.0;
  FeatureMatrix dfeatures;
};
ClusteringLossResult clustering_loss(const FeatureMatrix& features,
                                     std::span<const int> labels, double margin);

/// Per-class feature means; classes absent from the rows are flagged.
struct Centroids {
  FeatureMatrix mat;                 // K x dim
  std::vector<bool> present;
  std::vector<std::size_t> counts;
};
Centroids centroids(const FeatureMatrix& features, std::span<const int> labels,
                    std::size_t num_classes);

/// Mean squared distance between per-class centroids, skipping classes with
/// an absent centroid on either side (K reduced accordingly).
struct AlignmentLossResult {
  double loss = 0.0;
  FeatureMatrix dsource;  // wrt source centroids
  FeatureMatrix dtarget;  // wrt target centroids
  std::size_t classes_used = 0;
};
AlignmentLossResult alignment_loss(const Centroids& source, const Centroids& target);

struct PseudoLabel {
  int label = 0;
  double confidence = 0.0;
  bool accepted = false;
};
using PseudoLabels = std::vector<PseudoLabel>;

struct StudentSnapshot {
  Network encoder;
  Network label_head;
};

/// Ensemble of recent student classifiers plus the EMA of their mean softmax
/// predictions over the target documents, initialized from a uniform prior.
struct Teacher {
  std::vector<StudentSnapshot> snapshots;  // ring buffer, newest last
  FeatureMatrix accumulated;               // n_target x n_classes, rows sum to 1
};
Teacher make_teacher(std::size_t n_target, std::size_t n_classes);

/// Pushes a snapshot (evicting the oldest beyond the ensemble size), folds
/// the buffered ensemble's mean prediction into the accumulator, and emits
/// pseudo-labels gated by the confidence threshold.
PseudoLabels teacher_update(Teacher& teacher, const StudentSnapshot& snapshot,
                            const FeatureMatrix& target_x, const CatConfig& cfg);

struct CatBatch {
  FeatureMatrix source_x;
  std::vector<int> source_labels;
  FeatureMatrix target_x;
  PseudoLabels target_pseudo;  // aligned with target rows
};

struct CatLossResult {
  double loss = 0.0;
  double label_loss = 0.0;
  double cluster_source = 0.0;
  double cluster_target = 0.0;
  double alignment = 0.0;
  GradBuffer encoder_grads;
  GradBuffer label_grads;
  bool target_terms_skipped = false;
};

/// L = L_y + alpha * (L_c(X_s) + L_c(X_t) + L_a); target terms use accepted
/// pseudo-labels only and degrade to source-only when everything is rejected.
CatLossResult cat_loss(const Network& encoder, const Network& label_head,
                       const CatBatch& batch, const CatConfig& cfg, bool train_mode,
                       std::uint64_t rng_seed);

using PseudoLabelSink =
    std::function<void(std::size_t epoch, const PseudoLabels&)>;

/// Teacher-student training; an epoch is a complete pass through the smaller
/// dataset, with one teacher update (and pseudo-label refresh) per epoch.
/// A nonzero cfg.lambda adds the adversarial domain term on top.
UdaOutcome train_cat(const DomainData& source, const DomainData& target,
                     const TrainSettings& cfg, const PseudoLabelSink& on_pseudo = {});

}  // namespace udaforge
