// SPDX-License-Identifier: Apache-2.0
#include "udaforge/cat.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

namespace udaforge {

ClusteringLossResult clustering_loss(const FeatureMatrix& features,
                                     std::span<const int> labels, double margin) {
  const std::size_t n = features.rows;
  if (n < 2) throw std::invalid_argument("clustering_loss: needs >= 2 samples");
  if (labels.size() != n) {
    throw std::invalid_argument("clustering_loss: labels/rows mismatch");
  }
  if (margin <= 0.0) throw std::invalid_argument("clustering_loss: margin must be > 0");

  ClusteringLossResult out;
  out.dfeatures = FeatureMatrix(n, features.cols);
  const double inv_n2 = 1.0 / (static_cast<double>(n) * static_cast<double>(n));

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;  // d(f_i, f_i) = 0 contributes nothing
      const double d = squared_distance(features.row(i), features.row(j));
      const bool same = labels[i] == labels[j];
      double coeff;  // gradient scale on (f_i - f_j) wrt f_i
      if (same) {
        out.loss += inv_n2 * d;
        coeff = 2.0 * inv_n2;
      } else if (d < margin) {
        out.loss += inv_n2 * (margin - d);
        coeff = -2.0 * inv_n2;
      } else {
        continue;  // satisfied margin, subgradient 0 at the kink
      }
      auto fi = features.row(i);
      auto fj = features.row(j);
      auto gi = out.dfeatures.row(i);
      auto gj = out.dfeatures.row(j);
      for (std::size_t c = 0; c < features.cols; ++c) {
        const double diff = fi[c] - fj[c];
        gi[c] += coeff * diff;
        gj[c] -= coeff * diff;
      }
    }
  }
  return out;
}

Centroids centroids(const FeatureMatrix& features, std::span<const int> labels,
                    std::size_t num_classes) {
  if (labels.size() != features.rows) {
    throw std::invalid_argument("centroids: labels/rows mismatch");
  }
  Centroids out;
  out.mat = FeatureMatrix(num_classes, features.cols);
  out.present.assign(num_classes, false);
  out.counts.assign(num_classes, 0);
  for (std::size_t i = 0; i < features.rows; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
      throw std::invalid_argument("centroids: label out of range");
    }
    auto row = features.row(i);
    auto c = out.mat.row(static_cast<std::size_t>(y));
    for (std::size_t d = 0; d < features.cols; ++d) c[d] += row[d];
    out.counts[static_cast<std::size_t>(y)]++;
  }
  for (std::size_t k = 0; k < num_classes; ++k) {
    if (out.counts[k] > 0) {
      out.present[k] = true;
      auto c = out.mat.row(k);
      const double inv = 1.0 / static_cast<double>(out.counts[k]);
      for (std::size_t d = 0; d < features.cols; ++d) c[d] *= inv;
    }
  }
  return out;
}

AlignmentLossResult alignment_loss(const Centroids& source, const Centroids& target) {
  if (source.mat.rows != target.mat.rows || source.mat.cols != target.mat.cols) {
    throw std::invalid_argument("alignment_loss: centroid shapes differ");
  }
  const std::size_t k_total = source.mat.rows;
  AlignmentLossResult out;
  out.dsource = FeatureMatrix(k_total, source.mat.cols);
  out.dtarget = FeatureMatrix(k_total, source.mat.cols);
  for (std::size_t k = 0; k < k_total; ++k) {
    if (source.present[k] && target.present[k]) ++out.classes_used;
  }
  if (out.classes_used == 0) {
    throw std::runtime_error("alignment_loss: no shared class present");
  }
  const double inv_k = 1.0 / static_cast<double>(out.classes_used);
  for (std::size_t k = 0; k < k_total; ++k) {
    if (!source.present[k] || !target.present[k]) continue;
    auto s = source.mat.row(k);
    auto t = target.mat.row(k);
    auto ds = out.dsource.row(k);
    auto dt = out.dtarget.row(k);
    for (std::size_t d = 0; d < source.mat.cols; ++d) {
      const double diff = s[d] - t[d];
      out.loss += inv_k * diff * diff;
      ds[d] = 2.0 * inv_k * diff;
      dt[d] = -2.0 * inv_k * diff;
    }
  }
  return out;
}

Teacher make_teacher(std::size_t n_target, std::size_t n_classes) {
  Teacher t;
  t.accumulated = FeatureMatrix(n_target, n_classes,
                                1.0 / static_cast<double>(n_classes));
  return t;
}

namespace {

PseudoLabels pseudo_from_accumulated(const FeatureMatrix& accumulated,
                                     double confidence_threshold) {
  PseudoLabels out(accumulated.rows);
  for (std::size_t i = 0; i < accumulated.rows; ++i) {
    auto row = accumulated.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < accumulated.cols; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[i].label = static_cast<int>(best);
    out[i].confidence = row[best];
    out[i].accepted = row[best] >= confidence_threshold;
  }
  return out;
}

FeatureMatrix snapshot_probs(const StudentSnapshot& s, const FeatureMatrix& x) {
  ForwardPass enc = forward(s.encoder, x, /*train_mode=*/false, 0);
  ForwardPass head = forward(s.label_head, enc.output(), /*train_mode=*/false, 0);
  return softmax_rows(head.output());
}

}  // namespace

PseudoLabels teacher_update(Teacher& teacher, const StudentSnapshot& snapshot,
                            const FeatureMatrix& target_x, const CatConfig& cfg) {
  if (target_x.rows != teacher.accumulated.rows) {
    throw std::invalid_argument("teacher_update: target size changed");
  }
  teacher.snapshots.push_back(snapshot);
  while (teacher.snapshots.size() > cfg.ensemble_size) {
    teacher.snapshots.erase(teacher.snapshots.begin());
  }

  FeatureMatrix mean(target_x.rows, teacher.accumulated.cols);
  for (const StudentSnapshot& s : teacher.snapshots) {
    FeatureMatrix p = snapshot_probs(s, target_x);
    for (std::size_t i = 0; i < mean.data.size(); ++i) mean.data[i] += p.data[i];
  }
  const double inv = 1.0 / static_cast<double>(teacher.snapshots.size());
  for (double& v : mean.data) v *= inv;

  for (std::size_t i = 0; i < teacher.accumulated.data.size(); ++i) {
    teacher.accumulated.data[i] =
        cfg.accumulation * teacher.accumulated.data[i] +
        (1.0 - cfg.accumulation) * mean.data[i];
  }
  return pseudo_from_accumulated(teacher.accumulated, cfg.confidence_threshold);
}

namespace {

struct CatCore {
  double label_loss = 0.0;
  double cluster_source = 0.0;
  double cluster_target = 0.0;
  double alignment = 0.0;
  FeatureMatrix dfeatures;  // (ns + nt) x dim, alpha already applied
  GradBuffer label_grads;
  bool target_terms_skipped = false;
};

// All loss terms given the encoder features for [source; target] rows.
CatCore cat_core(const Network& label_head, const FeatureMatrix& feats,
                 const CatBatch& batch, const CatConfig& cfg, double alpha,
                 bool train_mode, std::uint64_t rng_seed) {
  const std::size_t ns = batch.source_x.rows;
  const std::size_t nt = batch.target_x.rows;
  const std::size_t dim = feats.cols;

  CatCore core;
  core.dfeatures = FeatureMatrix(ns + nt, dim);

  FeatureMatrix src_feat(ns, dim);
  std::copy(feats.data.begin(), feats.data.begin() + static_cast<long>(ns * dim),
            src_feat.data.begin());

  ForwardPass head_fwd = forward(label_head, src_feat, train_mode,
                                 derive_seed(rng_seed, 1));
  XentResult xy = xent_loss(head_fwd.output(), batch.source_labels);
  BackwardResult head_bwd = backward(label_head, head_fwd, xy.dlogits);
  core.label_loss = xy.loss;
  core.label_grads = std::move(head_bwd.grads);
  for (std::size_t i = 0; i < ns; ++i) {
    auto dst = core.dfeatures.row(i);
    auto src = head_bwd.dinput.row(i);
    for (std::size_t d = 0; d < dim; ++d) dst[d] += src[d];
  }

  if (alpha == 0.0) return core;

  ClusteringLossResult lc_s = clustering_loss(src_feat, batch.source_labels, cfg.margin);
  core.cluster_source = lc_s.loss;
  for (std::size_t i = 0; i < ns; ++i) {
    auto dst = core.dfeatures.row(i);
    auto src = lc_s.dfeatures.row(i);
    for (std::size_t d = 0; d < dim; ++d) dst[d] += alpha * src[d];
  }

  std::vector<std::size_t> accepted;
  std::vector<int> accepted_labels;
  for (std::size_t t = 0; t < nt; ++t) {
    if (batch.target_pseudo[t].accepted) {
      accepted.push_back(t);
      accepted_labels.push_back(batch.target_pseudo[t].label);
    }
  }
  core.target_terms_skipped = accepted.empty();

  FeatureMatrix tgt_feat(accepted.size(), dim);
  for (std::size_t a = 0; a < accepted.size(); ++a) {
    auto src = feats.row(ns + accepted[a]);
    std::copy(src.begin(), src.end(), tgt_feat.row(a).begin());
  }

  if (accepted.size() >= 2) {
    ClusteringLossResult lc_t = clustering_loss(tgt_feat, accepted_labels, cfg.margin);
    core.cluster_target = lc_t.loss;
    for (std::size_t a = 0; a < accepted.size(); ++a) {
      auto dst = core.dfeatures.row(ns + accepted[a]);
      auto src = lc_t.dfeatures.row(a);
      for (std::size_t d = 0; d < dim; ++d) dst[d] += alpha * src[d];
    }
  }

  if (!accepted.empty()) {
    Centroids cs = centroids(src_feat, batch.source_labels, 2);
    Centroids ct = centroids(tgt_feat, accepted_labels, 2);
    bool shared = false;
    for (std::size_t k = 0; k < 2; ++k) shared |= cs.present[k] && ct.present[k];
    if (shared) {
      AlignmentLossResult la = alignment_loss(cs, ct);
      core.alignment = la.loss;
      for (std::size_t i = 0; i < ns; ++i) {
        const auto k = static_cast<std::size_t>(batch.source_labels[i]);
        if (!ct.present[k]) continue;
        auto dst = core.dfeatures.row(i);
        auto dc = la.dsource.row(k);
        const double w = alpha / static_cast<double>(cs.counts[k]);
        for (std::size_t d = 0; d < dim; ++d) dst[d] += w * dc[d];
      }
      for (std::size_t a = 0; a < accepted.size(); ++a) {
        const auto k = static_cast<std::size_t>(accepted_labels[a]);
        if (!cs.present[k]) continue;
        auto dst = core.dfeatures.row(ns + accepted[a]);
        auto dc = la.dtarget.row(k);
        const double w = alpha / static_cast<double>(ct.counts[k]);
        for (std::size_t d = 0; d < dim; ++d) dst[d] += w * dc[d];
      }
    }
  }
  return core;
}

FeatureMatrix stack_batch(const FeatureMatrix& a, const FeatureMatrix& b) {
  FeatureMatrix out(a.rows + b.rows, a.cols);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(),
            out.data.begin() + static_cast<long>(a.data.size()));
  return out;
}

}  // namespace

CatLossResult cat_loss(const Network& encoder, const Network& label_head,
                       const CatBatch& batch, const CatConfig& cfg, bool train_mode,
                       std::uint64_t rng_seed) {
  if (batch.source_x.rows == 0) {
    throw std::invalid_argument("cat_loss: batch with zero source rows");
  }
  if (batch.target_pseudo.size() != batch.target_x.rows) {
    throw std::invalid_argument("cat_loss: pseudo labels do not cover target rows");
  }

  const FeatureMatrix x = stack_batch(batch.source_x, batch.target_x);
  ForwardPass enc = forward(encoder, x, train_mode, derive_seed(rng_seed, 0));
  CatCore core = cat_core(label_head, enc.output(), batch, cfg, cfg.alpha, train_mode,
                          rng_seed);
  BackwardResult enc_bwd = backward(encoder, enc, core.dfeatures);

  CatLossResult out;
  out.label_loss = core.label_loss;
  out.cluster_source = core.cluster_source;
  out.cluster_target = core.cluster_target;
  out.alignment = core.alignment;
  out.loss = core.label_loss +
             cfg.alpha * (core.cluster_source + core.cluster_target + core.alignment);
  out.encoder_grads = std::move(enc_bwd.grads);
  out.label_grads = std::move(core.label_grads);
  out.target_terms_skipped = core.target_terms_skipped;
  return out;
}

UdaOutcome train_cat(const DomainData& source, const DomainData& target,
                     const TrainSettings& cfg, const PseudoLabelSink& on_pseudo) {
  const auto t0 = std::chrono::steady_clock::now();
  if (source.train_x.rows == 0 || target.train_x.rows == 0) {
    throw std::invalid_argument("train_cat: empty training split");
  }
  if (source.train_labels.size() != source.train_x.rows) {
    throw std::invalid_argument("train_cat: source training split must be fully labeled");
  }

  CatConfig cat_cfg;
  cat_cfg.alpha = cfg.alpha;
  cat_cfg.margin = cfg.margin;
  cat_cfg.ensemble_size = cfg.ensemble_size;
  cat_cfg.accumulation = cfg.accumulation;
  cat_cfg.confidence_threshold = cfg.confidence_threshold;

  UdaOutcome out;
  out.model = make_uda_model(source.train_x.cols, cfg);
  const bool adversarial = cfg.lambda != 0.0;

  const std::size_t ns = source.train_x.rows;
  const std::size_t nt = target.train_x.rows;
  const std::size_t smaller = std::min(ns, nt);
  const std::size_t driver_half =
      ns <= nt ? (cfg.batch_size + 1) / 2 : cfg.batch_size / 2;
  const std::size_t steps_per_epoch = (smaller + driver_half - 1) / driver_half;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;

  Optimizer opt_enc = make_optimizer(out.model.encoder, cfg.learning_rate, total_steps,
                                     cfg.weight_decay, cfg.warmup_fraction);
  Optimizer opt_label = make_optimizer(out.model.label_head, cfg.learning_rate,
                                       total_steps, cfg.weight_decay, cfg.warmup_fraction);
  Optimizer opt_dom = make_optimizer(out.model.domain_head, cfg.learning_rate,
                                     total_steps, cfg.weight_decay, cfg.warmup_fraction);

  Teacher teacher = make_teacher(nt, 2);
  PseudoLabels pseudo =
      pseudo_from_accumulated(teacher.accumulated, cat_cfg.confidence_threshold);

  const bool target_val_labeled = !target.val_labels.empty();
  const bool select_on_target = cfg.select_by_target_val && target_val_labeled;
  const bool target_train_labeled = target.train_labels.size() == nt;

  UdaModel best = out.model;
  double best_metric = -1.0;
  std::size_t global_step = 0;
  std::size_t rejected_batches = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng epoch_rng = derive_rng(cfg.seed, 1000 + epoch);
    const auto batches =
        make_epoch_batches(ns, nt, cfg.batch_size, EpochOver::smaller, epoch_rng);
    for (const TwoSideBatch& idx : batches) {
      CatBatch batch;
      batch.source_x = gather_rows(source.train_x, idx.source_rows);
      batch.target_x = gather_rows(target.train_x, idx.target_rows);
      for (std::size_t r : idx.source_rows) {
        batch.source_labels.push_back(source.train_labels[r]);
      }
      for (std::size_t r : idx.target_rows) batch.target_pseudo.push_back(pseudo[r]);

      const std::uint64_t step_seed = derive_seed(cfg.seed, 500000 + global_step);
      const FeatureMatrix x = stack_batch(batch.source_x, batch.target_x);
      ForwardPass enc = forward(out.model.encoder, x, true, derive_seed(step_seed, 0));
      CatCore core = cat_core(out.model.label_head, enc.output(), batch, cat_cfg,
                              cfg.alpha, true, step_seed);
      if (core.target_terms_skipped && cfg.alpha != 0.0) ++rejected_batches;

      BackwardResult enc_bwd;
      if (adversarial) {
        std::vector<int> domains(x.rows, 0);
        std::fill(domains.begin() + static_cast<long>(batch.source_x.rows),
                  domains.end(), 1);
        const FeatureMatrix& tap_out = enc.layer_output(out.model.tap_layer);
        ForwardPass dom_fwd = forward(out.model.domain_head, tap_out, true,
                                      derive_seed(step_seed, 2));
        XentResult xd = xent_loss(dom_fwd.output(), domains);
        BackwardResult dom_bwd = backward(out.model.domain_head, dom_fwd, xd.dlogits);
        FeatureMatrix dtap_rev = grl_backward(dom_bwd.dinput, cfg.lambda);
        const TapGradient taps[] = {{out.model.tap_layer, &dtap_rev}};
        enc_bwd = backward(out.model.encoder, enc, core.dfeatures, taps);
        step(opt_dom, out.model.domain_head, dom_bwd.grads);
      } else {
        enc_bwd = backward(out.model.encoder, enc, core.dfeatures);
      }
      step(opt_enc, out.model.encoder, enc_bwd.grads);
      step(opt_label, out.model.label_head, core.label_grads);
      ++global_step;
    }

    // Teacher snapshot at the epoch boundary refreshes every pseudo-label.
    pseudo = teacher_update(teacher, {out.model.encoder, out.model.label_head},
                            target.train_x, cat_cfg);
    if (on_pseudo) on_pseudo(epoch, pseudo);

    std::optional<double> pseudo_acc;
    if (target_train_labeled) {
      std::size_t hits = 0;
      std::size_t used = 0;
      for (std::size_t i = 0; i < nt; ++i) {
        if (!pseudo[i].accepted) continue;
        ++used;
        if (pseudo[i].label == target.train_labels[i]) ++hits;
      }
      if (used > 0) pseudo_acc = static_cast<double>(hits) / static_cast<double>(used);
    }

    double selection_metric = 0.0;
    if (source.val_x.rows > 0) {
      Metrics m = evaluate_classifier(out.model.encoder, out.model.label_head,
                                      source.val_x, source.val_labels);
      out.result.epoch_rows.push_back(
          {epoch, "validation", "source", m.accuracy, m.f1,
           target_val_labeled ? std::nullopt : pseudo_acc});
      if (!select_on_target) selection_metric = m.accuracy;
    }
    if (target.val_x.rows > 0 && target_val_labeled) {
      Metrics m = evaluate_classifier(out.model.encoder, out.model.label_head,
                                      target.val_x, target.val_labels);
      out.result.epoch_rows.push_back(
          {epoch, "validation", "target", m.accuracy, m.f1, pseudo_acc});
      if (select_on_target) selection_metric = m.accuracy;
    }

    if (selection_metric > best_metric) {
      best_metric = selection_metric;
      best = out.model;
      out.result.best_epoch = epoch;
    }
  }

  if (rejected_batches > 0) {
    out.result.warnings.push_back(
        "target pseudo-labels all rejected in " + std::to_string(rejected_batches) +
        " batches; source-only clustering terms used");
  }

  out.model = best;
  out.result.best_val_accuracy = best_metric;
  if (source.test_x.rows > 0 && !source.test_labels.empty()) {
    out.result.test_source = evaluate_classifier(
        out.model.encoder, out.model.label_head, source.test_x, source.test_labels);
  }
  if (target.test_x.rows > 0 && !target.test_labels.empty()) {
    out.result.test_target = evaluate_classifier(
        out.model.encoder, out.model.label_head, target.test_x, target.test_labels);
  }
  out.result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace udaforge
