// SPDX-License-Identifier: Apache-2.0
#include "udaforge/cdcl.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace udaforge {

FeatureMatrix l2_normalize(const FeatureMatrix& features) {
  FeatureMatrix z = features;
  for (std::size_t i = 0; i < z.rows; ++i) {
    auto row = z.row(i);
    const double norm = l2_norm(row);
    if (norm <= 0.0) throw std::invalid_argument("l2_normalize: zero feature vector");
    for (double& v : row) v /= norm;
  }
  return z;
}

FeatureMatrix l2_normalize_backward(const FeatureMatrix& features,
                                    const FeatureMatrix& dz) {
  if (!features.same_shape(dz)) {
    throw std::invalid_argument("l2_normalize_backward: shape mismatch");
  }
  FeatureMatrix df(features.rows, features.cols);
  for (std::size_t i = 0; i < features.rows; ++i) {
    auto f = features.row(i);
    auto g = dz.row(i);
    auto out = df.row(i);
    const double norm = l2_norm(f);
    if (norm <= 0.0) throw std::invalid_argument("l2_normalize_backward: zero row");
    const double inv = 1.0 / norm;
    // z = f/|f|  =>  df = (dz - z (z . dz)) / |f|
    const double zdotg = dot(f, g) * inv;
    for (std::size_t d = 0; d < features.cols; ++d) {
      out[d] = (g[d] - f[d] * inv * zdotg) * inv;
    }
  }
  return df;
}

CdcAnchorResult cdc_anchor_loss(std::span<const double> anchor, int anchor_label,
                                const FeatureMatrix& opposite,
                                std::span<const int> opposite_labels, double tau) {
  if (opposite.rows == 0) {
    throw std::invalid_argument("cdc_anchor_loss: empty opposite side");
  }
  if (opposite_labels.size() != opposite.rows) {
    throw std::invalid_argument("cdc_anchor_loss: opposite labels mismatch");
  }
  if (tau <= 0.0) throw std::invalid_argument("cdc_anchor_loss: tau must be > 0");

  CdcAnchorResult out;
  out.danchor.assign(anchor.size(), 0.0);
  out.dopposite = FeatureMatrix(opposite.rows, opposite.cols);

  std::size_t n_pos = 0;
  for (int l : opposite_labels) {
    if (l == anchor_label) ++n_pos;
  }
  if (n_pos == 0) {
    out.skipped = true;
    return out;
  }

  const std::size_t n = opposite.rows;
  std::vector<double> logits(n);
  double mx = -1e300;
  for (std::size_t j = 0; j < n; ++j) {
    logits[j] = dot(anchor, opposite.row(j)) / tau;
    mx = std::max(mx, logits[j]);
  }
  double lse = 0.0;
  for (std::size_t j = 0; j < n; ++j) lse += std::exp(logits[j] - mx);
  lse = mx + std::log(lse);

  const double inv_p = 1.0 / static_cast<double>(n_pos);
  for (std::size_t j = 0; j < n; ++j) {
    if (opposite_labels[j] == anchor_label) out.loss -= inv_p * (logits[j] - lse);
  }

  // dL/du_j = softmax_j - 1{j in P}/|P|; u_j = (a . z_j)/tau.
  for (std::size_t j = 0; j < n; ++j) {
    double du = std::exp(logits[j] - lse);
    if (opposite_labels[j] == anchor_label) du -= inv_p;
    du /= tau;
    auto zj = opposite.row(j);
    auto dz = out.dopposite.row(j);
    for (std::size_t d = 0; d < anchor.size(); ++d) {
      out.danchor[d] += du * zj[d];
      dz[d] += du * anchor[d];
    }
  }
  return out;
}

CdcLossResult cdc_loss(const FeatureMatrix& z_source, std::span<const int> source_labels,
                       const FeatureMatrix& z_target, std::span<const int> target_pseudo,
                       double tau) {
  if (z_source.rows == 0 || z_target.rows == 0) {
    throw std::invalid_argument("cdc_loss: both sides must be non-empty");
  }

  CdcLossResult out;
  out.dsource = FeatureMatrix(z_source.rows, z_source.cols);
  out.dtarget = FeatureMatrix(z_target.rows, z_target.cols);

  struct Side {
    const FeatureMatrix& anchors;
    std::span<const int> anchor_labels;
    const FeatureMatrix& opposite;
    std::span<const int> opposite_labels;
    FeatureMatrix& danchors;
    FeatureMatrix& dopposite;
  };
  const Side sides[2] = {
      {z_source, source_labels, z_target, target_pseudo, out.dsource, out.dtarget},
      {z_target, target_pseudo, z_source, source_labels, out.dtarget, out.dsource},
  };

  for (const Side& side : sides) {
    std::vector<CdcAnchorResult> results(side.anchors.rows);
    std::size_t used = 0;
    double side_loss = 0.0;
    for (std::size_t a = 0; a < side.anchors.rows; ++a) {
      results[a] = cdc_anchor_loss(side.anchors.row(a), side.anchor_labels[a],
                                   side.opposite, side.opposite_labels, tau);
      if (results[a].skipped) {
        ++out.skipped_anchors;
      } else {
        ++used;
        side_loss += results[a].loss;
      }
    }
    if (used == 0) continue;  // the side contributes nothing
    const double inv = 1.0 / static_cast<double>(used);
    out.loss += inv * side_loss;
    for (std::size_t a = 0; a < side.anchors.rows; ++a) {
      if (results[a].skipped) continue;
      auto da = side.danchors.row(a);
      for (std::size_t d = 0; d < da.size(); ++d) da[d] += inv * results[a].danchor[d];
      for (std::size_t j = 0; j < side.opposite.rows; ++j) {
        auto dz = side.dopposite.row(j);
        auto src = results[a].dopposite.row(j);
        for (std::size_t d = 0; d < dz.size(); ++d) dz[d] += inv * src[d];
      }
    }
  }
  return out;
}

std::vector<int> pseudo_label_kmeans(const FeatureMatrix& z_source,
                                     std::span<const int> source_labels,
                                     const FeatureMatrix& z_target) {
  if (z_source.cols != z_target.cols) {
    throw std::invalid_argument("pseudo_label_kmeans: dim mismatch");
  }
  constexpr std::size_t kClasses = 2;
  FeatureMatrix centroids(kClasses, z_source.cols);
  std::size_t counts[kClasses] = {0, 0};
  for (std::size_t i = 0; i < z_source.rows; ++i) {
    const int y = source_labels[i];
    if (y < 0 || y >= static_cast<int>(kClasses)) {
      throw std::invalid_argument("pseudo_label_kmeans: source label out of range");
    }
    auto c = centroids.row(static_cast<std::size_t>(y));
    auto row = z_source.row(i);
    for (std::size_t d = 0; d < z_source.cols; ++d) c[d] += row[d];
    ++counts[y];
  }
  for (std::size_t k = 0; k < kClasses; ++k) {
    if (counts[k] == 0) {
      throw std::invalid_argument("pseudo_label_kmeans: both classes must be present");
    }
    auto c = centroids.row(k);
    for (double& v : c) v /= static_cast<double>(counts[k]);
  }

  std::vector<int> labels(z_target.rows, 0);
  for (std::size_t iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < z_target.rows; ++i) {
      double best = squared_distance(z_target.row(i), centroids.row(0));
      int best_k = 0;
      for (std::size_t k = 1; k < kClasses; ++k) {
        const double d = squared_distance(z_target.row(i), centroids.row(k));
        if (d < best) {
          best = d;
          best_k = static_cast<int>(k);
        }
      }
      if (labels[i] != best_k) {
        labels[i] = best_k;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;

    FeatureMatrix sums(kClasses, z_target.cols);
    std::size_t tally[kClasses] = {0, 0};
    for (std::size_t i = 0; i < z_target.rows; ++i) {
      auto c = sums.row(static_cast<std::size_t>(labels[i]));
      auto row = z_target.row(i);
      for (std::size_t d = 0; d < z_target.cols; ++d) c[d] += row[d];
      ++tally[labels[i]];
    }
    for (std::size_t k = 0; k < kClasses; ++k) {
      if (tally[k] == 0) continue;  // frozen at the previous position
      auto c = centroids.row(k);
      auto s = sums.row(k);
      for (std::size_t d = 0; d < z_target.cols; ++d) {
        c[d] = s[d] / static_cast<double>(tally[k]);
      }
    }
  }
  return labels;
}

namespace {

// ReLU encoders can emit exactly-zero feature rows; the public l2_normalize
// rejects those, but the training loop keeps them as zero vectors (uniform
// similarity, zero normalization gradient) instead of aborting.
FeatureMatrix normalize_or_zero(const FeatureMatrix& f) {
  FeatureMatrix z = f;
  for (std::size_t i = 0; i < z.rows; ++i) {
    auto row = z.row(i);
    const double norm = l2_norm(row);
    if (norm > 0.0) {
      for (double& v : row) v /= norm;
    }
  }
  return z;
}

FeatureMatrix normalize_or_zero_backward(const FeatureMatrix& f,
                                         const FeatureMatrix& dz) {
  FeatureMatrix df(f.rows, f.cols);
  for (std::size_t i = 0; i < f.rows; ++i) {
    auto fr = f.row(i);
    auto g = dz.row(i);
    auto out = df.row(i);
    const double norm = l2_norm(fr);
    if (norm <= 0.0) continue;
    const double inv = 1.0 / norm;
    const double zdotg = dot(fr, g) * inv;
    for (std::size_t d = 0; d < f.cols; ++d) {
      out[d] = (g[d] - fr[d] * inv * zdotg) * inv;
    }
  }
  return df;
}

}  // namespace

UdaOutcome train_cdcl(const DomainData& source, const DomainData& target,
                      const TrainSettings& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (source.train_x.rows == 0 || target.train_x.rows == 0) {
    throw std::invalid_argument("train_cdcl: empty training split");
  }
  if (source.train_labels.size() != source.train_x.rows) {
    throw std::invalid_argument("train_cdcl: source training split must be fully labeled");
  }

  UdaOutcome out;
  out.model = make_uda_model(source.train_x.cols, cfg);

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

  const bool target_val_labeled = !target.val_labels.empty();
  const bool select_on_target = cfg.select_by_target_val && target_val_labeled;
  const bool target_train_labeled = target.train_labels.size() == nt;

  UdaModel best = out.model;
  double best_metric = -1.0;
  std::size_t global_step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    // Pseudo-labels from K-Means on the frozen epoch-start features.
    std::vector<int> pseudo;
    std::optional<double> pseudo_acc;
    if (cfg.gamma != 0.0) {
      ForwardPass enc_s = forward(out.model.encoder, source.train_x, false, 0);
      ForwardPass enc_t = forward(out.model.encoder, target.train_x, false, 0);
      pseudo = pseudo_label_kmeans(normalize_or_zero(enc_s.output()),
                                   source.train_labels,
                                   normalize_or_zero(enc_t.output()));
      if (target_train_labeled) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < nt; ++i) {
          if (pseudo[i] == target.train_labels[i]) ++hits;
        }
        pseudo_acc = static_cast<double>(hits) / static_cast<double>(nt);
      }
    }

    Rng epoch_rng = derive_rng(cfg.seed, 1000 + epoch);
    const auto batches =
        make_epoch_batches(ns, nt, cfg.batch_size, EpochOver::smaller, epoch_rng);
    for (const TwoSideBatch& idx : batches) {
      FeatureMatrix src_x = gather_rows(source.train_x, idx.source_rows);
      FeatureMatrix tgt_x = gather_rows(target.train_x, idx.target_rows);
      std::vector<int> src_y;
      src_y.reserve(idx.source_rows.size());
      for (std::size_t r : idx.source_rows) src_y.push_back(source.train_labels[r]);

      const std::uint64_t step_seed = derive_seed(cfg.seed, 500000 + global_step);
      FeatureMatrix x(src_x.rows + tgt_x.rows, src_x.cols);
      std::copy(src_x.data.begin(), src_x.data.end(), x.data.begin());
      std::copy(tgt_x.data.begin(), tgt_x.data.end(),
                x.data.begin() + static_cast<long>(src_x.data.size()));
      ForwardPass enc = forward(out.model.encoder, x, true, derive_seed(step_seed, 0));
      const FeatureMatrix& feats = enc.output();
      const std::size_t bs = src_x.rows;
      const std::size_t dim = feats.cols;

      FeatureMatrix src_feat(bs, dim);
      std::copy(feats.data.begin(), feats.data.begin() + static_cast<long>(bs * dim),
                src_feat.data.begin());
      ForwardPass head_fwd =
          forward(out.model.label_head, src_feat, true, derive_seed(step_seed, 1));
      XentResult xy = xent_loss(head_fwd.output(), src_y);
      BackwardResult head_bwd = backward(out.model.label_head, head_fwd, xy.dlogits);

      FeatureMatrix enc_dout(x.rows, dim);
      std::copy(head_bwd.dinput.data.begin(), head_bwd.dinput.data.end(),
                enc_dout.data.begin());

      if (cfg.gamma != 0.0) {
        FeatureMatrix tgt_feat(tgt_x.rows, dim);
        std::copy(feats.data.begin() + static_cast<long>(bs * dim), feats.data.end(),
                  tgt_feat.data.begin());
        std::vector<int> tgt_pseudo;
        tgt_pseudo.reserve(idx.target_rows.size());
        for (std::size_t r : idx.target_rows) tgt_pseudo.push_back(pseudo[r]);

        FeatureMatrix z_s = normalize_or_zero(src_feat);
        FeatureMatrix z_t = normalize_or_zero(tgt_feat);
        CdcLossResult cdc = cdc_loss(z_s, src_y, z_t, tgt_pseudo, cfg.tau);
        FeatureMatrix df_s = normalize_or_zero_backward(src_feat, cdc.dsource);
        FeatureMatrix df_t = normalize_or_zero_backward(tgt_feat, cdc.dtarget);
        for (std::size_t i = 0; i < bs; ++i) {
          auto dst = enc_dout.row(i);
          auto srow = df_s.row(i);
          for (std::size_t d = 0; d < dim; ++d) dst[d] += cfg.gamma * srow[d];
        }
        for (std::size_t i = 0; i < tgt_x.rows; ++i) {
          auto dst = enc_dout.row(bs + i);
          auto trow = df_t.row(i);
          for (std::size_t d = 0; d < dim; ++d) dst[d] += cfg.gamma * trow[d];
        }
      }

      BackwardResult enc_bwd = backward(out.model.encoder, enc, enc_dout);
      step(opt_enc, out.model.encoder, enc_bwd.grads);
      step(opt_label, out.model.label_head, head_bwd.grads);
      ++global_step;
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
