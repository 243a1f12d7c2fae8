// SPDX-License-Identifier: Apache-2.0
#include "udaforge/adversarial.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

namespace udaforge {

FeatureMatrix grl_backward(const FeatureMatrix& g, double lambda) {
  FeatureMatrix out = g;
  for (double& v : out.data) v = -lambda * v;
  return out;
}

UdaModel make_uda_model(std::size_t input_dim, const TrainSettings& cfg) {
  if (cfg.encoder_hidden.empty()) {
    throw std::invalid_argument("make_uda_model: encoder needs at least one layer");
  }
  std::vector<LayerSpec> enc_spec;
  for (std::size_t i = 0; i < cfg.encoder_hidden.size(); ++i) {
    const bool last = i + 1 == cfg.encoder_hidden.size();
    enc_spec.push_back({cfg.encoder_hidden[i],
                        last ? Activation::identity : Activation::relu,
                        last ? 0.0 : cfg.dropout});
  }

  UdaModel model;
  model.encoder = make_network(input_dim, enc_spec, derive_seed(cfg.seed, 101));
  model.tap_layer = cfg.tap_layer.value_or(model.encoder.layers.size() - 1);
  if (model.tap_layer >= model.encoder.layers.size()) {
    throw std::invalid_argument("make_uda_model: tap_layer out of range");
  }

  const std::vector<LayerSpec> head_spec = {
      {cfg.head_hidden, Activation::relu, cfg.dropout},
      {2, Activation::identity, 0.0}};
  model.label_head =
      make_network(model.encoder.output_dim(), head_spec, derive_seed(cfg.seed, 102));
  model.domain_head =
      make_network(model.encoder.layers[model.tap_layer].out_dim, head_spec,
                   derive_seed(cfg.seed, 103));
  model.grl.lambda = cfg.lambda;
  return model;
}

namespace {

FeatureMatrix vstack(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.rows == 0) return b;
  if (b.rows == 0) return a;
  if (a.cols != b.cols) throw std::invalid_argument("vstack: column mismatch");
  FeatureMatrix out(a.rows + b.rows, a.cols);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<long>(a.data.size()));
  return out;
}

}  // namespace

UdaLossResult uda_loss(const UdaModel& model, const UdaBatch& batch, bool train_mode,
                       std::uint64_t rng_seed) {
  const std::size_t ns = batch.source_x.rows;
  const std::size_t nt = batch.target_x.rows;
  if (ns == 0) throw std::invalid_argument("uda_loss: batch with zero source rows");
  if (batch.source_labels.size() != ns) {
    throw std::invalid_argument("uda_loss: source labels mismatch");
  }

  const FeatureMatrix x = vstack(batch.source_x, batch.target_x);
  ForwardPass enc = forward(model.encoder, x, train_mode, derive_seed(rng_seed, 0));

  // Label predictor sees only the source rows of the encoder output.
  FeatureMatrix src_feat(ns, enc.output().cols);
  std::copy(enc.output().data.begin(),
            enc.output().data.begin() + static_cast<long>(ns * enc.output().cols),
            src_feat.data.begin());
  ForwardPass label_fwd =
      forward(model.label_head, src_feat, train_mode, derive_seed(rng_seed, 1));
  XentResult xy = xent_loss(label_fwd.output(), batch.source_labels);
  BackwardResult label_bwd = backward(model.label_head, label_fwd, xy.dlogits);

  // Domain discriminator sees every row at the tap layer.
  std::vector<int> domains(ns + nt, 0);
  std::fill(domains.begin() + static_cast<long>(ns), domains.end(), 1);
  const FeatureMatrix& tap_out = enc.layer_output(model.tap_layer);
  ForwardPass dom_fwd =
      forward(model.domain_head, tap_out, train_mode, derive_seed(rng_seed, 2));
  XentResult xd = xent_loss(dom_fwd.output(), domains);
  BackwardResult dom_bwd = backward(model.domain_head, dom_fwd, xd.dlogits);

  // Reversal: the encoder sees -lambda * dLd while the discriminator keeps +dLd.
  FeatureMatrix dtap_rev = grl_backward(dom_bwd.dinput, model.grl.lambda);

  FeatureMatrix enc_dout(x.rows, enc.output().cols);
  std::copy(label_bwd.dinput.data.begin(), label_bwd.dinput.data.end(),
            enc_dout.data.begin());
  const TapGradient taps[] = {{model.tap_layer, &dtap_rev}};
  BackwardResult enc_bwd = backward(model.encoder, enc, enc_dout, taps);

  UdaLossResult out;
  out.label_loss = xy.loss;
  out.domain_loss = xd.loss;
  out.loss = xy.loss - model.grl.lambda * xd.loss;
  out.grads.encoder = std::move(enc_bwd.grads);
  out.grads.label_head = std::move(label_bwd.grads);
  out.grads.domain_head = std::move(dom_bwd.grads);
  return out;
}

UdaOutcome train_uda(const DomainData& source, const DomainData& target,
                     const TrainSettings& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (source.train_x.rows == 0 || target.train_x.rows == 0) {
    throw std::invalid_argument("train_uda: empty training split");
  }
  if (source.train_labels.size() != source.train_x.rows) {
    throw std::invalid_argument("train_uda: source training split must be fully labeled");
  }
  if (source.train_x.cols != target.train_x.cols) {
    throw std::invalid_argument("train_uda: source/target feature dims differ");
  }

  UdaOutcome out;
  out.model = make_uda_model(source.train_x.cols, cfg);

  const std::size_t ns = source.train_x.rows;
  const std::size_t nt = target.train_x.rows;
  const std::size_t half = (cfg.batch_size + 1) / 2;
  const std::size_t driver = std::max(ns, nt);
  const std::size_t driver_half = ns >= nt ? half : cfg.batch_size / 2;
  const std::size_t steps_per_epoch = (driver + driver_half - 1) / driver_half;
  const std::size_t total_steps = steps_per_epoch * cfg.epochs;

  Optimizer opt_enc = make_optimizer(out.model.encoder, cfg.learning_rate, total_steps,
                                     cfg.weight_decay, cfg.warmup_fraction);
  Optimizer opt_label = make_optimizer(out.model.label_head, cfg.learning_rate,
                                       total_steps, cfg.weight_decay, cfg.warmup_fraction);
  Optimizer opt_dom = make_optimizer(out.model.domain_head, cfg.learning_rate,
                                     total_steps, cfg.weight_decay, cfg.warmup_fraction);

  const bool target_val_labeled = !target.val_labels.empty();
  const bool select_on_target = cfg.select_by_target_val && target_val_labeled;

  UdaModel best = out.model;
  double best_metric = -1.0;
  std::size_t global_step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng epoch_rng = derive_rng(cfg.seed, 1000 + epoch);
    const auto batches =
        make_epoch_batches(ns, nt, cfg.batch_size, EpochOver::larger, epoch_rng);
    for (const TwoSideBatch& idx : batches) {
      UdaBatch batch;
      batch.source_x = gather_rows(source.train_x, idx.source_rows);
      batch.target_x = gather_rows(target.train_x, idx.target_rows);
      batch.source_labels.reserve(idx.source_rows.size());
      for (std::size_t r : idx.source_rows) {
        batch.source_labels.push_back(source.train_labels[r]);
      }
      UdaLossResult loss = uda_loss(out.model, batch, /*train_mode=*/true,
                                    derive_seed(cfg.seed, 500000 + global_step));
      step(opt_enc, out.model.encoder, loss.grads.encoder);
      step(opt_label, out.model.label_head, loss.grads.label_head);
      step(opt_dom, out.model.domain_head, loss.grads.domain_head);
      ++global_step;
    }

    double selection_metric = 0.0;
    bool epoch_collapsed = false;
    if (source.val_x.rows > 0) {
      Metrics m = evaluate_classifier(out.model.encoder, out.model.label_head,
                                      source.val_x, source.val_labels);
      out.result.epoch_rows.push_back(
          {epoch, "validation", "source", m.accuracy, m.f1, std::nullopt});
      if (!select_on_target) selection_metric = m.accuracy;
      epoch_collapsed |= has_empty_prediction_column(m.confusion);
    }
    if (target.val_x.rows > 0 && target_val_labeled) {
      Metrics m = evaluate_classifier(out.model.encoder, out.model.label_head,
                                      target.val_x, target.val_labels);
      out.result.epoch_rows.push_back(
          {epoch, "validation", "target", m.accuracy, m.f1, std::nullopt});
      if (select_on_target) selection_metric = m.accuracy;
      epoch_collapsed |= has_empty_prediction_column(m.confusion);
    }
    if (epoch_collapsed) ++out.result.collapsed_epochs;

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

UdaOutcome train_baseline(const DomainData& source, const DomainData& target,
                          const TrainSettings& cfg) {
  TrainSettings base = cfg;
  base.lambda = 0.0;
  return train_uda(source, target, base);
}

UdaOutcome train_uda_with_domain_labels(const PooledData& data,
                                        const std::vector<int>& domain_labels,
                                        std::pair<int, int> pair,
                                        const TrainSettings& cfg) {
  if (pair.first == pair.second) {
    throw std::invalid_argument("train_uda_with_domain_labels: from_id equals to_id");
  }
  if (domain_labels.size() != data.x.rows) {
    throw std::invalid_argument("train_uda_with_domain_labels: label count mismatch");
  }

  std::vector<std::size_t> src_rows;
  std::vector<int> src_labels;
  std::vector<std::size_t> tgt_rows;
  for (std::size_t i = 0; i < domain_labels.size(); ++i) {
    if (domain_labels[i] == pair.first && data.labels[i].has_value()) {
      src_rows.push_back(i);
      src_labels.push_back(*data.labels[i]);
    } else if (domain_labels[i] == pair.second) {
      tgt_rows.push_back(i);
    }
  }
  if (src_rows.size() < 2 || tgt_rows.empty()) {
    throw std::runtime_error("degenerate domain split");
  }

  DomainData source;
  source.train_x = gather_rows(data.x, src_rows);
  source.train_labels = std::move(src_labels);
  source.val_x = data.val_x;
  source.val_labels = data.val_labels;

  DomainData target;
  target.train_x = gather_rows(data.x, tgt_rows);
  target.test_x = data.test_x;
  target.test_labels = data.test_labels;

  return train_uda(source, target, cfg);
}

}  // namespace udaforge
