// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "udaforge/matrix.hpp"

namespace udaforge {

enum class Activation { relu, identity };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct DenseLayer {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  std::vector<double> weights;  // out_dim x in_dim, row-major
  std::vector<double> bias;     // out_dim
  Activation activation = Activation::identity;
  double dropout_rate = 0.0;    // applied to the layer output in train mode
};

struct Network {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
  std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
};

struct LayerSpec {
  std::size_t out_dim;
  Activation activation = Activation::relu;
  double dropout_rate = 0.0;
};

/// Glorot-uniform initialized network; deterministic for a fixed seed.
Network make_network(std::size_t input_dim, std::span<const LayerSpec> spec,
                     std::uint64_t seed);

/// Per-layer cache of a forward pass: pre-activations, post-dropout outputs,
/// and the dropout masks needed to reproduce the exact function in backward.
struct ForwardPass {
  FeatureMatrix input;
  struct Layer {
    FeatureMatrix pre;
    FeatureMatrix post;
    std::vector<double> dropout_mask;  // empty when dropout was inactive
  };
  std::vector<Layer> layers;

  const FeatureMatrix& output() const { return layers.back().post; }
  /// Output of an intermediate layer (the GRL tap point in UDA models).
  const FeatureMatrix& layer_output(std::size_t idx) const { return layers[idx].post; }
};

/// Deterministic given rng_seed. Dropout only in train mode, with inverted
/// scaling so eval-mode expectations match.
ForwardPass forward(const Network& net, const FeatureMatrix& x, bool train_mode,
                    std::uint64_t rng_seed);

struct GradBuffer {
  struct LayerGrads {
    std::vector<double> weights;
    std::vector<double> bias;
  };
  std::vector<LayerGrads> layers;

  void zero();
  void add_scaled(const GradBuffer& other, double scale);
};

GradBuffer zeros_like(const Network& net);

struct BackwardResult {
  GradBuffer grads;
  FeatureMatrix dinput;  // gradient wrt the network input, for chaining
};

/// Extra gradient injected at a layer's output, e.g. a reversed domain-head
/// gradient entering the encoder at the tap layer.
struct TapGradient {
  std::size_t layer_index;
  const FeatureMatrix* grad;
};

BackwardResult backward(const Network& net, const ForwardPass& pass,
                        const FeatureMatrix& dout,
                        std::span<const TapGradient> taps = {});

struct XentResult {
  double loss = 0.0;
  FeatureMatrix dlogits;
};

/// Mean softmax cross-entropy and its gradient.
XentResult xent_loss(const FeatureMatrix& logits, std::span<const int> labels);

FeatureMatrix softmax_rows(const FeatureMatrix& logits);

struct Optimizer {
  double learning_rate = 1e-4;
  double warmup_fraction = 0.05;
  std::size_t total_steps = 1;
  double weight_decay = 1e-3;
  double clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  std::size_t step_count = 0;
  GradBuffer m;
  GradBuffer v;

  /// Piecewise-linear schedule: 0 at step 0, peak at the end of warmup,
  /// back to 0 at total_steps.
  double lr_at(std::size_t step) const;
};

Optimizer make_optimizer(const Network& net, double learning_rate,
                         std::size_t total_steps, double weight_decay = 1e-3,
                         double warmup_fraction = 0.05);

/// Clips gradients elementwise to [-clip, clip], then applies one Adam step
/// with decoupled weight decay under the warmup/decay schedule.
void step(Optimizer& opt, Network& net, const GradBuffer& grads);

// -- Checkpoint format: manifest.json + params.bin (LE float32, W then b) --
void save_checkpoint(const Network& net, const std::string& dir, std::size_t step);
struct Checkpoint {
  Network net;
  std::size_t step = 0;
};
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace udaforge
