// SPDX-License-Identifier: Apache-2.0
#include "udaforge/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "udaforge/rng.hpp"

namespace udaforge {

std::string activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "identity";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity") return Activation::identity;
  throw std::invalid_argument("unknown activation: " + name);
}

Network make_network(std::size_t input_dim, std::span<const LayerSpec> spec,
                     std::uint64_t seed) {
  if (spec.empty()) throw std::invalid_argument("make_network: no layers");
  Rng rng = make_rng(seed);
  Network net;
  std::size_t in_dim = input_dim;
  for (const LayerSpec& s : spec) {
    if (s.dropout_rate < 0.0 || s.dropout_rate > 0.5) {
      throw std::invalid_argument("dropout_rate must lie in [0, 0.5]");
    }
    DenseLayer layer;
    layer.in_dim = in_dim;
    layer.out_dim = s.out_dim;
    layer.activation = s.activation;
    layer.dropout_rate = s.dropout_rate;
    layer.weights.resize(in_dim * s.out_dim);
    layer.bias.assign(s.out_dim, 0.0);
    const double a = std::sqrt(6.0 / static_cast<double>(in_dim + s.out_dim));
    for (double& w : layer.weights) w = (2.0 * uniform_real(rng) - 1.0) * a;
    net.layers.push_back(std::move(layer));
    in_dim = s.out_dim;
  }
  return net;
}

ForwardPass forward(const Network& net, const FeatureMatrix& x, bool train_mode,
                    std::uint64_t rng_seed) {
  if (x.cols != net.input_dim()) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.cols) +
                                " columns, network expects " +
                                std::to_string(net.input_dim()));
  }
  ForwardPass pass;
  pass.input = x;
  Rng rng = make_rng(rng_seed);

  const FeatureMatrix* cur = &pass.input;
  for (const DenseLayer& layer : net.layers) {
    ForwardPass::Layer cache;
    cache.pre = FeatureMatrix(cur->rows, layer.out_dim);
    for (std::size_t i = 0; i < cur->rows; ++i) {
      auto in_row = cur->row(i);
      auto out_row = cache.pre.row(i);
      for (std::size_t o = 0; o < layer.out_dim; ++o) {
        const double* w = layer.weights.data() + o * layer.in_dim;
        double acc = layer.bias[o];
        for (std::size_t k = 0; k < layer.in_dim; ++k) acc += w[k] * in_row[k];
        out_row[o] = acc;
      }
    }
    cache.post = cache.pre;
    if (layer.activation == Activation::relu) {
      for (double& v : cache.post.data) v = v > 0.0 ? v : 0.0;
    }
    if (train_mode && layer.dropout_rate > 0.0) {
      const double keep = 1.0 - layer.dropout_rate;
      cache.dropout_mask.resize(cache.post.data.size());
      for (std::size_t i = 0; i < cache.dropout_mask.size(); ++i) {
        cache.dropout_mask[i] = uniform_real(rng) < keep ? 1.0 / keep : 0.0;
        cache.post.data[i] *= cache.dropout_mask[i];
      }
    }
    pass.layers.push_back(std::move(cache));
    cur = &pass.layers.back().post;
  }
  return pass;
}

void GradBuffer::zero() {
  for (auto& l : layers) {
    std::fill(l.weights.begin(), l.weights.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

void GradBuffer::add_scaled(const GradBuffer& other, double scale) {
  if (layers.size() != other.layers.size()) {
    throw std::invalid_argument("GradBuffer::add_scaled: layer count mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t i = 0; i < layers[l].weights.size(); ++i) {
      layers[l].weights[i] += scale * other.layers[l].weights[i];
    }
    for (std::size_t i = 0; i < layers[l].bias.size(); ++i) {
      layers[l].bias[i] += scale * other.layers[l].bias[i];
    }
  }
}

GradBuffer zeros_like(const Network& net) {
  GradBuffer g;
  for (const DenseLayer& layer : net.layers) {
    GradBuffer::LayerGrads lg;
    lg.weights.assign(layer.weights.size(), 0.0);
    lg.bias.assign(layer.bias.size(), 0.0);
    g.layers.push_back(std::move(lg));
  }
  return g;
}

BackwardResult backward(const Network& net, const ForwardPass& pass,
                        const FeatureMatrix& dout, std::span<const TapGradient> taps) {
  if (pass.layers.size() != net.layers.size()) {
    throw std::invalid_argument("backward: stale activations (layer count)");
  }
  if (!dout.same_shape(pass.output())) {
    throw std::invalid_argument("backward: dout shape mismatch");
  }

  BackwardResult result;
  result.grads = zeros_like(net);

  FeatureMatrix dh = dout;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const DenseLayer& layer = net.layers[li];
    const ForwardPass::Layer& cache = pass.layers[li];
    if (cache.pre.rows != dh.rows || cache.pre.cols != dh.cols) {
      throw std::invalid_argument("backward: stale activations (shape)");
    }

    for (const TapGradient& tap : taps) {
      if (tap.layer_index == li) {
        if (!tap.grad->same_shape(dh)) {
          throw std::invalid_argument("backward: tap gradient shape mismatch");
        }
        for (std::size_t i = 0; i < dh.data.size(); ++i) {
          dh.data[i] += tap.grad->data[i];
        }
      }
    }

    // Undo dropout, then the activation, giving the pre-activation gradient.
    if (!cache.dropout_mask.empty()) {
      for (std::size_t i = 0; i < dh.data.size(); ++i) {
        dh.data[i] *= cache.dropout_mask[i];
      }
    }
    if (layer.activation == Activation::relu) {
      for (std::size_t i = 0; i < dh.data.size(); ++i) {
        if (cache.pre.data[i] <= 0.0) dh.data[i] = 0.0;
      }
    }

    const FeatureMatrix& layer_in = li == 0 ? pass.input : pass.layers[li - 1].post;
    auto& lg = result.grads.layers[li];
    for (std::size_t i = 0; i < dh.rows; ++i) {
      auto dz = dh.row(i);
      auto in_row = layer_in.row(i);
      for (std::size_t o = 0; o < layer.out_dim; ++o) {
        lg.bias[o] += dz[o];
        double* gw = lg.weights.data() + o * layer.in_dim;
        for (std::size_t k = 0; k < layer.in_dim; ++k) gw[k] += dz[o] * in_row[k];
      }
    }

    FeatureMatrix dx(dh.rows, layer.in_dim);
    for (std::size_t i = 0; i < dh.rows; ++i) {
      auto dz = dh.row(i);
      auto dx_row = dx.row(i);
      for (std::size_t o = 0; o < layer.out_dim; ++o) {
        const double* w = layer.weights.data() + o * layer.in_dim;
        const double g = dz[o];
        if (g == 0.0) continue;
        for (std::size_t k = 0; k < layer.in_dim; ++k) dx_row[k] += g * w[k];
      }
    }
    dh = std::move(dx);
  }
  result.dinput = std::move(dh);
  return result;
}

FeatureMatrix softmax_rows(const FeatureMatrix& logits) {
  FeatureMatrix probs(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    auto z = logits.row(i);
    auto p = probs.row(i);
    double mx = z[0];
    for (std::size_t c = 1; c < logits.cols; ++c) mx = std::max(mx, z[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      p[c] = std::exp(z[c] - mx);
      sum += p[c];
    }
    for (std::size_t c = 0; c < logits.cols; ++c) p[c] /= sum;
  }
  return probs;
}

XentResult xent_loss(const FeatureMatrix& logits, std::span<const int> labels) {
  if (logits.rows != labels.size()) {
    throw std::invalid_argument("xent_loss: rows != labels");
  }
  if (logits.rows == 0) throw std::invalid_argument("xent_loss: empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols) {
      throw std::invalid_argument("xent_loss: label out of range");
    }
  }

  XentResult out;
  out.dlogits = softmax_rows(logits);
  const double inv_n = 1.0 / static_cast<double>(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    auto p = out.dlogits.row(i);
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    out.loss -= std::log(std::max(p[y], 1e-300));
    for (std::size_t c = 0; c < logits.cols; ++c) p[c] *= inv_n;
    p[y] -= inv_n;
  }
  out.loss *= inv_n;
  return out;
}

double Optimizer::lr_at(std::size_t s) const {
  const std::size_t warmup =
      std::max<std::size_t>(1, static_cast<std::size_t>(
                                   std::llround(warmup_fraction *
                                                static_cast<double>(total_steps))));
  double frac;
  if (s <= warmup) {
    frac = static_cast<double>(s) / static_cast<double>(warmup);
  } else {
    const double denom = static_cast<double>(std::max<std::size_t>(1, total_steps - warmup));
    frac = 1.0 - static_cast<double>(s - warmup) / denom;
  }
  return learning_rate * std::max(0.0, frac);
}

Optimizer make_optimizer(const Network& net, double learning_rate,
                         std::size_t total_steps, double weight_decay,
                         double warmup_fraction) {
  Optimizer opt;
  opt.learning_rate = learning_rate;
  opt.total_steps = std::max<std::size_t>(1, total_steps);
  opt.weight_decay = weight_decay;
  opt.warmup_fraction = warmup_fraction;
  opt.m = zeros_like(net);
  opt.v = zeros_like(net);
  return opt;
}

void step(Optimizer& opt, Network& net, const GradBuffer& grads) {
  if (grads.layers.size() != net.layers.size()) {
    throw std::invalid_argument("step: grad buffer does not match network");
  }
  for (const auto& lg : grads.layers) {
    for (double g : lg.weights) {
      if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient");
    }
    for (double g : lg.bias) {
      if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient");
    }
  }

  ++opt.step_count;
  const double lr = opt.lr_at(opt.step_count);
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step_count));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step_count));

  auto update = [&](double& param, double& m, double& v, double g) {
    g = std::clamp(g, -opt.clip, opt.clip);
    m = opt.beta1 * m + (1.0 - opt.beta1) * g;
    v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    param -= lr * (mhat / (std::sqrt(vhat) + opt.epsilon) + opt.weight_decay * param);
  };

  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    DenseLayer& layer = net.layers[l];
    auto& lg = grads.layers[l];
    auto& lm = opt.m.layers[l];
    auto& lv = opt.v.layers[l];
    for (std::size_t i = 0; i < layer.weights.size(); ++i) {
      update(layer.weights[i], lm.weights[i], lv.weights[i], lg.weights[i]);
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      update(layer.bias[i], lm.bias[i], lv.bias[i], lg.bias[i]);
    }
  }
}

void save_checkpoint(const Network& net, const std::string& dir, std::size_t step) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["step"] = step;
  manifest["layers"] = nlohmann::json::array();
  for (const DenseLayer& layer : net.layers) {
    manifest["layers"].push_back({{"in_dim", layer.in_dim},
                                  {"out_dim", layer.out_dim},
                                  {"activation", activation_name(layer.activation)},
                                  {"dropout_rate", layer.dropout_rate}});
  }
  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!mf) throw std::runtime_error("cannot write manifest.json in " + dir);
  mf << manifest.dump(2) << "\n";

  std::ofstream pf(fs::path(dir) / "params.bin", std::ios::binary);
  if (!pf) throw std::runtime_error("cannot write params.bin in " + dir);
  auto write_f32 = [&pf](double v) {
    float f = static_cast<float>(v);
    static_assert(sizeof(float) == 4);
    char bytes[4];
    std::memcpy(bytes, &f, 4);
    // The build targets are little-endian; serialize as-is.
    pf.write(bytes, 4);
  };
  for (const DenseLayer& layer : net.layers) {
    for (double w : layer.weights) write_f32(w);
    for (double b : layer.bias) write_f32(b);
  }
}

Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw std::runtime_error("cannot open manifest.json in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(mf);

  Checkpoint ckpt;
  ckpt.step = manifest.at("step").get<std::size_t>();
  for (const auto& jl : manifest.at("layers")) {
    DenseLayer layer;
    layer.in_dim = jl.at("in_dim").get<std::size_t>();
    layer.out_dim = jl.at("out_dim").get<std::size_t>();
    layer.activation = activation_from_name(jl.at("activation").get<std::string>());
    layer.dropout_rate = jl.at("dropout_rate").get<double>();
    layer.weights.resize(layer.in_dim * layer.out_dim);
    layer.bias.resize(layer.out_dim);
    ckpt.net.layers.push_back(std::move(layer));
  }

  std::ifstream pf(fs::path(dir) / "params.bin", std::ios::binary);
  if (!pf) throw std::runtime_error("cannot open params.bin in " + dir);
  auto read_f32 = [&pf, &dir]() {
    char bytes[4];
    pf.read(bytes, 4);
    if (!pf) throw std::runtime_error("params.bin truncated in " + dir);
    float f;
    std::memcpy(&f, bytes, 4);
    return static_cast<double>(f);
  };
  for (DenseLayer& layer : ckpt.net.layers) {
    for (double& w : layer.weights) w = read_f32();
    for (double& b : layer.bias) b = read_f32();
  }
  return ckpt;
}

}  // namespace udaforge
