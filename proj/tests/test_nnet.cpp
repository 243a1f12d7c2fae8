// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "udaforge/nnet.hpp"

using namespace udaforge;

namespace {

Network tiny_net(std::uint64_t seed, double dropout = 0.0) {
  const LayerSpec spec[] = {{8, Activation::relu, dropout},
                            {4, Activation::identity, 0.0}};
  return make_network(6, spec, seed);
}

}  // namespace

TEST_CASE("forward: relu definition on an identity layer") {
  Network net;
  DenseLayer layer;
  layer.in_dim = 2;
  layer.out_dim = 2;
  layer.weights = {1.0, 0.0, 0.0, 1.0};
  layer.bias = {0.0, 0.0};
  layer.activation = Activation::relu;
  net.layers.push_back(layer);

  FeatureMatrix x(1, 2);
  x(0, 0) = -1.0;
  x(0, 1) = 2.0;
  ForwardPass pass = forward(net, x, false, 0);
  CHECK(pass.output()(0, 0) == 0.0);
  CHECK(pass.output()(0, 1) == 2.0);

  SUBCASE("dimension mismatch carries both shapes") {
    FeatureMatrix bad(1, 3);
    CHECK_THROWS_AS(forward(net, bad, false, 0), std::invalid_argument);
  }
}

TEST_CASE("dropout: rate 0 is train/eval identical; rate 0.5 survivor count") {
  Rng rng = make_rng(4);
  FeatureMatrix x = testutil::random_matrix(3, 6, rng);
  Network net = tiny_net(1, 0.0);
  ForwardPass train_pass = forward(net, x, true, 99);
  ForwardPass eval_pass = forward(net, x, false, 0);
  for (std::size_t i = 0; i < train_pass.output().data.size(); ++i) {
    CHECK(train_pass.output().data[i] == eval_pass.output().data[i]);
  }

  SUBCASE("Monte-Carlo survivor fraction at rate 0.5") {
    Network wide;
    DenseLayer layer;
    layer.in_dim = 1;
    layer.out_dim = 10000;
    layer.weights.assign(10000, 1.0);
    layer.bias.assign(10000, 0.0);
    layer.activation = Activation::identity;
    layer.dropout_rate = 0.5;
    wide.layers.push_back(layer);

    FeatureMatrix one(1, 1);
    one(0, 0) = 1.0;
    ForwardPass pass = forward(wide, one, true, 123);
    std::size_t survivors = 0;
    for (double v : pass.output().row(0)) {
      if (v != 0.0) {
        ++survivors;
        CHECK(v == doctest::Approx(2.0));  // inverted scaling
      }
    }
    const double fraction = static_cast<double>(survivors) / 10000.0;
    CHECK(fraction == doctest::Approx(0.5).epsilon(0.04));
    CHECK(std::abs(fraction - 0.5) < 0.02);
  }
}

TEST_CASE("xent_loss: uniform softmax, extreme logits, fd oracle") {
  FeatureMatrix logits(1, 2);
  const int label0[] = {0};
  CHECK(xent_loss(logits, label0).loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  logits(0, 0) = 10.0;
  logits(0, 1) = -10.0;
  CHECK(xent_loss(logits, label0).loss == doctest::Approx(2.061e-9).epsilon(1e-3));

  SUBCASE("label out of range") {
    const int bad[] = {2};
    CHECK_THROWS_AS(xent_loss(logits, bad), std::invalid_argument);
  }

  SUBCASE("dlogits against central finite differences") {
    Rng rng = make_rng(7);
    for (int rep = 0; rep < 5; ++rep) {
      FeatureMatrix z = testutil::random_matrix(5, 2, rng);
      std::vector<int> labels = testutil::random_labels(5, 2, rng);
      XentResult res = xent_loss(z, labels);
      const double err = testutil::max_rel_error_vs_fd_matrix(
          z, [&]() { return xent_loss(z, labels).loss; }, res.dlogits);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("backward: zeros, determinism, fd oracle") {
  Rng rng = make_rng(21);
  Network net = tiny_net(3);
  FeatureMatrix x = testutil::random_matrix(5, 6, rng);
  ForwardPass pass = forward(net, x, false, 0);

  SUBCASE("zero upstream gradient gives zero buffers") {
    FeatureMatrix dout(5, 4);
    BackwardResult res = backward(net, pass, dout);
    for (const auto& layer : res.grads.layers) {
      for (double g : layer.weights) CHECK(g == 0.0);
      for (double g : layer.bias) CHECK(g == 0.0);
    }
  }

  SUBCASE("identical calls produce identical buffers") {
    Rng grng = make_rng(5);
    FeatureMatrix dout = testutil::random_matrix(5, 4, grng);
    BackwardResult a = backward(net, pass, dout);
    BackwardResult b = backward(net, pass, dout);
    for (std::size_t l = 0; l < a.grads.layers.size(); ++l) {
      CHECK(a.grads.layers[l].weights == b.grads.layers[l].weights);
      CHECK(a.grads.layers[l].bias == b.grads.layers[l].bias);
    }
  }

  SUBCASE("stale activations rejected") {
    FeatureMatrix dout(4, 4);  // wrong row count
    CHECK_THROWS_AS(backward(net, pass, dout), std::invalid_argument);
  }

  SUBCASE("network parameters against finite differences") {
    std::vector<int> labels = testutil::random_labels(5, 4, rng);
    auto loss_fn = [&]() {
      ForwardPass p = forward(net, x, false, 0);
      return xent_loss(p.output(), labels).loss;
    };
    ForwardPass p = forward(net, x, false, 0);
    XentResult xr = xent_loss(p.output(), labels);
    BackwardResult res = backward(net, p, xr.dlogits);
    CHECK(testutil::max_rel_error_vs_fd(net, loss_fn, res.grads) < 1e-4);
  }

  SUBCASE("gradients stay exact through a fixed dropout mask") {
    Network drop_net = tiny_net(9, 0.4);
    std::vector<int> labels = testutil::random_labels(5, 4, rng);
    const std::uint64_t mask_seed = 42;
    auto loss_fn = [&]() {
      ForwardPass p = forward(drop_net, x, true, mask_seed);
      return xent_loss(p.output(), labels).loss;
    };
    ForwardPass p = forward(drop_net, x, true, mask_seed);
    XentResult xr = xent_loss(p.output(), labels);
    BackwardResult res = backward(drop_net, p, xr.dlogits);
    CHECK(testutil::max_rel_error_vs_fd(drop_net, loss_fn, res.grads) < 1e-4);
  }
}

TEST_CASE("optimizer: clipping, schedule, fixpoints") {
  Network net;
  DenseLayer layer;
  layer.in_dim = 1;
  layer.out_dim = 1;
  layer.weights = {0.5};
  layer.bias = {0.0};
  layer.activation = Activation::identity;
  net.layers.push_back(layer);

  SUBCASE("gradient entry 5.0 is treated as 1.0") {
    Network net_a = net;
    Network net_b = net;
    Optimizer opt_a = make_optimizer(net_a, 1e-2, 100, 0.0);
    Optimizer opt_b = make_optimizer(net_b, 1e-2, 100, 0.0);
    GradBuffer ga = zeros_like(net_a);
    GradBuffer gb = zeros_like(net_b);
    ga.layers[0].weights[0] = 5.0;
    gb.layers[0].weights[0] = 1.0;
    step(opt_a, net_a, ga);
    step(opt_b, net_b, gb);
    CHECK(net_a.layers[0].weights[0] == net_b.layers[0].weights[0]);
  }

  SUBCASE("effective lr peaks at the end of warmup and hits 0 at both ends") {
    Optimizer opt = make_optimizer(net, 2e-3, 1000, 1e-3, 0.05);
    CHECK(opt.lr_at(0) == 0.0);
    CHECK(opt.lr_at(50) == doctest::Approx(2e-3).epsilon(1e-12));
    CHECK(opt.lr_at(1000) == doctest::Approx(0.0).epsilon(1e-15));
    // Piecewise linear: midpoints interpolate exactly.
    CHECK(opt.lr_at(25) == doctest::Approx(1e-3).epsilon(1e-12));
    CHECK(opt.lr_at(525) == doctest::Approx(1e-3).epsilon(1e-12));
  }

  SUBCASE("zero gradients and zero decay leave parameters unchanged") {
    Optimizer opt = make_optimizer(net, 1e-2, 100, 0.0);
    GradBuffer g = zeros_like(net);
    step(opt, net, g);
    CHECK(net.layers[0].weights[0] == 0.5);
    CHECK(opt.step_count == 1);
  }

  SUBCASE("non-finite gradient is rejected") {
    Optimizer opt = make_optimizer(net, 1e-2, 100);
    GradBuffer g = zeros_like(net);
    g.layers[0].weights[0] = std::nan("");
    CHECK_THROWS_WITH_AS(step(opt, net, g), "non-finite gradient", std::runtime_error);
  }
}

TEST_CASE("smoke: separable toy set trains below 0.05 loss in 500 steps") {
  Rng rng = make_rng(77);
  FeatureMatrix x(20, 4);
  std::vector<int> labels(20);
  for (std::size_t i = 0; i < 20; ++i) {
    const int cls = static_cast<int>(i % 2);
    labels[i] = cls;
    for (std::size_t d = 0; d < 4; ++d) {
      x(i, d) = 0.1 * normal(rng) + (cls == 1 ? 1.0 : -1.0) * (d < 2 ? 1.0 : 0.0);
    }
  }

  const LayerSpec enc_spec[] = {{16, Activation::relu, 0.0},
                                {2, Activation::identity, 0.0}};
  Network net = make_network(4, enc_spec, 3);
  Optimizer opt = make_optimizer(net, 5e-3, 500, 0.0);
  double loss = 1.0;
  for (int it = 0; it < 500; ++it) {
    ForwardPass pass = forward(net, x, true, static_cast<std::uint64_t>(it));
    XentResult xr = xent_loss(pass.output(), labels);
    loss = xr.loss;
    if (loss < 0.05) break;
    BackwardResult res = backward(net, pass, xr.dlogits);
    step(opt, net, res.grads);
  }
  CHECK(loss < 0.05);
}

TEST_CASE("checkpoint: manifest + float32 params round trip") {
  Network net = tiny_net(11, 0.25);
  namespace fs = std::filesystem;
  const std::string dir = (fs::temp_directory_path() / "udaforge_ckpt").string();
  save_checkpoint(net, dir, 42);
  Checkpoint back = load_checkpoint(dir);
  CHECK(back.step == 42);
  REQUIRE(back.net.layers.size() == net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    CHECK(back.net.layers[l].in_dim == net.layers[l].in_dim);
    CHECK(back.net.layers[l].out_dim == net.layers[l].out_dim);
    CHECK(back.net.layers[l].activation == net.layers[l].activation);
    CHECK(back.net.layers[l].dropout_rate == net.layers[l].dropout_rate);
    for (std::size_t i = 0; i < net.layers[l].weights.size(); ++i) {
      CHECK(back.net.layers[l].weights[i] ==
            static_cast<double>(static_cast<float>(net.layers[l].weights[i])));
    }
  }
  fs::remove_all(dir);
}
