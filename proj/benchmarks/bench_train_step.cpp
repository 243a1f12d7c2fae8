// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "udaforge/adversarial.hpp"
#include "udaforge/cat.hpp"
#include "udaforge/cdcl.hpp"
#include "udaforge/rng.hpp"

namespace {

using namespace udaforge;

FeatureMatrix random_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  FeatureMatrix m(n, d);
  for (double& v : m.data) v = normal(rng);
  return m;
}

struct Fixture {
  UdaModel model;
  UdaBatch batch;
  Fixture() {
    TrainSettings cfg;
    cfg.encoder_hidden = {256, 64};
    cfg.head_hidden = 256;
    cfg.seed = 3;
    model = make_uda_model(512, cfg);
    batch.source_x = random_rows(32, 512, 1);
    batch.target_x = random_rows(32, 512, 2);
    Rng rng = make_rng(5);
    for (int i = 0; i < 32; ++i) {
      batch.source_labels.push_back(static_cast<int>(uniform_index(rng, 2)));
    }
  }
};

void BM_UdaLossStep(benchmark::State& state) {
  Fixture f;
  Optimizer opt = make_optimizer(f.model.encoder, 1e-3, 1000);
  std::uint64_t step_id = 0;
  for (auto _ : state) {
    UdaLossResult res = uda_loss(f.model, f.batch, true, step_id++);
    step(opt, f.model.encoder, res.grads.encoder);
    benchmark::DoNotOptimize(res.loss);
  }
}
BENCHMARK(BM_UdaLossStep);

void BM_CatLoss(benchmark::State& state) {
  Fixture f;
  CatBatch batch;
  batch.source_x = f.batch.source_x;
  batch.source_labels = f.batch.source_labels;
  batch.target_x = f.batch.target_x;
  batch.target_pseudo.resize(32);
  for (std::size_t i = 0; i < 32; ++i) {
    batch.target_pseudo[i] = {static_cast<int>(i % 2), 0.95, true};
  }
  CatConfig cfg;
  cfg.alpha = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        cat_loss(f.model.encoder, f.model.label_head, batch, cfg, true, 7).loss);
  }
}
BENCHMARK(BM_CatLoss);

void BM_CdcLoss(benchmark::State& state) {
  FeatureMatrix zs = l2_normalize(random_rows(32, 64, 1));
  FeatureMatrix zt = l2_normalize(random_rows(32, 64, 2));
  std::vector<int> ys(32);
  std::vector<int> yt(32);
  for (std::size_t i = 0; i < 32; ++i) {
    ys[i] = static_cast<int>(i % 2);
    yt[i] = static_cast<int>((i / 2) % 2);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(cdc_loss(zs, ys, zt, yt, 0.5).loss);
  }
}
BENCHMARK(BM_CdcLoss);

void BM_PseudoLabelKmeans(benchmark::State& state) {
  FeatureMatrix zs = l2_normalize(random_rows(350, 64, 1));
  FeatureMatrix zt = l2_normalize(random_rows(350, 64, 2));
  std::vector<int> ys(350);
  for (std::size_t i = 0; i < 350; ++i) ys[i] = static_cast<int>(i % 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pseudo_label_kmeans(zs, ys, zt));
  }
}
BENCHMARK(BM_PseudoLabelKmeans);

}  // namespace
