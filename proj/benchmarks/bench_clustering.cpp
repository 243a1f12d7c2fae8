// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "udaforge/clustering.hpp"
#include "udaforge/rng.hpp"
#include "udaforge/topics.hpp"
#include "udaforge/tsne.hpp"

namespace {

using namespace udaforge;

FeatureMatrix blob_data(std::size_t n) {
  Rng rng = make_rng(9);
  FeatureMatrix x(n, 8);
  for (std::size_t i = 0; i < n; ++i) {
    const double shift = static_cast<double>(i % 3) * 8.0;
    for (std::size_t d = 0; d < 8; ++d) x(i, d) = normal(rng) + shift;
  }
  return x;
}

void BM_Kmeans(benchmark::State& state) {
  FeatureMatrix x = blob_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(kmeans(x, 3, KmeansMetric::euclidean, 1));
  }
}
BENCHMARK(BM_Kmeans)->Arg(200)->Arg(700);

void BM_Kmedoids(benchmark::State& state) {
  FeatureMatrix x = blob_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(kmedoids(x, 3, 1));
  }
}
BENCHMARK(BM_Kmedoids)->Arg(100);

void BM_GmmEm(benchmark::State& state) {
  FeatureMatrix x = blob_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(gmm_em(x, 3, 1));
  }
}
BENCHMARK(BM_GmmEm)->Arg(200);

void BM_Hdbscan(benchmark::State& state) {
  FeatureMatrix x = blob_data(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(hdbscan(x, 10, 5));
  }
}
BENCHMARK(BM_Hdbscan)->Arg(200)->Arg(400);

void BM_LdaGibbsSweep(benchmark::State& state) {
  Rng rng = make_rng(3);
  CountMatrix counts(200, 500);
  for (std::size_t d = 0; d < counts.rows; ++d) {
    for (int t = 0; t < 60; ++t) counts(d, 1 + uniform_index(rng, 499))++;
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(lda_gibbs(counts, 3, 0.0, 0.01, 10, 1));
  }
}
BENCHMARK(BM_LdaGibbsSweep);

void BM_TsneIterations(benchmark::State& state) {
  FeatureMatrix x = blob_data(120);
  for (auto _ : state) {
    benchmark::DoNotOptimize(tsne_project(x, 10.0, 100, 1));
  }
}
BENCHMARK(BM_TsneIterations);

}  // namespace
