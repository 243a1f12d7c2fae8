// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "udaforge/corpus.hpp"
#include "udaforge/rng.hpp"

namespace {

using namespace udaforge;

const SynthCorpora& corpus() {
  static SynthCorpora s = synth_corpus(500, 0.5, 7);
  return s;
}

void BM_Clean(benchmark::State& state) {
  const std::string text =
      "A&nbsp;<b>longer</b> piece of text.... with <i>markup</i>, entities "
      "&amp; dots...... plus some plain words to normalize";
  for (auto _ : state) {
    benchmark::DoNotOptimize(clean(text));
  }
}
BENCHMARK(BM_Clean);

void BM_BuildVocab(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(build_vocab(corpus().source, 5000, 1));
  }
}
BENCHMARK(BM_BuildVocab);

void BM_Tfidf(benchmark::State& state) {
  const Vocabulary vocab = build_vocab(corpus().source, 5000, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(tfidf(corpus().source, vocab));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()) *
                          static_cast<std::int64_t>(corpus().source.size()));
}
BENCHMARK(BM_Tfidf);

void BM_SynthCorpus(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        synth_corpus(static_cast<std::size_t>(state.range(0)), 0.5, 7));
  }
}
BENCHMARK(BM_SynthCorpus)->Arg(100)->Arg(500);

}  // namespace

BENCHMARK_MAIN();
