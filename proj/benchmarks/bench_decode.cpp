// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "udaforge/augment.hpp"
#include "udaforge/rng.hpp"

namespace {

using namespace udaforge;

const NgramLm& fitted_lm() {
  static NgramLm lm = [] {
    NgramLm model(2000);
    Rng rng = make_rng(11);
    std::vector<std::vector<int>> sequences;
    for (int s = 0; s < 300; ++s) {
      std::vector<int> seq;
      for (int t = 0; t < 60; ++t) {
        seq.push_back(static_cast<int>(uniform_index(rng, 2000)));
      }
      sequences.push_back(std::move(seq));
    }
    model.fit(sequences);
    return model;
  }();
  return lm;
}

void BM_NextDistribution(benchmark::State& state) {
  const std::vector<int> ctx = {12, 77};
  for (auto _ : state) {
    benchmark::DoNotOptimize(fitted_lm().next_distribution(ctx));
  }
}
BENCHMARK(BM_NextDistribution);

void BM_Decode(benchmark::State& state) {
  DecodeConfig cfg;
  cfg.strategy = static_cast<DecodeStrategy>(state.range(0));
  cfg.max_len = 30;
  const std::vector<int> prompt = {5, 9, 13};
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(decode(fitted_lm(), prompt, cfg, seed++));
  }
}
BENCHMARK(BM_Decode)
    ->Arg(static_cast<int>(DecodeStrategy::greedy))
    ->Arg(static_cast<int>(DecodeStrategy::beam))
    ->Arg(static_cast<int>(DecodeStrategy::top_k))
    ->Arg(static_cast<int>(DecodeStrategy::top_p));

void BM_TfidfReplace(benchmark::State& state) {
  Corpus corpus;
  Rng rng = make_rng(21);
  for (int d = 0; d < 50; ++d) {
    std::string text;
    for (int t = 0; t < 80; ++t) {
      text += "word" + std::to_string(uniform_index(rng, 300));
      text.push_back(' ');
    }
    corpus.documents.push_back({"d" + std::to_string(d), text, d % 2, 0});
  }
  Vocabulary vocab = build_vocab(corpus, 2000, 1);
  TfidfAugmenter aug = make_tfidf_augmenter(corpus, vocab);
  TokenizedDoc doc = tokenize(corpus.documents[0].text, vocab);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(tfidf_replace(doc, aug, 0.2, seed++));
  }
}
BENCHMARK(BM_TfidfReplace);

}  // namespace
