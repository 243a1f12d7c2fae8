// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "test_util.hpp"
#include "udaforge/augment.hpp"
#include "udaforge/corpus.hpp"

using namespace udaforge;

namespace {

Corpus fixture_corpus() {
  Corpus c;
  c.documents.push_back({"a", "alpha beta gamma delta alpha keyword", 0, 0});
  c.documents.push_back({"b", "beta gamma epsilon zeta common words", 0, 0});
  c.documents.push_back({"c", "gamma delta common words filler text", 1, 0});
  c.documents.push_back({"d", "common words appear everywhere here too", 1, 0});
  return c;
}

/// Deterministic table model over a 4-token vocabulary (alphabet 5 with the
/// end token) that never terminates: exhaustive search stays length-exact.
class TableLm final : public LanguageModel {
 public:
  std::vector<double> next_distribution(std::span<const int> context) const override {
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    for (int t : context) {
      h ^= static_cast<std::uint64_t>(t) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    Rng rng(h);
    std::vector<double> p(5, 0.0);
    double sum = 0.0;
    for (std::size_t w = 0; w < 4; ++w) {
      p[w] = 0.05 + uniform_real(rng);
      sum += p[w];
    }
    for (std::size_t w = 0; w < 4; ++w) p[w] /= sum;
    return p;  // end token keeps probability 0
  }
  std::size_t alphabet_size() const override { return 5; }
};

double sequence_score(const LanguageModel& lm, std::span<const int> prompt,
                      const std::vector<int>& seq) {
  std::vector<int> ctx(prompt.begin(), prompt.end());
  double logp = 0.0;
  for (int t : seq) {
    const std::vector<double> p = lm.next_distribution(ctx);
    logp += std::log(std::max(p[static_cast<std::size_t>(t)], 1e-300));
    ctx.push_back(t);
  }
  return seq.empty() ? -1e300 : logp / static_cast<double>(seq.size());
}

}  // namespace

TEST_CASE("tfidf_replace: keyword protection, length, replacement pool") {
  Corpus corpus = fixture_corpus();
  Vocabulary vocab = build_vocab(corpus, 50, 1);
  TfidfAugmenter aug = make_tfidf_augmenter(corpus, vocab);

  SUBCASE("document length never changes; single token unchanged") {
    TokenizedDoc doc = tokenize(corpus.documents[0].text, vocab);
    TokenizedDoc rep = tfidf_replace(doc, aug, 0.5, 3);
    CHECK(rep.tokens.size() == doc.tokens.size());

    TokenizedDoc single;
    single.tokens = {vocab.lookup("alpha")};
    TokenizedDoc rep1 = tfidf_replace(single, aug, 0.9, 3);
    CHECK(rep1.tokens == single.tokens);
  }

  SUBCASE("the document's max tf-idf token is never replaced") {
    // "keyword" appears once in one document: highest idf in doc a. Its
    // per-position score must be the max, so p_i = 0 for it.
    TokenizedDoc doc = tokenize(corpus.documents[0].text, vocab);
    const int protected_id = vocab.lookup("alpha");  // tf 2, top weight in doc a
    double best = -1.0;
    int best_id = -1;
    std::map<int, int> tf;
    for (int id : doc.tokens) tf[id]++;
    for (int id : doc.tokens) {
      const double z = tf[id] * idf_weight(vocab, id);
      if (z > best) {
        best = z;
        best_id = id;
      }
    }
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      TokenizedDoc rep = tfidf_replace(doc, aug, 1.0, seed);
      for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
        if (doc.tokens[i] == best_id) CHECK(rep.tokens[i] == best_id);
      }
    }
    (void)protected_id;
  }

  SUBCASE("replacements come from the below-median pool, never the reserved id") {
    TokenizedDoc doc = tokenize(corpus.documents[0].text, vocab);
    std::vector<double> sorted(aug.global_score.begin() + 1, aug.global_score.end());
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[sorted.size() / 2];
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      TokenizedDoc rep = tfidf_replace(doc, aug, 0.8, seed);
      for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
        if (rep.tokens[i] == doc.tokens[i]) continue;
        CHECK(rep.tokens[i] != kOovId);
        CHECK(aug.global_score[static_cast<std::size_t>(rep.tokens[i])] <=
              median + 1e-12);
      }
    }
  }

  SUBCASE("empirical replacement rate matches p = 0.1 within 0.01") {
    // A uniform document: every position replaceable at exactly p.
    TokenizedDoc doc;
    for (int i = 0; i < 100; ++i) {
      doc.tokens.push_back(vocab.lookup("common"));
      doc.tokens.push_back(vocab.lookup("words"));
    }
    std::size_t replaced = 0;
    std::size_t total = 0;
    for (std::uint64_t seed = 0; seed < 60; ++seed) {
      TokenizedDoc rep = tfidf_replace(doc, aug, 0.1, seed);
      for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
        ++total;
        if (rep.tokens[i] != doc.tokens[i]) ++replaced;
      }
    }
    CHECK(total >= 10000);
    const double rate = static_cast<double>(replaced) / static_cast<double>(total);
    CHECK(std::abs(rate - 0.1) < 0.01);
  }
}

TEST_CASE("augment_corpus: levels concatenate over the original") {
  Corpus corpus = fixture_corpus();
  Vocabulary vocab = build_vocab(corpus, 50, 1);
  AugmentConfig cfg{{0.1, 0.2, 0.3}};
  Corpus out = augment_corpus(corpus, vocab, cfg, 5);
  CHECK(out.size() == corpus.size() * 4);  // original + one copy per level
  std::set<std::string> ids;
  for (const auto& d : out.documents) CHECK(ids.insert(d.id).second);
  CHECK(out.documents[corpus.size()].id == "a#aug0");
  CHECK(out.documents[corpus.size()].label == corpus.documents[0].label);

  SUBCASE("determinism") {
    Corpus again = augment_corpus(corpus, vocab, cfg, 5);
    for (std::size_t i = 0; i < out.size(); ++i) {
      CHECK(again.documents[i].text == out.documents[i].text);
    }
  }
}

TEST_CASE("NgramLm: distributions are simplexes with full support") {
  NgramLm lm(6);  // alphabet 7
  std::vector<std::vector<int>> seqs = {{1, 2, 3, 1, 2, 3, 1, 2}, {4, 5, 4, 5, 4}};
  lm.fit(seqs);
  const std::vector<int> contexts[] = {{}, {1}, {1, 2}, {3, 1}, {5, 0}};
  for (const auto& ctx : contexts) {
    std::vector<double> p = lm.next_distribution(ctx);
    REQUIRE(p.size() == 7);
    double sum = 0.0;
    for (double v : p) {
      CHECK(v > 0.0);  // discounting keeps every token reachable
      sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
  // The trained trigram pattern dominates: after (1, 2) the likely token is 3.
  std::vector<double> p = lm.next_distribution(std::vector<int>{1, 2});
  for (std::size_t w = 0; w < 7; ++w) {
    if (w != 3) CHECK(p[3] > p[w]);
  }
}

TEST_CASE("build_prompt: header tokens plus seed prefix") {
  Corpus c;
  c.documents.push_back({"a", "news type text mainstream left right the vote", 0, 0});
  Vocabulary vocab = build_vocab(c, 20, 1);
  const std::string names_arr[] = {"left", "right", "mainstream"};
  std::span<const std::string> names(names_arr, 3);

  const std::vector<int> prefix = {vocab.lookup("the"), vocab.lookup("vote")};
  std::vector<int> prompt = build_prompt(2, prefix, vocab, names);
  const std::vector<int> expected =
      tokenize("news type : mainstream text : the vote", vocab).tokens;
  CHECK(prompt == expected);

  SUBCASE("empty prefix yields the header only") {
    std::vector<int> header = build_prompt(0, {}, vocab, names);
    CHECK(header == tokenize("news type : left text :", vocab).tokens);
  }
  SUBCASE("unknown label rejected") {
    CHECK_THROWS_AS(build_prompt(3, prefix, vocab, names), std::invalid_argument);
  }
}

TEST_CASE("decode: degenerate equivalences and the exhaustive beam oracle") {
  TableLm lm;
  const std::vector<int> prompt = {0};

  SUBCASE("beam with 1 beam equals greedy") {
    DecodeConfig greedy_cfg;
    greedy_cfg.strategy = DecodeStrategy::greedy;
    greedy_cfg.max_len = 6;
    DecodeConfig beam_cfg;
    beam_cfg.strategy = DecodeStrategy::beam;
    beam_cfg.beams = 1;
    beam_cfg.max_len = 6;
    CHECK(decode(lm, prompt, greedy_cfg, 0) == decode(lm, prompt, beam_cfg, 0));
  }
  SUBCASE("top-k with k=1 equals greedy") {
    DecodeConfig greedy_cfg;
    greedy_cfg.strategy = DecodeStrategy::greedy;
    greedy_cfg.max_len = 6;
    DecodeConfig topk_cfg;
    topk_cfg.strategy = DecodeStrategy::top_k;
    topk_cfg.k = 1;
    topk_cfg.max_len = 6;
    CHECK(decode(lm, prompt, greedy_cfg, 0) == decode(lm, prompt, topk_cfg, 7));
  }
  SUBCASE("vocab 4, length 3, beams 64: beam equals the exhaustive argmax") {
    DecodeConfig cfg;
    cfg.strategy = DecodeStrategy::beam;
    cfg.beams = 64;
    cfg.max_len = 3;
    const std::vector<int> got = decode(lm, prompt, cfg, 0);

    std::vector<int> best_seq;
    double best_score = -1e300;
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        for (int c = 0; c < 4; ++c) {
          const std::vector<int> seq = {a, b, c};
          const double s = sequence_score(lm, prompt, seq);
          if (s > best_score + 1e-15 ||
              (std::abs(s - best_score) <= 1e-15 && seq < best_seq)) {
            best_score = s;
            best_seq = seq;
          }
        }
      }
    }
    CHECK(got == best_seq);
  }
  SUBCASE("beam score is never below the greedy score") {
    DecodeConfig greedy_cfg;
    greedy_cfg.strategy = DecodeStrategy::greedy;
    greedy_cfg.max_len = 5;
    DecodeConfig beam_cfg;
    beam_cfg.strategy = DecodeStrategy::beam;
    beam_cfg.beams = 5;
    beam_cfg.max_len = 5;
    const std::vector<int> g = decode(lm, prompt, greedy_cfg, 0);
    const std::vector<int> b = decode(lm, prompt, beam_cfg, 0);
    CHECK(sequence_score(lm, prompt, b) >= sequence_score(lm, prompt, g) - 1e-12);
  }
  SUBCASE("greedy and beam are deterministic; sampling is seed-deterministic") {
    DecodeConfig cfg;
    cfg.strategy = DecodeStrategy::top_p;
    cfg.p = 0.9;
    cfg.max_len = 8;
    CHECK(decode(lm, prompt, cfg, 11) == decode(lm, prompt, cfg, 11));
    cfg.strategy = DecodeStrategy::top_k;
    cfg.k = 2;
    CHECK(decode(lm, prompt, cfg, 11) == decode(lm, prompt, cfg, 11));
  }
  SUBCASE("every top-p token lies inside the independently computed nucleus") {
    DecodeConfig cfg;
    cfg.strategy = DecodeStrategy::top_p;
    cfg.p = 0.7;
    cfg.max_len = 4;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const std::vector<int> seq = decode(lm, prompt, cfg, seed);
      std::vector<int> ctx(prompt.begin(), prompt.end());
      for (int t : seq) {
        const std::vector<double> p = lm.next_distribution(ctx);
        std::vector<std::size_t> order(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
          if (p[a] != p[b]) return p[a] > p[b];
          return a < b;
        });
        std::set<int> nucleus;
        double cum = 0.0;
        for (std::size_t i = 0; i < order.size(); ++i) {
          nucleus.insert(static_cast<int>(order[i]));
          cum += p[order[i]];
          if (cum >= cfg.p) break;
        }
        CHECK(nucleus.count(t) == 1);
        ctx.push_back(t);
      }
    }
  }
}

TEST_CASE("group_sentences: every three sentences under one label header") {
  Corpus c;
  c.documents.push_back({"a", "One. Two. Three. Four. Five.", 1, 0});
  const std::string names_arr[] = {"left", "right"};
  auto groups = group_sentences(c, {names_arr, 2});
  REQUIRE(groups.size() == 2);  // 3 + 2 sentences
  CHECK(groups[0].label == 1);
  CHECK(groups[0].text.rfind("news type : right text :", 0) == 0);
  CHECK(groups[0].text.find("Three.") != std::string::npos);
  CHECK(groups[1].text.find("Four.") != std::string::npos);
}

TEST_CASE("generate_filtered: classifier gate controls retention") {
  // Seeds all labeled 0; a biased constant classifier either keeps everything
  // or rejects everything.
  Corpus seeds;
  seeds.documents.push_back({"s0", "alpha beta gamma delta epsilon zeta", 0, 0});
  seeds.documents.push_back({"s1", "beta gamma delta epsilon zeta alpha", 0, 0});
  Vocabulary vocab = build_vocab(seeds, 50, 1);

  NgramLm lm(vocab.size());
  std::vector<std::vector<int>> train_seqs;
  for (const auto& d : seeds.documents) {
    train_seqs.push_back(tokenize(d.text, vocab).tokens);
  }
  lm.fit(train_seqs);

  auto constant_classifier = [&](double bias0) {
    Network enc;
    DenseLayer e;
    e.in_dim = vocab.size();
    e.out_dim = 2;
    e.weights.assign(2 * vocab.size(), 0.0);
    e.bias = {0.0, 0.0};
    e.activation = Activation::identity;
    enc.layers.push_back(e);
    Network head;
    DenseLayer h;
    h.in_dim = 2;
    h.out_dim = 2;
    h.weights = {0.0, 0.0, 0.0, 0.0};
    h.bias = {bias0, -bias0};
    h.activation = Activation::identity;
    head.layers.push_back(h);
    return std::make_pair(enc, head);
  };

  GenerateConfig cfg;
  cfg.decode.strategy = DecodeStrategy::top_k;
  cfg.decode.k = 5;
  cfg.decode.max_len = 10;
  cfg.prompt_lengths = {3, 5};
  cfg.label_names = {"left", "right"};

  SUBCASE("always-agreeing classifier keeps every sample") {
    auto [enc, head] = constant_classifier(1.0);  // predicts 0 everywhere
    GenerationResult res = generate_filtered(lm, seeds, vocab, enc, head, cfg, 3);
    REQUIRE(res.report.size() == 2);
    for (const auto& row : res.report) {
      CHECK(row.generated == 2);
      CHECK(row.retained == 2);
    }
    CHECK(res.corpus.size() == 4);
    CHECK(res.corpus.documents[0].id == "s0#gen3");
  }
  SUBCASE("never-agreeing classifier keeps nothing and warns") {
    auto [enc, head] = constant_classifier(-1.0);  // predicts 1 everywhere
    GenerationResult res = generate_filtered(lm, seeds, vocab, enc, head, cfg, 3);
    CHECK(res.corpus.size() == 0);
    for (const auto& row : res.report) CHECK(row.retained == 0);
    CHECK_FALSE(res.warnings.empty());
  }
}
