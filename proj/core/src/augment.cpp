// SPDX-License-Identifier: Apache-2.0
#include "udaforge/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "udaforge/rng.hpp"
#include "udaforge/training.hpp"

namespace udaforge {

TfidfAugmenter make_tfidf_augmenter(const Corpus& corpus, const Vocabulary& vocab) {
  TfidfAugmenter aug;
  aug.vocab = &vocab;
  aug.global_score.assign(vocab.size(), 0.0);

  FeatureMatrix m = tfidf(corpus, vocab);
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto row = m.row(i);
    for (std::size_t t = 0; t < m.cols; ++t) aug.global_score[t] += row[t];
  }

  // Non-keywords: at most median global mass, excluding the reserved id.
  std::vector<double> sorted(aug.global_score.begin() + 1, aug.global_score.end());
  if (sorted.empty()) throw std::invalid_argument("make_tfidf_augmenter: empty vocab");
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted[sorted.size() / 2];
  const double max_score = sorted.back();

  aug.sample_weight.assign(vocab.size(), 0.0);
  for (std::size_t t = 1; t < vocab.size(); ++t) {
    if (aug.global_score[t] <= median) {
      aug.sample_weight[t] = max_score - aug.global_score[t];
    }
  }
  double total = 0.0;
  for (double w : aug.sample_weight) total += w;
  if (total <= 0.0) {
    // Flat corpus: fall back to a uniform draw over real tokens.
    for (std::size_t t = 1; t < vocab.size(); ++t) aug.sample_weight[t] = 1.0;
  }
  return aug;
}

TokenizedDoc tfidf_replace(const TokenizedDoc& doc, const TfidfAugmenter& aug, double p,
                           std::uint64_t seed) {
  if (p <= 0.0 || p > 1.0) {
    throw std::invalid_argument("tfidf_replace: p must lie in (0, 1]");
  }
  const std::size_t n = doc.tokens.size();
  if (n <= 1) return doc;

  // Within-document tf-idf per position (scale cancels in the ratio below).
  std::unordered_map<int, double> tf;
  for (int id : doc.tokens) tf[id] += 1.0;
  std::vector<double> z(n);
  double z_max = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int id = doc.tokens[i];
    z[i] = tf[id] * idf_weight(*aug.vocab, id);
    z_max = std::max(z_max, z[i]);
  }
  double spread_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) spread_mean += z_max - z[i];
  spread_mean /= static_cast<double>(n);

  Rng rng = make_rng(seed);
  TokenizedDoc out = doc;
  std::vector<double> weights = aug.sample_weight;
  for (std::size_t i = 0; i < n; ++i) {
    // Uniform documents have no keyword signal; everything is replaceable at p.
    const double ratio = spread_mean > 0.0 ? (z_max - z[i]) / spread_mean : 1.0;
    const double p_i = std::min(1.0, p * ratio);
    if (uniform_real(rng) < p_i) {
      // A token standing in for itself is no replacement; mask it out.
      const auto self = static_cast<std::size_t>(doc.tokens[i]);
      const double saved = weights[self];
      weights[self] = 0.0;
      bool any = false;
      for (double w : weights) any |= w > 0.0;
      if (any) out.tokens[i] = static_cast<int>(sample_discrete(rng, weights));
      weights[self] = saved;
    }
  }
  return out;
}

Corpus augment_corpus(const Corpus& corpus, const Vocabulary& vocab,
                      const AugmentConfig& cfg, std::uint64_t seed) {
  for (double p : cfg.levels) {
    if (p <= 0.0 || p > 1.0) {
      throw std::invalid_argument("augment_corpus: levels must lie in (0, 1]");
    }
  }
  TfidfAugmenter aug = make_tfidf_augmenter(corpus, vocab);

  Corpus out = corpus;
  for (std::size_t level = 0; level < cfg.levels.size(); ++level) {
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const Document& src = corpus.documents[i];
      std::vector<std::string> words = word_tokens(src.text);
      if (words.size() > kMaxTokens) words.resize(kMaxTokens);

      TokenizedDoc ids;
      for (const auto& w : words) ids.tokens.push_back(vocab.lookup(w));
      TokenizedDoc replaced = tfidf_replace(
          ids, aug, cfg.levels[level], derive_seed(seed, level * corpus.size() + i));

      Document doc;
      doc.id = src.id + "#aug" + std::to_string(level);
      doc.label = src.label;
      doc.domain = src.domain;
      std::string text;
      for (std::size_t t = 0; t < words.size(); ++t) {
        if (!text.empty()) text.push_back(' ');
        if (replaced.tokens[t] != ids.tokens[t]) {
          text += vocab.id_to_token[static_cast<std::size_t>(replaced.tokens[t])];
        } else {
          text += words[t];
        }
      }
      doc.text = std::move(text);
      out.documents.push_back(std::move(doc));
    }
  }
  return out;
}

// -- NgramLm -----------------------------------------------------------------

namespace {

constexpr std::uint64_t kGramBase = 1u << 21;  // fits vocab ids up to ~2M

std::uint64_t key1(int w) { return static_cast<std::uint64_t>(w); }
std::uint64_t key2(int v, int w) {
  return key1(v) * kGramBase + static_cast<std::uint64_t>(w);
}
std::uint64_t key3(int u, int v, int w) {
  return key2(u, v) * kGramBase + static_cast<std::uint64_t>(w);
}

std::uint32_t get(const std::unordered_map<std::uint64_t, std::uint32_t>& m,
                  std::uint64_t k) {
  auto it = m.find(k);
  return it == m.end() ? 0 : it->second;
}

}  // namespace

NgramLm::NgramLm(std::size_t vocab_size) : alphabet_(vocab_size + 1) {
  if (vocab_size == 0) throw std::invalid_argument("NgramLm: empty vocabulary");
}

void NgramLm::fit(const std::vector<std::vector<int>>& sequences) {
  for (const auto& seq : sequences) {
    std::vector<int> s = seq;
    s.push_back(end_token());
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] < 0 || static_cast<std::size_t>(s[i]) >= alphabet_) {
        throw std::invalid_argument("NgramLm::fit: token out of range");
      }
      if (unigram_[key1(s[i])]++ == 0) ++unigram_types_;
      ++total_tokens_;
      if (i >= 1) {
        if (bigram_[key2(s[i - 1], s[i])]++ == 0) ++bigram_types_[key1(s[i - 1])];
        ++bigram_ctx_[key1(s[i - 1])];
      }
      if (i >= 2) {
        if (trigram_[key3(s[i - 2], s[i - 1], s[i])]++ == 0) {
          ++trigram_types_[key2(s[i - 2], s[i - 1])];
        }
        ++trigram_ctx_[key2(s[i - 2], s[i - 1])];
      }
    }
  }
}

std::vector<double> NgramLm::next_distribution(std::span<const int> context) const {
  const double a = static_cast<double>(alphabet_);
  std::vector<double> p(alphabet_, 1.0 / a);  // uniform base

  // Unigram layer.
  if (total_tokens_ > 0) {
    const double total = static_cast<double>(total_tokens_);
    const double backoff = discount_ * static_cast<double>(unigram_types_) / total;
    for (std::size_t w = 0; w < alphabet_; ++w) {
      const double c = get(unigram_, key1(static_cast<int>(w)));
      p[w] = std::max(c - discount_, 0.0) / total + backoff * p[w];
    }
  }

  // Bigram layer.
  if (!context.empty()) {
    const int v = context[context.size() - 1];
    const double ctx = get(bigram_ctx_, key1(v));
    if (ctx > 0.0) {
      const double backoff = discount_ * get(bigram_types_, key1(v)) / ctx;
      for (std::size_t w = 0; w < alphabet_; ++w) {
        const double c = get(bigram_, key2(v, static_cast<int>(w)));
        p[w] = std::max(c - discount_, 0.0) / ctx + backoff * p[w];
      }
    }
  }

  // Trigram layer.
  if (context.size() >= 2) {
    const int u = context[context.size() - 2];
    const int v = context[context.size() - 1];
    const double ctx = get(trigram_ctx_, key2(u, v));
    if (ctx > 0.0) {
      const double backoff = discount_ * get(trigram_types_, key2(u, v)) / ctx;
      for (std::size_t w = 0; w < alphabet_; ++w) {
        const double c = get(trigram_, key3(u, v, static_cast<int>(w)));
        p[w] = std::max(c - discount_, 0.0) / ctx + backoff * p[w];
      }
    }
  }
  return p;
}

// -- Decoding ----------------------------------------------------------------

DecodeStrategy decode_strategy_from_name(const std::string& name) {
  if (name == "greedy") return DecodeStrategy::greedy;
  if (name == "beam") return DecodeStrategy::beam;
  if (name == "top_k") return DecodeStrategy::top_k;
  if (name == "top_p") return DecodeStrategy::top_p;
  throw std::invalid_argument("unknown decoding strategy: " + name);
}

std::string decode_strategy_name(DecodeStrategy s) {
  switch (s) {
    case DecodeStrategy::greedy: return "greedy";
    case DecodeStrategy::beam: return "beam";
    case DecodeStrategy::top_k: return "top_k";
    case DecodeStrategy::top_p: return "top_p";
  }
  return "greedy";
}

namespace {

std::vector<int> with_context(std::span<const int> prompt,
                              const std::vector<int>& continuation) {
  std::vector<int> ctx(prompt.begin(), prompt.end());
  ctx.insert(ctx.end(), continuation.begin(), continuation.end());
  return ctx;
}

std::vector<int> decode_greedy(const LanguageModel& lm, std::span<const int> prompt,
                               std::size_t max_len) {
  std::vector<int> out;
  while (out.size() < max_len) {
    const std::vector<double> p = lm.next_distribution(with_context(prompt, out));
    std::size_t best = 0;
    for (std::size_t w = 1; w < p.size(); ++w) {
      if (p[w] > p[best]) best = w;  // ties keep the lowest id
    }
    if (static_cast<int>(best) == lm.end_token()) break;
    out.push_back(static_cast<int>(best));
  }
  return out;
}

struct BeamEntry {
  std::vector<int> tokens;  // continuation including a possible end token
  double logp = 0.0;
  double score() const {
    return tokens.empty() ? -1e300 : logp / static_cast<double>(tokens.size());
  }
};

bool beam_less(const BeamEntry& a, const BeamEntry& b) {
  if (a.score() != b.score()) return a.score() > b.score();
  return a.tokens < b.tokens;  // deterministic tie order
}

std::vector<int> decode_beam(const LanguageModel& lm, std::span<const int> prompt,
                             std::size_t beams, std::size_t max_len) {
  if (beams == 0) throw std::invalid_argument("decode: beams must be >= 1");
  std::vector<BeamEntry> live = {{}};
  std::vector<BeamEntry> finished;

  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<BeamEntry> expanded;
    for (const BeamEntry& entry : live) {
      const std::vector<double> p =
          lm.next_distribution(with_context(prompt, entry.tokens));
      for (std::size_t w = 0; w < p.size(); ++w) {
        BeamEntry child = entry;
        child.tokens.push_back(static_cast<int>(w));
        child.logp += std::log(std::max(p[w], 1e-300));
        if (static_cast<int>(w) == lm.end_token()) {
          finished.push_back(std::move(child));
        } else {
          expanded.push_back(std::move(child));
        }
      }
    }
    std::sort(expanded.begin(), expanded.end(), beam_less);
    if (expanded.size() > beams) expanded.resize(beams);
    live = std::move(expanded);
  }
  finished.insert(finished.end(), live.begin(), live.end());
  if (finished.empty()) return {};
  const BeamEntry& best =
      *std::min_element(finished.begin(), finished.end(),
                        [](const BeamEntry& a, const BeamEntry& b) {
                          return beam_less(a, b);
                        });
  std::vector<int> out = best.tokens;
  if (!out.empty() && out.back() == lm.end_token()) out.pop_back();
  return out;
}

// Probability-sorted order with deterministic ties (higher p first, then id).
std::vector<std::size_t> prob_order(const std::vector<double>& p) {
  std::vector<std::size_t> order(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (p[a] != p[b]) return p[a] > p[b];
    return a < b;
  });
  return order;
}

std::vector<int> decode_sampled(const LanguageModel& lm, std::span<const int> prompt,
                                const DecodeConfig& cfg, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::vector<int> out;
  while (out.size() < cfg.max_len) {
    const std::vector<double> p = lm.next_distribution(with_context(prompt, out));
    const std::vector<std::size_t> order = prob_order(p);

    std::size_t keep;
    if (cfg.strategy == DecodeStrategy::top_k) {
      keep = std::min(cfg.k, order.size());
    } else {
      // Smallest prefix of the sorted tokens with cumulative mass >= p.
      double cum = 0.0;
      keep = order.size();
      for (std::size_t i = 0; i < order.size(); ++i) {
        cum += p[order[i]];
        if (cum >= cfg.p) {
          keep = i + 1;
          break;
        }
      }
    }
    std::vector<double> weights(keep);
    for (std::size_t i = 0; i < keep; ++i) weights[i] = p[order[i]];
    const std::size_t pick = order[sample_discrete(rng, weights)];
    if (static_cast<int>(pick) == lm.end_token()) break;
    out.push_back(static_cast<int>(pick));
  }
  return out;
}

}  // namespace

std::vector<int> decode(const LanguageModel& lm, std::span<const int> prompt,
                        const DecodeConfig& cfg, std::uint64_t seed) {
  switch (cfg.strategy) {
    case DecodeStrategy::greedy:
      return decode_greedy(lm, prompt, cfg.max_len);
    case DecodeStrategy::beam:
      return decode_beam(lm, prompt, cfg.beams, cfg.max_len);
    case DecodeStrategy::top_k:
    case DecodeStrategy::top_p:
      return decode_sampled(lm, prompt, cfg, seed);
  }
  throw std::invalid_argument("decode: unknown strategy");
}

std::vector<int> build_prompt(int label, std::span<const int> text_prefix,
                              const Vocabulary& vocab,
                              std::span<const std::string> label_names) {
  if (label < 0 || static_cast<std::size_t>(label) >= label_names.size()) {
    throw std::invalid_argument("build_prompt: unknown label " + std::to_string(label));
  }
  const std::string header =
      "news type : " + label_names[static_cast<std::size_t>(label)] + " text :";
  std::vector<int> out = tokenize(header, vocab).tokens;
  out.insert(out.end(), text_prefix.begin(), text_prefix.end());
  if (out.size() > kMaxTokens) out.resize(kMaxTokens);
  return out;
}

std::vector<GroupedExample> group_sentences(const Corpus& corpus,
                                            std::span<const std::string> label_names) {
  std::vector<GroupedExample> out;
  for (const Document& doc : corpus.documents) {
    if (!doc.label.has_value()) continue;
    if (*doc.label < 0 || static_cast<std::size_t>(*doc.label) >= label_names.size()) {
      throw std::invalid_argument("group_sentences: label outside the name table");
    }
    std::vector<std::string> sentences;
    std::string cur;
    for (char c : doc.text) {
      cur.push_back(c);
      if (c == '.' || c == '!' || c == '?') {
        sentences.push_back(cur);
        cur.clear();
      }
    }
    if (!cur.empty()) sentences.push_back(cur);

    const std::string header =
        "news type : " + label_names[static_cast<std::size_t>(*doc.label)] + " text :";
    for (std::size_t s = 0; s < sentences.size(); s += 3) {
      std::string text = header;
      for (std::size_t j = s; j < std::min(s + 3, sentences.size()); ++j) {
        text.push_back(' ');
        text += sentences[j];
      }
      out.push_back({*doc.label, std::move(text)});
    }
  }
  return out;
}

GenerationResult generate_filtered(const LanguageModel& lm, const Corpus& seeds,
                                   const Vocabulary& vocab, const Network& encoder,
                                   const Network& label_head, const GenerateConfig& cfg,
                                   std::uint64_t seed) {
  GenerationResult result;
  std::uint64_t stream = 0;

  for (std::size_t t_idx = 0; t_idx < cfg.prompt_lengths.size(); ++t_idx) {
    const std::size_t prompt_len = cfg.prompt_lengths[t_idx];
    GenerationReportRow row{decode_strategy_name(cfg.decode.strategy), prompt_len, 0, 0};

    for (const Document& doc : seeds.documents) {
      if (!doc.label.has_value()) continue;
      const TokenizedDoc toks = tokenize(doc.text, vocab);
      std::span<const int> prefix(toks.tokens.data(),
                                  std::min(prompt_len, toks.tokens.size()));
      const std::vector<int> prompt =
          build_prompt(*doc.label, prefix, vocab, cfg.label_names);
      const std::vector<int> gen =
          decode(lm, prompt, cfg.decode, derive_seed(seed, stream++));
      ++row.generated;

      std::string text;
      for (int id : prefix) {
        if (!text.empty()) text.push_back(' ');
        text += vocab.id_to_token[static_cast<std::size_t>(id)];
      }
      for (int id : gen) {
        if (!text.empty()) text.push_back(' ');
        text += vocab.id_to_token[static_cast<std::size_t>(id)];
      }
      if (text.empty()) continue;

      // Keep the sample only when the classifier agrees with the prompt.
      Corpus one;
      one.documents.push_back({doc.id, text, doc.label, doc.domain});
      FeatureMatrix features = tfidf(one, vocab);
      const std::vector<int> pred = predict_classes(encoder, label_head, features);
      if (pred[0] != *doc.label) continue;

      Document kept;
      kept.id = doc.id + "#gen" + std::to_string(prompt_len);
      kept.text = std::move(text);
      kept.label = doc.label;
      kept.domain = doc.domain;
      result.corpus.documents.push_back(std::move(kept));
      ++row.retained;
    }
    result.report.push_back(row);
  }

  if (result.corpus.documents.empty()) {
    result.warnings.push_back("no generated sample survived classifier filtering");
  }
  return result;
}

void save_generation_report(std::span<const GenerationReportRow> rows,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write generation report: " + path);
  out << "strategy,prompt_tokens,generated,retained\n";
  for (const auto& r : rows) {
    out << r.strategy << ',' << r.prompt_tokens << ',' << r.generated << ','
        << r.retained << "\n";
  }
}

}  // namespace udaforge
