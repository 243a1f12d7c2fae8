// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "udaforge/corpus.hpp"
#include "udaforge/nnet.hpp"

namespace udaforge {

struct AugmentConfig {
  std::vector<double> levels;  // p values, each in (0, 1]; one augmented copy per level
};

/// Per-vocabulary-token global TF-IDF mass, used to pick replacement tokens:
/// low-information ("non-keyword") tokens are preferred.
struct TfidfAugmenter {
  const Vocabulary* vocab = nullptr;
  std::vector<double> global_score;   // summed tf-idf mass per token id
  std::vector<double> sample_weight;  // (max - score) over below-median tokens, else 0
};
TfidfAugmenter make_tfidf_augmenter(const Corpus& corpus, const Vocabulary& vocab);

/// Replaces token i with probability min(1, p * (z_max - z_i) / mean(z_max - z)),
/// where z is the token's tf-idf weight within the document, so the expected
/// replacement fraction is p and the document's strongest keyword is never
/// touched. Length is preserved; single-token documents come back unchanged.
TokenizedDoc tfidf_replace(const TokenizedDoc& doc, const TfidfAugmenter& aug, double p,
                           std::uint64_t seed);

/// Original corpus plus one replaced copy per level, ids "<orig>#aug<n>".
Corpus augment_corpus(const Corpus& corpus, const Vocabulary& vocab,
                      const AugmentConfig& cfg, std::uint64_t seed);

// -- Conditional generation over a pluggable next-token model ---------------

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;
  /// Distribution over {0..vocab_size-1, end_token}; always a simplex.
  virtual std::vector<double> next_distribution(std::span<const int> context) const = 0;
  virtual std::size_t alphabet_size() const = 0;  // vocab size + end token
  int end_token() const { return static_cast<int>(alphabet_size()) - 1; }
};

/// Order-3 model with interpolated absolute discounting (D = 0.75); every
/// token keeps nonzero mass through the uniform base distribution.
class NgramLm final : public LanguageModel {
 public:
  explicit NgramLm(std::size_t vocab_size);

  /// Counts n-grams; an end token is appended to every sequence.
  void fit(const std::vector<std::vector<int>>& sequences);

  std::vector<double> next_distribution(std::span<const int> context) const override;
  std::size_t alphabet_size() const override { return alphabet_; }

 private:
  std::size_t alphabet_;
  double discount_ = 0.75;
  std::unordered_map<std::uint64_t, std::uint32_t> unigram_;
  std::unordered_map<std::uint64_t, std::uint32_t> bigram_;
  std::unordered_map<std::uint64_t, std::uint32_t> trigram_;
  std::unordered_map<std::uint64_t, std::uint32_t> bigram_ctx_;    // c(v .)
  std::unordered_map<std::uint64_t, std::uint32_t> trigram_ctx_;   // c(uv .)
  std::unordered_map<std::uint64_t, std::uint32_t> bigram_types_;  // N1+(v .)
  std::unordered_map<std::uint64_t, std::uint32_t> trigram_types_; // N1+(uv .)
  std::uint64_t total_tokens_ = 0;
  std::uint32_t unigram_types_ = 0;
};

enum class DecodeStrategy { greedy, beam, top_k, top_p };

DecodeStrategy decode_strategy_from_name(const std::string& name);
std::string decode_strategy_name(DecodeStrategy s);

struct DecodeConfig {
  DecodeStrategy strategy = DecodeStrategy::greedy;
  std::size_t beams = 5;
  std::size_t k = 30;
  double p = 0.99;
  std::size_t max_len = 40;
};

/// Continuation tokens after the prompt, stopping at the end token or
/// max_len. Greedy and beam are deterministic (ties to the lowest id /
/// lexicographically smallest sequence); top-k and top-p are seeded. Beam
/// scores are length-normalized log-probabilities.
std::vector<int> decode(const LanguageModel& lm, std::span<const int> prompt,
                        const DecodeConfig& cfg, std::uint64_t seed);

/// "news type : <label> text :" + the seed prefix, as vocabulary ids.
std::vector<int> build_prompt(int label, std::span<const int> text_prefix,
                              const Vocabulary& vocab,
                              std::span<const std::string> label_names);

/// Splits on sentence enders and groups every three sentences into one
/// prompt-formatted training example under the document's label.
struct GroupedExample {
  int label;
  std::string text;  // prompt header + sentences
};
std::vector<GroupedExample> group_sentences(const Corpus& corpus,
                                            std::span<const std::string> label_names);

struct GenerateConfig {
  DecodeConfig decode;
  std::vector<std::size_t> prompt_lengths = {3, 5, 10};
  std::vector<std::string> label_names = {"left", "right", "mainstream"};
};

struct GenerationReportRow {
  std::string strategy;
  std::size_t prompt_tokens;
  std::size_t generated;
  std::size_t retained;
};

struct GenerationResult {
  Corpus corpus;
  std::vector<GenerationReportRow> report;
  std::vector<std::string> warnings;
};

/// For every seed sample and prompt length: prompt, decode, classify, and
/// keep only generations the classifier assigns to the prompted label.
GenerationResult generate_filtered(const LanguageModel& lm, const Corpus& seeds,
                                   const Vocabulary& vocab, const Network& encoder,
                                   const Network& label_head, const GenerateConfig& cfg,
                                   std::uint64_t seed);

void save_generation_report(std::span<const GenerationReportRow> rows,
                            const std::string& path);

}  // namespace udaforge
