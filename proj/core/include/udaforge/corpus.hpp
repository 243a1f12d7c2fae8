// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "udaforge/matrix.hpp"

namespace udaforge {

struct Document {
  std::string id;
  std::string text;                // cleaned UTF-8 (ASCII after clean())
  std::optional<int> label;        // class y in {0,1}; absent for unlabeled
  int domain = 0;                  // 0 = source, 1 = target, or a cluster/topic id
};

enum class Split { train, validation, test };

struct Corpus {
  std::vector<Document> documents;
  Split split = Split::train;

  std::size_t size() const { return documents.size(); }
};

struct TokenizedDoc {
  std::vector<int> tokens;  // vocabulary ids, length <= kMaxTokens
};

inline constexpr std::size_t kMaxTokens = 128;
inline constexpr int kOovId = 0;  // reserved id for out-of-vocabulary/padding

struct Vocabulary {
  std::map<std::string, int> token_to_id;  // ids dense in [1, size)
  std::vector<std::string> id_to_token;    // index 0 is the reserved sentinel
  std::vector<std::size_t> df;             // document frequency per id (df[0] = 0)
  std::size_t n_docs = 0;                  // documents the vocabulary was built on

  std::size_t size() const { return id_to_token.size(); }
  int lookup(const std::string& token) const;
};

/// Strips HTML tags and entities, drops non-ASCII bytes, collapses runs of
/// three or more dots to a single ". ", and normalizes whitespace. Returns
/// an empty string when nothing but noise remains; callers drop such docs.
std::string clean(const std::string& text);

/// Lowercase word tokens (alphanumeric runs), OOV mapped to the reserved id,
/// truncated at kMaxTokens.
TokenizedDoc tokenize(const std::string& text, const Vocabulary& vocab);

/// Word-level tokenization without a vocabulary, used while building one.
std::vector<std::string> word_tokens(const std::string& text);

/// Ranks tokens by document frequency (ties lexicographic), keeps the top
/// v_max with df >= min_df, and assigns dense ids starting at 1.
Vocabulary build_vocab(const Corpus& corpus, std::size_t v_max, std::size_t min_df);

/// tf(i,t) * idf(t) with idf(t) = ln((1+N)/(1+df(t))) + 1 over the vocabulary
/// the matrix is built against (N and df frozen at vocabulary-build time so
/// validation/test features stay comparable); rows L2-normalized, zero rows
/// left as zero.
FeatureMatrix tfidf(const Corpus& corpus, const Vocabulary& vocab);

double idf_weight(const Vocabulary& vocab, int token_id);

struct SplitCorpora {
  Corpus train;
  Corpus validation;
  Corpus test;
};

/// Seeded shuffle then a 70/10/20 partition by count, remainders to train.
SplitCorpora split(const Corpus& corpus, std::uint64_t seed);

/// Two-domain synthetic corpus with a controllable shift knob. Class signal
/// rides on keyword tokens; the target replaces a `shift` fraction of them
/// with a domain-specific alternative vocabulary and mildly contaminates the
/// shared keywords, so a source-only classifier degrades as shift grows.
/// Target documents keep their labels for evaluation; training paths must
/// not read them.
struct SynthCorpora {
  Corpus source;
  Corpus target;
};
SynthCorpora synth_corpus(std::size_t n_per_domain, double shift, std::uint64_t seed);

// -- External formats ------------------------------------------------------

/// JSONL, one object per line: {"id": str, "text": str, "label": 0|1|null,
/// "domain": int}. Text is cleaned on load; all-noise documents are dropped.
Corpus load_jsonl(const std::string& path);
void save_jsonl(const Corpus& corpus, const std::string& path);

/// vocab.tsv: `token<TAB>id<TAB>df`, sorted by id.
void save_vocab_tsv(const Vocabulary& vocab, const std::string& path);

}  // namespace udaforge
