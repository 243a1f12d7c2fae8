// SPDX-License-Identifier: Apache-2.0
#include "udaforge/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "udaforge/rng.hpp"

namespace udaforge {
namespace {

bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

// Replaces <...> tag spans with a space. An unmatched '<' stays literal.
std::string strip_tags(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '<') {
      std::size_t close = s.find('>', i + 1);
      if (close != std::string::npos) {
        out.push_back(' ');
        i = close + 1;
        continue;
      }
    }
    out.push_back(s[i]);
    ++i;
  }
  return out;
}

// Replaces &name; / &#123; entities with a space (removed, not decoded).
std::string strip_entities(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '&') {
      std::size_t j = i + 1;
      while (j < s.size() && j - i <= 10 &&
             (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '#')) {
        ++j;
      }
      if (j < s.size() && s[j] == ';' && j > i + 1) {
        out.push_back(' ');
        i = j + 1;
        continue;
      }
    }
    out.push_back(s[i]);
    ++i;
  }
  return out;
}

}  // namespace

std::string clean(const std::string& text) {
  std::string s = strip_entities(strip_tags(text));

  // Non-ASCII bytes and control characters become whitespace.
  for (char& c : s) {
    unsigned char u = static_cast<unsigned char>(c);
    if (u >= 0x80 || (u < 0x20 && !is_ascii_space(u))) c = ' ';
  }

  // Chains of three or more dots carry no content; keep one as a stop.
  std::string dotted;
  dotted.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    if (s[i] == '.') {
      std::size_t j = i;
      while (j < s.size() && s[j] == '.') ++j;
      if (j - i >= 3) {
        dotted += ". ";
      } else {
        dotted.append(j - i, '.');
      }
      i = j;
    } else {
      dotted.push_back(s[i]);
      ++i;
    }
  }

  std::string out;
  out.reserve(dotted.size());
  bool pending_space = false;
  for (char c : dotted) {
    if (is_ascii_space(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
    } else {
      if (pending_space) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    }
  }
  return out;
}

std::vector<std::string> word_tokens(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

int Vocabulary::lookup(const std::string& token) const {
  auto it = token_to_id.find(token);
  return it == token_to_id.end() ? kOovId : it->second;
}

TokenizedDoc tokenize(const std::string& text, const Vocabulary& vocab) {
  TokenizedDoc doc;
  for (const auto& w : word_tokens(text)) {
    if (doc.tokens.size() >= kMaxTokens) break;
    doc.tokens.push_back(vocab.lookup(w));
  }
  return doc;
}

Vocabulary build_vocab(const Corpus& corpus, std::size_t v_max, std::size_t min_df) {
  if (corpus.documents.empty()) throw std::invalid_argument("empty corpus");

  std::unordered_map<std::string, std::size_t> df;
  for (const auto& doc : corpus.documents) {
    std::unordered_set<std::string> seen;
    for (const auto& w : word_tokens(doc.text)) seen.insert(w);
    for (const auto& w : seen) ++df[w];
  }

  std::vector<std::pair<std::string, std::size_t>> ranked(df.begin(), df.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary vocab;
  vocab.n_docs = corpus.size();
  vocab.id_to_token.push_back("<unk>");
  vocab.df.push_back(0);
  for (const auto& [token, freq] : ranked) {
    if (vocab.id_to_token.size() > v_max) break;
    if (freq < min_df) break;  // ranked by df, nothing below passes either
    int id = static_cast<int>(vocab.id_to_token.size());
    vocab.token_to_id.emplace(token, id);
    vocab.id_to_token.push_back(token);
    vocab.df.push_back(freq);
  }
  return vocab;
}

double idf_weight(const Vocabulary& vocab, int token_id) {
  double n = static_cast<double>(vocab.n_docs);
  double d = static_cast<double>(vocab.df[static_cast<std::size_t>(token_id)]);
  return std::log((1.0 + n) / (1.0 + d)) + 1.0;
}

FeatureMatrix tfidf(const Corpus& corpus, const Vocabulary& vocab) {
  FeatureMatrix m(corpus.size(), vocab.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    TokenizedDoc toks = tokenize(corpus.documents[i].text, vocab);
    auto row = m.row(i);
    for (int id : toks.tokens) row[static_cast<std::size_t>(id)] += 1.0;
    double norm_sq = 0.0;
    for (std::size_t t = 0; t < vocab.size(); ++t) {
      if (row[t] != 0.0) {
        row[t] *= idf_weight(vocab, static_cast<int>(t));
        norm_sq += row[t] * row[t];
      }
    }
    if (norm_sq > 0.0) {
      double inv = 1.0 / std::sqrt(norm_sq);
      for (std::size_t t = 0; t < vocab.size(); ++t) row[t] *= inv;
    }
  }
  return m;
}

SplitCorpora split(const Corpus& corpus, std::uint64_t seed) {
  const std::size_t n = corpus.size();
  if (n < 10) throw std::invalid_argument("corpus too small to split");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(seed);
  shuffle(order, rng);

  const std::size_t n_val = n / 10;
  const std::size_t n_test = n / 5;
  const std::size_t n_train = n - n_val - n_test;

  SplitCorpora out;
  out.train.split = Split::train;
  out.validation.split = Split::validation;
  out.test.split = Split::test;
  for (std::size_t i = 0; i < n; ++i) {
    const Document& d = corpus.documents[order[i]];
    if (i < n_train) {
      out.train.documents.push_back(d);
    } else if (i < n_train + n_val) {
      out.validation.documents.push_back(d);
    } else {
      out.test.documents.push_back(d);
    }
  }
  return out;
}

namespace {

struct SynthVocab {
  std::vector<std::string> neutral;      // shared filler vocabulary
  std::vector<std::string> tgt_neutral;  // target-only filler vocabulary
  std::vector<std::string> topic[3];     // latent-topic vocabularies, both domains
  std::vector<std::string> keywords;     // shared keyword types, tilted by class
  std::vector<std::string> alt;          // target-only keyword types, same tilt

  SynthVocab() {
    char buf[16];
    for (int i = 0; i < 40; ++i) {
      std::snprintf(buf, sizeof(buf), "base%02d", i);
      neutral.emplace_back(buf);
      std::snprintf(buf, sizeof(buf), "tbase%02d", i);
      tgt_neutral.emplace_back(buf);
    }
    for (int t = 0; t < 3; ++t) {
      for (int i = 0; i < 20; ++i) {
        std::snprintf(buf, sizeof(buf), "top%d%02d", t, i);
        topic[t].emplace_back(buf);
      }
    }
    for (int i = 0; i < 24; ++i) {
      std::snprintf(buf, sizeof(buf), "kw%02d", i);
      keywords.emplace_back(buf);
      std::snprintf(buf, sizeof(buf), "alt%02d", i);
      alt.emplace_back(buf);
    }
  }
};

// Three generating factors per document: a latent topic (its vocabulary is
// what clustering finds: class-independent, shared by both domains), a class
// (a frequency tilt over keyword types: class 0 favors the first half,
// class 1 the second, easy for a linear head but weak as cluster structure),
// and the domain. Shift moves target mass to a target-only filler pool and
// to alternative keyword types while flattening the shared-keyword tilt, so
// a source-only classifier degrades with shift yet the target stays
// learnable through the alternative keywords.
constexpr double kNeutralRate = 0.55;
constexpr double kTopicShare = 0.5;  // of the neutral budget
constexpr double kTilt = 0.85;
constexpr double kTiltContamination = 0.45;

std::string synth_doc_text(const SynthVocab& v, int domain, int cls, double shift,
                           Rng& rng) {
  const std::size_t len = 30 + uniform_index(rng, 31);
  const std::size_t doc_topic = uniform_index(rng, 3);
  std::string text;
  const std::size_t half = v.keywords.size() / 2;
  for (std::size_t t = 0; t < len; ++t) {
    const std::string* word = nullptr;
    if (uniform_real(rng) < kNeutralRate) {
      if (uniform_real(rng) < kTopicShare) {
        word = &v.topic[doc_topic][uniform_index(rng, v.topic[doc_topic].size())];
      } else if (domain == 1 && uniform_real(rng) < shift) {
        word = &v.tgt_neutral[uniform_index(rng, v.tgt_neutral.size())];
      } else {
        word = &v.neutral[uniform_index(rng, v.neutral.size())];
      }
    } else {
      const bool use_alt = domain == 1 && uniform_real(rng) < shift;
      // The target's shared-keyword tilt is flattened toward 0.5 with shift.
      const double tilt =
          use_alt || domain == 0 ? kTilt : kTilt - kTiltContamination * shift;
      const bool favored = uniform_real(rng) < tilt;
      const std::size_t offset = (cls == 0) == favored ? 0 : half;
      const auto& pool = use_alt ? v.alt : v.keywords;
      word = &pool[offset + uniform_index(rng, half)];
    }
    if (!text.empty()) text.push_back(' ');
    text += *word;
  }
  return text;
}

}  // namespace

SynthCorpora synth_corpus(std::size_t n_per_domain, double shift, std::uint64_t seed) {
  if (n_per_domain < 20) {
    throw std::invalid_argument("synth_corpus: n_per_domain must be >= 20");
  }
  if (shift < 0.0 || shift > 1.0) {
    throw std::invalid_argument("synth_corpus: shift must lie in [0,1]");
  }
  static const SynthVocab vocab;

  SynthCorpora out;
  char idbuf[24];
  for (int domain = 0; domain < 2; ++domain) {
    Rng rng = derive_rng(seed, static_cast<std::uint64_t>(domain));
    Corpus& corpus = domain == 0 ? out.source : out.target;
    for (std::size_t i = 0; i < n_per_domain; ++i) {
      Document doc;
      const int cls = static_cast<int>(i % 2);
      std::snprintf(idbuf, sizeof(idbuf), "%s%05zu", domain == 0 ? "src" : "tgt", i);
      doc.id = idbuf;
      doc.text = synth_doc_text(vocab, domain, cls, shift, rng);
      doc.label = cls;  // target labels are for evaluation only
      doc.domain = domain;
      corpus.documents.push_back(std::move(doc));
    }
  }
  return out;
}

Corpus load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);

  Corpus corpus;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    for (const auto& [key, _] : j.items()) {
      if (key != "id" && key != "text" && key != "label" && key != "domain") {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": unknown key \"" + key + "\"");
      }
    }
    if (!j.contains("id") || !j.contains("text")) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": missing \"id\" or \"text\"");
    }
    Document doc;
    doc.id = j.at("id").get<std::string>();
    doc.text = clean(j.at("text").get<std::string>());
    if (j.contains("label") && !j.at("label").is_null()) {
      int label = j.at("label").get<int>();
      if (label != 0 && label != 1) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                 ": label must be 0, 1, or null");
      }
      doc.label = label;
    }
    if (j.contains("domain")) doc.domain = j.at("domain").get<int>();
    if (!ids.insert(doc.id).second) {
      throw std::runtime_error(path + ": duplicate document id \"" + doc.id + "\"");
    }
    if (doc.text.empty()) continue;  // all-noise input
    corpus.documents.push_back(std::move(doc));
  }
  return corpus;
}

void save_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write corpus file: " + path);
  for (const auto& doc : corpus.documents) {
    nlohmann::json j;
    j["id"] = doc.id;
    j["text"] = doc.text;
    if (doc.label.has_value()) {
      j["label"] = *doc.label;
    } else {
      j["label"] = nullptr;
    }
    j["domain"] = doc.domain;
    out << j.dump() << "\n";
  }
}

void save_vocab_tsv(const Vocabulary& vocab, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    out << vocab.id_to_token[id] << '\t' << id << '\t' << vocab.df[id] << '\n';
  }
}

}  // namespace udaforge
