// SPDX-License-Identifier: Apache-2.0
#include "udaforge/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "udaforge/adversarial.hpp"
#include "udaforge/augment.hpp"
#include "udaforge/cat.hpp"
#include "udaforge/cdcl.hpp"
#include "udaforge/clustering.hpp"
#include "udaforge/corpus.hpp"
#include "udaforge/topics.hpp"
#include "udaforge/tsne.hpp"

namespace udaforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
          return key == a;
        }) == allowed.end()) {
      throw ConfigError("config: unknown key \"" + (path.empty() ? key : path + "." + key) +
                        "\"");
    }
  }
}

template <typename T>
T field_or(const json& obj, const char* key, T def, const std::string& path) {
  if (!obj.contains(key)) return def;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for \"" + path + "." + key + "\"");
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hash8(const std::string& s) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%08llx",
                static_cast<unsigned long long>(fnv1a(s) & 0xffffffffULL));
  return buf;
}

}  // namespace

std::size_t RunConfig::effective_epochs() const {
  if (epochs != 0) return epochs;
  return method == "baseline" || method == "uda" ? 3 : 10;
}

TrainSettings RunConfig::to_train_settings() const {
  TrainSettings s;
  s.epochs = effective_epochs();
  s.batch_size = batch_size;
  s.learning_rate = learning_rate;
  s.weight_decay = weight_decay;
  s.warmup_fraction = warmup_fraction;
  s.dropout = dropout;
  s.encoder_hidden = encoder_hidden;
  s.head_hidden = head_hidden;
  s.seed = seed;
  s.select_by_target_val = selection == "target_val";
  s.lambda = method == "cat" ? cat_lambda : lambda;
  s.tap_layer = tap_layer;
  s.alpha = alpha;
  s.margin = margin;
  s.ensemble_size = ensemble_size;
  s.accumulation = accumulation;
  s.confidence_threshold = confidence_threshold;
  s.tau = tau;
  s.gamma = gamma;
  return s;
}

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  check_keys(j, "", {"method", "seed", "epochs", "batch_size", "data", "model",
                     "optimizer", "selection", "uda", "cat", "cdcl", "cluster",
                     "topic", "augment", "tsne"});

  RunConfig cfg;
  if (!j.contains("method")) throw ConfigError("config: missing \"method\"");
  cfg.method = j.at("method").get<std::string>();
  static const std::set<std::string> kMethods = {"baseline", "uda",         "cat",
                                                 "cdcl",     "cluster_uda", "topic_uda"};
  if (!kMethods.count(cfg.method)) {
    throw ConfigError("config: unknown method \"" + cfg.method + "\"");
  }
  cfg.seed = field_or<std::uint64_t>(j, "seed", 0, "");
  cfg.epochs = field_or<std::size_t>(j, "epochs", 0, "");
  cfg.batch_size = field_or<std::size_t>(j, "batch_size", 64, "");
  if (cfg.batch_size < 2 || cfg.batch_size % 2 != 0) {
    throw ConfigError("config: batch_size must be even (half source, half target)");
  }

  if (!j.contains("data")) throw ConfigError("config: missing \"data\"");
  {
    const json& d = j.at("data");
    check_keys(d, "data", {"synth", "paths"});
    if (d.contains("synth") == d.contains("paths")) {
      throw ConfigError("config: data needs exactly one of \"synth\" or \"paths\"");
    }
    if (d.contains("synth")) {
      const json& s = d.at("synth");
      check_keys(s, "data.synth", {"n_per_domain", "shift", "seed"});
      cfg.data.use_synth = true;
      cfg.data.n_per_domain = field_or<std::size_t>(s, "n_per_domain", 200, "data.synth");
      cfg.data.shift = field_or<double>(s, "shift", 0.5, "data.synth");
      cfg.data.synth_seed = field_or<std::uint64_t>(s, "seed", 0, "data.synth");
      if (cfg.data.shift < 0.0 || cfg.data.shift > 1.0) {
        throw ConfigError("config: data.synth.shift must lie in [0, 1]");
      }
      if (cfg.data.n_per_domain < 20) {
        throw ConfigError("config: data.synth.n_per_domain must be >= 20");
      }
    } else {
      const json& p = d.at("paths");
      check_keys(p, "data.paths", {"source", "target"});
      cfg.data.use_synth = false;
      if (!p.contains("source") || !p.contains("target")) {
        throw ConfigError("config: data.paths needs \"source\" and \"target\"");
      }
      cfg.data.source_path = p.at("source").get<std::string>();
      cfg.data.target_path = p.at("target").get<std::string>();
    }
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model",
               {"vocab_max", "min_df", "encoder_hidden", "head_hidden", "dropout"});
    cfg.vocab_max = field_or<std::size_t>(m, "vocab_max", cfg.vocab_max, "model");
    cfg.min_df = field_or<std::size_t>(m, "min_df", cfg.min_df, "model");
    cfg.encoder_hidden = field_or<std::vector<std::size_t>>(m, "encoder_hidden",
                                                            cfg.encoder_hidden, "model");
    cfg.head_hidden = field_or<std::size_t>(m, "head_hidden", cfg.head_hidden, "model");
    cfg.dropout = field_or<double>(m, "dropout", cfg.dropout, "model");
    if (cfg.encoder_hidden.empty()) {
      throw ConfigError("config: model.encoder_hidden must not be empty");
    }
    if (cfg.dropout < 0.0 || cfg.dropout > 0.5) {
      throw ConfigError("config: model.dropout must lie in [0, 0.5]");
    }
  }

  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    check_keys(o, "optimizer", {"learning_rate", "weight_decay", "warmup_fraction"});
    cfg.learning_rate = field_or<double>(o, "learning_rate", cfg.learning_rate,
                                         "optimizer");
    cfg.weight_decay = field_or<double>(o, "weight_decay", cfg.weight_decay, "optimizer");
    cfg.warmup_fraction = field_or<double>(o, "warmup_fraction", cfg.warmup_fraction,
                                           "optimizer");
    if (cfg.learning_rate <= 0.0) {
      throw ConfigError("config: optimizer.learning_rate must be > 0");
    }
  }

  cfg.selection = field_or<std::string>(j, "selection", cfg.selection, "");
  if (cfg.selection != "source_val" && cfg.selection != "target_val") {
    throw ConfigError("config: selection must be source_val or target_val");
  }

  if (j.contains("uda")) {
    const json& u = j.at("uda");
    check_keys(u, "uda", {"lambda", "tap_layer"});
    cfg.lambda = field_or<double>(u, "lambda", cfg.lambda, "uda");
    if (u.contains("tap_layer") && !u.at("tap_layer").is_null()) {
      cfg.tap_layer = u.at("tap_layer").get<std::size_t>();
    }
    if (cfg.lambda < 0.0) throw ConfigError("config: uda.lambda must be >= 0");
  }

  if (j.contains("cat")) {
    const json& c = j.at("cat");
    check_keys(c, "cat", {"alpha", "margin", "ensemble_size", "accumulation",
                          "confidence_threshold", "lambda"});
    cfg.alpha = field_or<double>(c, "alpha", cfg.alpha, "cat");
    cfg.margin = field_or<double>(c, "margin", cfg.margin, "cat");
    cfg.ensemble_size = field_or<std::size_t>(c, "ensemble_size", cfg.ensemble_size,
                                              "cat");
    cfg.accumulation = field_or<double>(c, "accumulation", cfg.accumulation, "cat");
    cfg.confidence_threshold =
        field_or<double>(c, "confidence_threshold", cfg.confidence_threshold, "cat");
    cfg.cat_lambda = field_or<double>(c, "lambda", cfg.cat_lambda, "cat");
    if (cfg.margin <= 0.0) throw ConfigError("config: cat.margin must be > 0");
    if (cfg.accumulation <= 0.0 || cfg.accumulation >= 1.0) {
      throw ConfigError("config: cat.accumulation must lie in (0, 1)");
    }
    if (cfg.ensemble_size == 0) {
      throw ConfigError("config: cat.ensemble_size must be >= 1");
    }
    if (cfg.confidence_threshold < 0.0 || cfg.confidence_threshold > 1.0) {
      throw ConfigError("config: cat.confidence_threshold must lie in [0, 1]");
    }
  }

  if (j.contains("cdcl")) {
    const json& c = j.at("cdcl");
    check_keys(c, "cdcl", {"tau", "gamma"});
    cfg.tau = field_or<double>(c, "tau", cfg.tau, "cdcl");
    cfg.gamma = field_or<double>(c, "gamma", cfg.gamma, "cdcl");
    if (cfg.tau <= 0.0) throw ConfigError("config: cdcl.tau must be > 0");
    if (cfg.gamma < 0.0) throw ConfigError("config: cdcl.gamma must be >= 0");
  }

  if (j.contains("cluster")) {
    const json& c = j.at("cluster");
    check_keys(c, "cluster", {"algorithm", "k", "k_range", "features",
                              "min_cluster_size", "min_samples", "pair"});
    cfg.cluster.algorithm = field_or<std::string>(c, "algorithm",
                                                  cfg.cluster.algorithm, "cluster");
    static const std::set<std::string> kClusterAlgos = {"kmeans", "kmeans_cosine",
                                                        "kmedoids", "gmm", "hdbscan"};
    if (!kClusterAlgos.count(cfg.cluster.algorithm)) {
      throw ConfigError("config: unknown cluster.algorithm \"" +
                        cfg.cluster.algorithm + "\"");
    }
    cfg.cluster.k = field_or<std::size_t>(c, "k", cfg.cluster.k, "cluster");
    cfg.cluster.k_range = field_or<std::vector<std::size_t>>(c, "k_range",
                                                             cfg.cluster.k_range,
                                                             "cluster");
    cfg.cluster.features = field_or<std::string>(c, "features", cfg.cluster.features,
                                                 "cluster");
    if (cfg.cluster.features != "tfidf" && cfg.cluster.features != "encoder") {
      throw ConfigError("config: cluster.features must be tfidf or encoder");
    }
    cfg.cluster.min_cluster_size = field_or<std::size_t>(c, "min_cluster_size",
                                                         cfg.cluster.min_cluster_size,
                                                         "cluster");
    cfg.cluster.min_samples = field_or<std::size_t>(c, "min_samples",
                                                    cfg.cluster.min_samples, "cluster");
    if (c.contains("pair") && !c.at("pair").is_null()) {
      const auto pair = c.at("pair").get<std::vector<int>>();
      if (pair.size() != 2) throw ConfigError("config: cluster.pair must be [from, to]");
      cfg.cluster.pair = std::make_pair(pair[0], pair[1]);
    }
  }

  if (j.contains("topic")) {
    const json& t = j.at("topic");
    check_keys(t, "topic", {"algorithm", "k", "iters"});
    cfg.topic.algorithm = field_or<std::string>(t, "algorithm", cfg.topic.algorithm,
                                                "topic");
    static const std::set<std::string> kTopicAlgos = {"lda", "nmf", "lsa", "plsa"};
    if (!kTopicAlgos.count(cfg.topic.algorithm)) {
      throw ConfigError("config: unknown topic.algorithm \"" + cfg.topic.algorithm +
                        "\"");
    }
    cfg.topic.k = field_or<std::size_t>(t, "k", cfg.topic.k, "topic");
    cfg.topic.iters = field_or<std::size_t>(t, "iters", cfg.topic.iters, "topic");
  }

  if (j.contains("augment")) {
    const json& a = j.at("augment");
    check_keys(a, "augment", {"levels", "generate"});
    cfg.augment_levels = field_or<std::vector<double>>(a, "levels", cfg.augment_levels,
                                                       "augment");
    for (double p : cfg.augment_levels) {
      if (p <= 0.0 || p > 1.0) {
        throw ConfigError("config: augment.levels entries must lie in (0, 1]");
      }
    }
    if (a.contains("generate")) {
      const json& g = a.at("generate");
      check_keys(g, "augment.generate",
                 {"strategy", "prompt_lengths", "max_len", "beams", "k", "p"});
      cfg.generate.enabled = true;
      cfg.generate.strategy = field_or<std::string>(g, "strategy",
                                                    cfg.generate.strategy,
                                                    "augment.generate");
      try {
        decode_strategy_from_name(cfg.generate.strategy);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: augment.generate.strategy: ") +
                          e.what());
      }
      cfg.generate.prompt_lengths = field_or<std::vector<std::size_t>>(
          g, "prompt_lengths", cfg.generate.prompt_lengths, "augment.generate");
      cfg.generate.max_len = field_or<std::size_t>(g, "max_len", cfg.generate.max_len,
                                                   "augment.generate");
      cfg.generate.beams = field_or<std::size_t>(g, "beams", cfg.generate.beams,
                                                 "augment.generate");
      cfg.generate.k = field_or<std::size_t>(g, "k", cfg.generate.k,
                                             "augment.generate");
      cfg.generate.p = field_or<double>(g, "p", cfg.generate.p, "augment.generate");
      if (cfg.generate.prompt_lengths.empty()) {
        throw ConfigError("config: augment.generate.prompt_lengths must be non-empty");
      }
    }
  }

  if (j.contains("tsne")) {
    const json& t = j.at("tsne");
    check_keys(t, "tsne", {"enabled", "perplexity", "iters"});
    cfg.tsne.enabled = field_or<bool>(t, "enabled", cfg.tsne.enabled, "tsne");
    cfg.tsne.perplexity = field_or<double>(t, "perplexity", cfg.tsne.perplexity, "tsne");
    cfg.tsne.iters = field_or<std::size_t>(t, "iters", cfg.tsne.iters, "tsne");
  }

  cfg.canonical_json = j.dump();  // nlohmann objects iterate sorted by key
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str());
}

namespace {

struct PreparedData {
  Vocabulary vocab;
  DomainData source;
  DomainData target;
  SplitCorpora src_splits;
  SplitCorpora tgt_splits;
  std::vector<GenerationReportRow> generation_report;
};

std::vector<int> labels_if_complete(const Corpus& corpus) {
  std::vector<int> labels;
  for (const Document& d : corpus.documents) {
    if (!d.label.has_value()) return {};
    labels.push_back(*d.label);
  }
  return labels;
}

PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData out;

  Corpus source_all;
  Corpus target_all;
  std::uint64_t split_seed;
  if (cfg.data.use_synth) {
    SynthCorpora synth = synth_corpus(cfg.data.n_per_domain, cfg.data.shift,
                                      cfg.data.synth_seed);
    source_all = std::move(synth.source);
    target_all = std::move(synth.target);
    split_seed = cfg.data.synth_seed;
  } else {
    source_all = load_jsonl(cfg.data.source_path);
    target_all = load_jsonl(cfg.data.target_path);
    split_seed = cfg.seed;
  }
  out.src_splits = split(source_all, derive_seed(split_seed, 11));
  out.tgt_splits = split(target_all, derive_seed(split_seed, 12));

  for (const Document& d : out.src_splits.train.documents) {
    if (!d.label.has_value()) {
      throw std::runtime_error("source document \"" + d.id + "\" has no label");
    }
  }

  // Vocabulary comes from both domains' unlabeled text, before augmentation.
  // With generation enabled the prompt-formatted sentence groups join the
  // vocabulary source so the header and label words get real ids.
  GenerateConfig gen_cfg;
  std::vector<GroupedExample> grouped;
  if (cfg.generate.enabled) {
    gen_cfg.decode.strategy = decode_strategy_from_name(cfg.generate.strategy);
    gen_cfg.decode.max_len = cfg.generate.max_len;
    gen_cfg.decode.beams = cfg.generate.beams;
    gen_cfg.decode.k = cfg.generate.k;
    gen_cfg.decode.p = cfg.generate.p;
    gen_cfg.prompt_lengths = cfg.generate.prompt_lengths;
    grouped = group_sentences(out.src_splits.train, gen_cfg.label_names);
  }
  Corpus combined_train;
  combined_train.documents = out.src_splits.train.documents;
  combined_train.documents.insert(combined_train.documents.end(),
                                  out.tgt_splits.train.documents.begin(),
                                  out.tgt_splits.train.documents.end());
  for (std::size_t g = 0; g < grouped.size(); ++g) {
    combined_train.documents.push_back(
        {"#group" + std::to_string(g), grouped[g].text, grouped[g].label, 0});
  }
  out.vocab = build_vocab(combined_train, cfg.vocab_max, cfg.min_df);

  if (cfg.generate.enabled) {
    NgramLm lm(out.vocab.size());
    std::vector<std::vector<int>> sequences;
    sequences.reserve(grouped.size());
    for (const auto& ex : grouped) {
      sequences.push_back(tokenize(ex.text, out.vocab).tokens);
    }
    lm.fit(sequences);

    // Filter classifier: a supervised model on the source train split.
    DomainData filter_data;
    filter_data.train_x = tfidf(out.src_splits.train, out.vocab);
    filter_data.val_x = tfidf(out.src_splits.validation, out.vocab);
    filter_data.train_labels = labels_if_complete(out.src_splits.train);
    filter_data.val_labels = labels_if_complete(out.src_splits.validation);
    TrainSettings filter_cfg = cfg.to_train_settings();
    filter_cfg.lambda = 0.0;
    UdaOutcome filter = train_baseline(filter_data, filter_data, filter_cfg);

    GenerationResult gen = generate_filtered(
        lm, out.src_splits.train, out.vocab, filter.model.encoder,
        filter.model.label_head, gen_cfg, derive_seed(cfg.seed, 888));
    out.generation_report = std::move(gen.report);
    out.src_splits.train.documents.insert(out.src_splits.train.documents.end(),
                                          gen.corpus.documents.begin(),
                                          gen.corpus.documents.end());
  }

  if (!cfg.augment_levels.empty()) {
    AugmentConfig acfg{cfg.augment_levels};
    out.src_splits.train =
        augment_corpus(out.src_splits.train, out.vocab, acfg, derive_seed(cfg.seed, 777));
  }

  auto fill = [&](DomainData& d, const SplitCorpora& splits) {
    d.train_x = tfidf(splits.train, out.vocab);
    d.val_x = tfidf(splits.validation, out.vocab);
    d.test_x = tfidf(splits.test, out.vocab);
    d.train_labels = labels_if_complete(splits.train);
    d.val_labels = labels_if_complete(splits.validation);
    d.test_labels = labels_if_complete(splits.test);
    for (const Document& doc : splits.train.documents) d.train_ids.push_back(doc.id);
  };
  fill(out.source, out.src_splits);
  fill(out.target, out.tgt_splits);
  if (out.source.train_labels.empty()) {
    throw std::runtime_error("source training split must be fully labeled");
  }
  return out;
}

void write_pseudo_csv(const std::string& run_dir, std::size_t epoch,
                      const PseudoLabels& pseudo,
                      const std::vector<std::string>& ids) {
  std::ofstream out(fs::path(run_dir) / ("pseudo_epoch" + std::to_string(epoch) + ".csv"),
                    std::ios::binary);
  out << "id,label,confidence,accepted\n";
  for (std::size_t i = 0; i < pseudo.size(); ++i) {
    out << (i < ids.size() ? ids[i] : std::to_string(i)) << ',' << pseudo[i].label
        << ',' << fmt6(pseudo[i].confidence) << ',' << (pseudo[i].accepted ? 1 : 0)
        << "\n";
  }
}

void write_domains_csv(const std::string& run_dir, const Corpus& pooled,
                       const std::vector<int>& domains) {
  std::ofstream out(fs::path(run_dir) / "domains.csv", std::ios::binary);
  out << "id,cluster\n";
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    out << pooled.documents[i].id << ',' << domains[i] << "\n";
  }
}

FeatureMatrix encoder_features(const Network& encoder, const FeatureMatrix& x) {
  return forward(encoder, x, /*train_mode=*/false, 0).output();
}

struct ClusterRun {
  RunResult result;
  UdaModel model;
  std::vector<PairOutcome> pairs;
};

ClusterRun run_partitioned_uda(const RunConfig& cfg, const PreparedData& data,
                               const std::string& run_dir) {
  // The supervised setting: the task corpus itself (the target side of the
  // run, whose test split this mode reports on) is split into pseudo-domains.
  const Corpus& pooled = data.tgt_splits.train;
  if (data.target.train_labels.empty()) {
    throw std::runtime_error(
        "cluster/topic mode needs a labeled task corpus (supervised setting)");
  }

  FeatureMatrix features;
  FeatureMatrix tfidf_pooled = tfidf(pooled, data.vocab);
  std::optional<Network> feature_encoder;
  if (cfg.method == "cluster_uda" && cfg.cluster.features == "encoder") {
    TrainSettings pre_cfg = cfg.to_train_settings();
    UdaOutcome pre = train_baseline(data.target, data.target, pre_cfg);
    feature_encoder = std::move(pre.model.encoder);
    features = encoder_features(*feature_encoder, tfidf_pooled);
  } else {
    features = tfidf_pooled;
  }

  std::vector<int> domains;
  if (cfg.method == "cluster_uda") {
    const ClusterSectionConfig& cc = cfg.cluster;
    std::size_t k = cc.k;
    if (!cc.k_range.empty() && cc.algorithm != "hdbscan") {
      k = elbow_k(features, cc.algorithm, cc.k_range, cfg.seed).k;
    }
    ClusterModel model;
    if (cc.algorithm == "kmeans") {
      model = kmeans(features, k, KmeansMetric::euclidean, cfg.seed);
    } else if (cc.algorithm == "kmeans_cosine") {
      model = kmeans(features, k, KmeansMetric::cosine, cfg.seed);
    } else if (cc.algorithm == "kmedoids") {
      model = kmedoids(features, k, cfg.seed);
    } else if (cc.algorithm == "gmm") {
      model = gmm_em(features, k, cfg.seed);
    } else {
      const std::size_t mcs = cc.min_cluster_size > 0
                                  ? cc.min_cluster_size
                                  : std::max<std::size_t>(5, features.rows / 50);
      model = hdbscan(features, mcs, cc.min_samples);
      if (model.k == 0) {
        throw std::runtime_error("hdbscan labeled every pooled document as noise");
      }
    }
    domains = assign_domains(model, features);
  } else {
    const TopicSectionConfig& tc = cfg.topic;
    TopicModel model;
    if (tc.algorithm == "lda") {
      CountMatrix counts = count_matrix(pooled, data.vocab);
      model = lda_gibbs(counts, tc.k, 0.0, 0.01, tc.iters, cfg.seed);
    } else if (tc.algorithm == "plsa") {
      CountMatrix counts = count_matrix(pooled, data.vocab);
      model = plsa_em(counts, tc.k, tc.iters, 1e-6, cfg.seed);
    } else if (tc.algorithm == "nmf") {
      model = nmf(tfidf_pooled, tc.k, tc.iters, 1e-6, cfg.seed);
    } else {
      model = lsa(tfidf_pooled, tc.k);
    }
    domains = assign_domains(model);
    save_topics_txt(model, data.vocab, (fs::path(run_dir) / "topics.txt").string());
  }
  write_domains_csv(run_dir, pooled, domains);

  std::set<int> present(domains.begin(), domains.end());
  if (present.size() < 2) {
    throw std::runtime_error("domain labeling produced a single cluster; no pair exists");
  }

  PooledData pdata;
  pdata.x = std::move(features);
  pdata.labels.resize(pooled.size());
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    pdata.labels[i] = pooled.documents[i].label;
  }
  if (feature_encoder) {
    pdata.val_x = encoder_features(*feature_encoder, data.target.val_x);
    pdata.test_x = encoder_features(*feature_encoder, data.target.test_x);
  } else {
    pdata.val_x = data.target.val_x;
    pdata.test_x = data.target.test_x;
  }
  pdata.val_labels = data.target.val_labels;
  pdata.test_labels = data.target.test_labels;

  std::vector<std::pair<int, int>> pairs;
  if (cfg.cluster.pair.has_value() && cfg.method == "cluster_uda") {
    pairs.push_back(*cfg.cluster.pair);
  } else {
    for (int a : present) {
      for (int b : present) {
        if (a != b) pairs.emplace_back(a, b);
      }
    }
  }

  TrainSettings settings = cfg.to_train_settings();
  if (feature_encoder) {
    // Encoder feature space: pair training consumes these features directly.
    settings.encoder_hidden = {std::min<std::size_t>(64, pdata.x.cols)};
  }

  ClusterRun out;
  bool have_best = false;
  double best_val = -1.0;
  for (const auto& pr : pairs) {
    PairOutcome po;
    po.from_id = pr.first;
    po.to_id = pr.second;
    try {
      UdaOutcome res = train_uda_with_domain_labels(pdata, domains, pr, settings);
      po.ok = true;
      po.val_accuracy = res.result.best_val_accuracy;
      po.test_target = res.result.test_target;
      if (!have_best || po.val_accuracy > best_val) {
        have_best = true;
        best_val = po.val_accuracy;
        out.result = res.result;
        out.model = std::move(res.model);
      }
    } catch (const std::exception& e) {
      po.error = e.what();
    }
    out.pairs.push_back(std::move(po));
  }
  if (!have_best) throw std::runtime_error("every domain pair failed to train");
  return out;
}

void write_pairs_csv(const std::string& run_dir, const std::vector<PairOutcome>& pairs) {
  std::ofstream out(fs::path(run_dir) / "pairs.csv", std::ios::binary);
  out << "from,to,status,val_acc,test_acc,test_f1\n";
  for (const PairOutcome& p : pairs) {
    out << p.from_id << ',' << p.to_id << ',' << (p.ok ? "ok" : "error") << ','
        << fmt6(p.val_accuracy) << ','
        << (p.test_target ? fmt6(p.test_target->accuracy) : "") << ','
        << (p.test_target ? fmt6(p.test_target->f1) : "") << "\n";
  }
}

void write_result_json(const std::string& run_dir, const RunResult& r) {
  json j;
  j["best_epoch"] = r.best_epoch;
  j["best_val_accuracy"] = r.best_val_accuracy;
  if (r.test_source) {
    j["test_source"] = {{"acc", r.test_source->accuracy}, {"f1", r.test_source->f1}};
  }
  if (r.test_target) {
    j["test_target"] = {{"acc", r.test_target->accuracy}, {"f1", r.test_target->f1}};
  }
  j["wall_seconds"] = r.wall_seconds;
  j["warnings"] = r.warnings;
  std::ofstream out(fs::path(run_dir) / "result.json", std::ios::binary);
  out << j.dump(2) << "\n";
}

RunResult read_result_json(const std::string& run_dir) {
  std::ifstream in(fs::path(run_dir) / "result.json");
  RunResult r;
  if (!in) return r;
  json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) return r;
  r.best_epoch = j.value("best_epoch", std::size_t{0});
  r.best_val_accuracy = j.value("best_val_accuracy", 0.0);
  if (j.contains("test_target")) {
    Metrics m;
    m.accuracy = j["test_target"].value("acc", 0.0);
    m.f1 = j["test_target"].value("f1", 0.0);
    r.test_target = m;
  }
  if (j.contains("test_source")) {
    Metrics m;
    m.accuracy = j["test_source"].value("acc", 0.0);
    m.f1 = j["test_source"].value("f1", 0.0);
    r.test_source = m;
  }
  return r;
}

}  // namespace

void save_metrics_csv(const RunResult& result, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write metrics file: " + path);
  out << "epoch,split,domain,acc,f1,pseudo_acc\n";
  for (const MetricRow& row : result.epoch_rows) {
    out << row.epoch << ',' << row.split << ',' << row.domain << ',' << fmt6(row.acc)
        << ',' << fmt6(row.f1) << ','
        << (row.pseudo_acc ? fmt6(*row.pseudo_acc) : "") << "\n";
  }
  if (result.test_source) {
    out << result.best_epoch << ",test,source," << fmt6(result.test_source->accuracy)
        << ',' << fmt6(result.test_source->f1) << ",\n";
  }
  if (result.test_target) {
    out << result.best_epoch << ",test,target," << fmt6(result.test_target->accuracy)
        << ',' << fmt6(result.test_target->f1) << ",\n";
  }
}

RunBundle run(const RunConfig& cfg, const std::string& runs_root, bool skip_existing) {
  RunBundle bundle;
  const std::string dir_name =
      cfg.method + "-" + std::to_string(cfg.seed) + "-" + hash8(cfg.canonical_json);
  bundle.run_dir = (fs::path(runs_root) / dir_name).string();

  if (skip_existing && fs::exists(fs::path(bundle.run_dir) / "metrics.csv")) {
    bundle.skipped = true;
    bundle.result = read_result_json(bundle.run_dir);
    return bundle;
  }
  fs::remove_all(bundle.run_dir);
  fs::create_directories(bundle.run_dir);
  {
    std::ofstream out(fs::path(bundle.run_dir) / "config.json", std::ios::binary);
    out << cfg.canonical_json << "\n";
  }

  PreparedData data = prepare_data(cfg);
  save_vocab_tsv(data.vocab, (fs::path(bundle.run_dir) / "vocab.tsv").string());
  if (!data.generation_report.empty()) {
    save_generation_report(data.generation_report,
                           (fs::path(bundle.run_dir) / "generation_report.csv").string());
  }

  TrainSettings settings = cfg.to_train_settings();
  UdaOutcome outcome;
  if (cfg.method == "baseline") {
    outcome = train_baseline(data.source, data.target, settings);
  } else if (cfg.method == "uda") {
    outcome = train_uda(data.source, data.target, settings);
  } else if (cfg.method == "cat") {
    const std::string run_dir = bundle.run_dir;
    const std::vector<std::string>& ids = data.target.train_ids;
    outcome = train_cat(data.source, data.target, settings,
                        [&run_dir, &ids](std::size_t epoch, const PseudoLabels& p) {
                          write_pseudo_csv(run_dir, epoch, p, ids);
                        });
  } else if (cfg.method == "cdcl") {
    outcome = train_cdcl(data.source, data.target, settings);
  } else {
    ClusterRun cr = run_partitioned_uda(cfg, data, bundle.run_dir);
    write_pairs_csv(bundle.run_dir, cr.pairs);
    bundle.pairs = std::move(cr.pairs);
    outcome.model = std::move(cr.model);
    outcome.result = std::move(cr.result);
  }

  bundle.result = std::move(outcome.result);
  save_metrics_csv(bundle.result, (fs::path(bundle.run_dir) / "metrics.csv").string());
  write_result_json(bundle.run_dir, bundle.result);

  const fs::path ckpt = fs::path(bundle.run_dir) / "checkpoint";
  save_checkpoint(outcome.model.encoder, (ckpt / "encoder").string(),
                  bundle.result.best_epoch);
  save_checkpoint(outcome.model.label_head, (ckpt / "label_head").string(),
                  bundle.result.best_epoch);
  save_checkpoint(outcome.model.domain_head, (ckpt / "domain_head").string(),
                  bundle.result.best_epoch);

  if (cfg.tsne.enabled) {
    FeatureMatrix stacked(data.source.test_x.rows + data.target.test_x.rows,
                          data.source.test_x.cols);
    std::copy(data.source.test_x.data.begin(), data.source.test_x.data.end(),
              stacked.data.begin());
    std::copy(data.target.test_x.data.begin(), data.target.test_x.data.end(),
              stacked.data.begin() + static_cast<long>(data.source.test_x.data.size()));
    FeatureMatrix feats = encoder_features(outcome.model.encoder, stacked);
    FeatureMatrix coords = tsne_project(feats, cfg.tsne.perplexity, cfg.tsne.iters,
                                        cfg.seed);
    std::ofstream out(fs::path(bundle.run_dir) / "tsne.csv", std::ios::binary);
    out << "x,y,domain,label\n";
    for (std::size_t i = 0; i < coords.rows; ++i) {
      const bool is_source = i < data.source.test_x.rows;
      const Corpus& corpus = is_source ? data.src_splits.test : data.tgt_splits.test;
      const Document& doc =
          corpus.documents[is_source ? i : i - data.source.test_x.rows];
      out << fmt6(coords(i, 0)) << ',' << fmt6(coords(i, 1)) << ','
          << (is_source ? 0 : 1) << ','
          << (doc.label ? std::to_string(*doc.label) : "") << "\n";
    }
  }
  return bundle;
}

RunBundle run_config_file(const std::string& config_path, const std::string& runs_root,
                          bool skip_existing) {
  return run(load_run_config(config_path), runs_root, skip_existing);
}

namespace {

void set_by_path(json& root, const std::string& dotted, const json& value) {
  json* cur = &root;
  std::size_t start = 0;
  while (true) {
    const std::size_t dotpos = dotted.find('.', start);
    const std::string key = dotted.substr(start, dotpos - start);
    if (key.empty()) throw ConfigError("grid: empty path segment in \"" + dotted + "\"");
    if (dotpos == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    cur = &(*cur)[key];
    start = dotpos + 1;
  }
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += "\"";
  return out;
}

}  // namespace

std::vector<SweepCell> sweep(const std::string& config_path,
                             const std::string& grid_path,
                             const std::string& runs_root) {
  std::ifstream cfg_in(config_path);
  if (!cfg_in) throw ConfigError("config: cannot open " + config_path);
  std::stringstream cfg_buf;
  cfg_buf << cfg_in.rdbuf();
  const std::string base_text = cfg_buf.str();
  parse_run_config(base_text);  // validate the base before expanding

  std::ifstream grid_in(grid_path);
  if (!grid_in) throw ConfigError("grid: cannot open " + grid_path);
  json grid = json::parse(grid_in, nullptr, false);
  if (grid.is_discarded() || !grid.is_object() || grid.empty()) {
    throw ConfigError("grid: must be a non-empty JSON object of path -> values");
  }

  std::vector<std::string> axes;
  std::vector<std::vector<json>> values;
  for (const auto& [key, arr] : grid.items()) {
    if (!arr.is_array() || arr.empty()) {
      throw ConfigError("grid: \"" + key + "\" must be a non-empty array");
    }
    axes.push_back(key);
    values.emplace_back(arr.begin(), arr.end());
  }

  std::vector<SweepCell> cells;
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    json overrides = json::object();
    json cell_cfg = json::parse(base_text);
    for (std::size_t a = 0; a < axes.size(); ++a) {
      overrides[axes[a]] = values[a][idx[a]];
      set_by_path(cell_cfg, axes[a], values[a][idx[a]]);
    }

    SweepCell cell;
    cell.overrides = overrides.dump();
    try {
      RunConfig cfg = parse_run_config(cell_cfg.dump());
      RunBundle bundle = run(cfg, runs_root, /*skip_existing=*/true);
      cell.run_dir = bundle.run_dir;
      cell.skipped = bundle.skipped;
      cell.ok = true;
      cell.val_acc = bundle.result.best_val_accuracy;
      if (bundle.result.test_target) {
        cell.target_test_acc = bundle.result.test_target->accuracy;
      }
    } catch (const std::exception& e) {
      cell.error = e.what();
    }
    cells.push_back(std::move(cell));

    std::size_t a = 0;
    for (; a < axes.size(); ++a) {
      if (++idx[a] < values[a].size()) break;
      idx[a] = 0;
    }
    if (a == axes.size()) break;
  }

  // Consolidated table; the best cell by target test accuracy is flagged.
  std::size_t best = cells.size();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!cells[i].ok) continue;
    if (best == cells.size() || cells[i].target_test_acc > cells[best].target_test_acc) {
      best = i;
    }
  }
  fs::create_directories(runs_root);
  std::ofstream out(fs::path(runs_root) / "sweep.csv", std::ios::binary);
  out << "overrides,run_dir,status,val_acc,target_test_acc,best\n";
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const SweepCell& c = cells[i];
    out << csv_quote(c.overrides) << ',' << c.run_dir << ','
        << (c.ok ? (c.skipped ? "skipped" : "ok") : "error") << ','
        << fmt6(c.val_acc) << ',' << fmt6(c.target_test_acc) << ','
        << (i == best ? 1 : 0) << "\n";
  }
  return cells;
}

FeatureMatrix load_numeric_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv file: " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (...) {
        numeric = false;
        break;
      }
    }
    if (!numeric) {
      if (rows.empty()) continue;  // tolerate a header line
      throw std::runtime_error("csv: non-numeric cell in " + path);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::runtime_error("csv: ragged rows in " + path);
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("csv: no data rows in " + path);
  FeatureMatrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
  }
  return m;
}

void save_coords_csv(const FeatureMatrix& coords, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write coords file: " + path);
  out << "x,y\n";
  for (std::size_t i = 0; i < coords.rows; ++i) {
    out << fmt6(coords(i, 0)) << ',' << fmt6(coords(i, 1)) << "\n";
  }
}

}  // namespace udaforge
