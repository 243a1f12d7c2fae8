// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "udaforge/training.hpp"

namespace udaforge {

/// Invalid configuration; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  bool use_synth = true;
  std::size_t n_per_domain = 200;
  double shift = 0.5;
  std::uint64_t synth_seed = 0;
  std::string source_path;
  std::string target_path;
};

struct ClusterSectionConfig {
  std::string algorithm = "kmeans";  // kmeans|kmeans_cosine|kmedoids|gmm|hdbscan
  std::size_t k = 3;
  std::vector<std::size_t> k_range;  // non-empty: choose k by the elbow method
  std::string features = "tfidf";    // tfidf|encoder
  std::size_t min_cluster_size = 0;  // hdbscan; 0 = max(5, N/50)
  std::size_t min_samples = 5;
  std::optional<std::pair<int, int>> pair;  // absent: sweep all ordered pairs
};

struct TopicSectionConfig {
  std::string algorithm = "lda";  // lda|nmf|lsa|plsa
  std::size_t k = 3;
  std::size_t iters = 300;
};

struct TsneSectionConfig {
  bool enabled = false;
  double perplexity = 30.0;
  std::size_t iters = 500;
};

/// Conditional-generation augmentation: fit the n-gram model on label-
/// prompted sentence groups of the source train split, generate from each
/// seed sample at every prompt length, and keep classifier-agreeing samples.
struct GenerateSectionConfig {
  bool enabled = false;
  std::string strategy = "top_k";  // greedy|beam|top_k|top_p
  std::vector<std::size_t> prompt_lengths = {3, 5, 10};
  std::size_t max_len = 40;
  std::size_t beams = 5;
  std::size_t k = 30;
  double p = 0.99;
};

struct RunConfig {
  std::string method;  // baseline|uda|cat|cdcl|cluster_uda|topic_uda
  std::uint64_t seed = 0;
  std::size_t epochs = 0;  // 0 = method default (3 for baseline/uda, 10 otherwise)
  std::size_t batch_size = 64;
  DataConfig data;

  std::size_t vocab_max = 5000;
  std::size_t min_df = 1;
  std::vector<std::size_t> encoder_hidden = {256, 64};
  std::size_t head_hidden = 256;
  double dropout = 0.1;

  double learning_rate = 1e-4;
  double weight_decay = 1e-3;
  double warmup_fraction = 0.05;
  std::string selection = "source_val";  // or target_val (synthetic mode only)

  double lambda = 0.1;
  std::optional<std::size_t> tap_layer;

  double alpha = 0.1;
  double margin = 2.0;
  std::size_t ensemble_size = 3;
  double accumulation = 0.8;
  double confidence_threshold = 0.9;
  double cat_lambda = 0.0;

  double tau = 1.0;
  double gamma = 1.0;

  ClusterSectionConfig cluster;
  TopicSectionConfig topic;
  std::vector<double> augment_levels;
  GenerateSectionConfig generate;
  TsneSectionConfig tsne;

  std::string canonical_json;  // sorted-key dump used for hashing and persistence

  std::size_t effective_epochs() const;
  TrainSettings to_train_settings() const;
};

/// Strict parser: unknown keys anywhere fail with a field-level message.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

struct PairOutcome {
  int from_id = 0;
  int to_id = 0;
  bool ok = false;
  std::string error;
  double val_accuracy = 0.0;
  std::optional<Metrics> test_target;
};

struct RunBundle {
  std::string run_dir;
  RunResult result;
  std::vector<PairOutcome> pairs;  // cluster/topic mode only
  bool skipped = false;            // found complete and skip_existing was set
};

/// Executes the configured method end to end and persists the run directory
/// (config copy, metrics.csv, checkpoints, optional exports). Reruns of an
/// identical config reproduce metrics.csv byte for byte.
RunBundle run(const RunConfig& cfg, const std::string& runs_root,
              bool skip_existing = false);
RunBundle run_config_file(const std::string& config_path, const std::string& runs_root,
                          bool skip_existing = false);

struct SweepCell {
  std::string overrides;  // JSON of the applied grid point
  std::string run_dir;
  bool ok = false;
  bool skipped = false;
  std::string error;
  double target_test_acc = 0.0;
  double val_acc = 0.0;
};

/// Cross-product sweep over a grid of dotted config paths; completed cells
/// are skipped on rerun, failures are recorded and the sweep continues. The
/// consolidated table lands in <runs_root>/sweep.csv.
std::vector<SweepCell> sweep(const std::string& config_path,
                             const std::string& grid_path,
                             const std::string& runs_root);

void save_metrics_csv(const RunResult& result, const std::string& path);

/// Numeric CSV (one feature row per line) -> matrix; used by the tsne tool.
FeatureMatrix load_numeric_csv(const std::string& path);
void save_coords_csv(const FeatureMatrix& coords, const std::string& path);

}  // namespace udaforge
