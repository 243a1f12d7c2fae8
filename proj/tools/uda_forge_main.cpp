// SPDX-License-Identifier: Apache-2.0
//
// uda-forge: experiment runner for the domain-adaptation library.
//
//   uda-forge run <config.json> [--runs-dir runs] [--resume]
//   uda-forge sweep <config.json> --grid <grid.json> [--runs-dir runs]
//   uda-forge synth --n <N> --shift <s> --seed <k> --out <dir>
//   uda-forge tsne <features.csv> --out <coords.csv> [--perplexity p] [--iters n]

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "udaforge/corpus.hpp"
#include "udaforge/experiment.hpp"
#include "udaforge/tsne.hpp"

namespace {

int run_cmd(const std::string& config, const std::string& runs_dir, bool resume) {
  udaforge::RunBundle bundle = udaforge::run_config_file(config, runs_dir, resume);
  if (bundle.skipped) {
    std::printf("run already complete: %s\n", bundle.run_dir.c_str());
    return 0;
  }
  std::printf("run dir: %s\n", bundle.run_dir.c_str());
  std::printf("best epoch %zu, validation accuracy %.4f\n", bundle.result.best_epoch,
              bundle.result.best_val_accuracy);
  if (bundle.result.test_source) {
    std::printf("test source: acc %.4f f1 %.4f\n", bundle.result.test_source->accuracy,
                bundle.result.test_source->f1);
  }
  if (bundle.result.test_target) {
    std::printf("test target: acc %.4f f1 %.4f\n", bundle.result.test_target->accuracy,
                bundle.result.test_target->f1);
  }
  for (const auto& w : bundle.result.warnings) std::printf("warning: %s\n", w.c_str());
  return 0;
}

int sweep_cmd(const std::string& config, const std::string& grid,
              const std::string& runs_dir) {
  const auto cells = udaforge::sweep(config, grid, runs_dir);
  std::size_t ok = 0;
  std::size_t failed = 0;
  for (const auto& c : cells) (c.ok ? ok : failed)++;
  std::printf("sweep: %zu cells (%zu ok, %zu failed); table in %s/sweep.csv\n",
              cells.size(), ok, failed, runs_dir.c_str());
  return failed == 0 ? 0 : 1;
}

int synth_cmd(std::size_t n, double shift, std::uint64_t seed, const std::string& out) {
  std::filesystem::create_directories(out);
  udaforge::SynthCorpora synth = udaforge::synth_corpus(n, shift, seed);
  udaforge::save_jsonl(synth.source, out + "/source.jsonl");
  udaforge::save_jsonl(synth.target, out + "/target.jsonl");
  std::printf("wrote %zu+%zu documents to %s\n", synth.source.size(),
              synth.target.size(), out.c_str());
  return 0;
}

int tsne_cmd(const std::string& features, const std::string& out, double perplexity,
             std::size_t iters, std::uint64_t seed) {
  udaforge::FeatureMatrix x = udaforge::load_numeric_csv(features);
  udaforge::FeatureMatrix coords = udaforge::tsne_project(x, perplexity, iters, seed);
  udaforge::save_coords_csv(coords, out);
  std::printf("projected %zu rows to %s\n", coords.rows, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uda-forge: domain-adaptation experiments"};
  app.require_subcommand(1);

  std::string config;
  std::string runs_dir = "runs";
  bool resume = false;
  auto* run = app.add_subcommand("run", "execute one configured run");
  run->add_option("config", config, "run configuration (JSON)")->required();
  run->add_option("--runs-dir", runs_dir, "root directory for run outputs");
  run->add_flag("--resume", resume, "skip when the run directory is already complete");

  std::string grid;
  auto* sweep = app.add_subcommand("sweep", "cross-product hyperparameter sweep");
  sweep->add_option("config", config, "base run configuration (JSON)")->required();
  sweep->add_option("--grid", grid, "grid JSON: dotted config path -> value list")
      ->required();
  sweep->add_option("--runs-dir", runs_dir, "root directory for run outputs");

  std::size_t synth_n = 200;
  double synth_shift = 0.5;
  std::uint64_t synth_seed = 0;
  std::string synth_out = "synth";
  auto* synth = app.add_subcommand("synth", "generate a two-domain synthetic corpus");
  synth->add_option("--n", synth_n, "documents per domain")->required();
  synth->add_option("--shift", synth_shift, "domain shift in [0,1]")->required();
  synth->add_option("--seed", synth_seed, "generator seed")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  std::string tsne_in;
  std::string tsne_out = "coords.csv";
  double perplexity = 30.0;
  std::size_t tsne_iters = 1000;
  std::uint64_t tsne_seed = 0;
  auto* tsne = app.add_subcommand("tsne", "project features to 2-D");
  tsne->add_option("features", tsne_in, "numeric CSV of feature rows")->required();
  tsne->add_option("--out", tsne_out, "output coordinates CSV")->required();
  tsne->add_option("--perplexity", perplexity, "target perplexity");
  tsne->add_option("--iters", tsne_iters, "gradient-descent iterations");
  tsne->add_option("--seed", tsne_seed, "init seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return run_cmd(config, runs_dir, resume);
    if (sweep->parsed()) return sweep_cmd(config, grid, runs_dir);
    if (synth->parsed()) return synth_cmd(synth_n, synth_shift, synth_seed, synth_out);
    if (tsne->parsed()) {
      return tsne_cmd(tsne_in, tsne_out, perplexity, tsne_iters, tsne_seed);
    }
  } catch (const udaforge::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
