#pragma once

// Run orchestration shared by the command-line tool and the acceptance suite:
// reproducible config snapshots, per-run artifact directories and seed
// aggregation.
//
// A run directory holds
//   config.json                  everything needed to rerun bit-exactly
//   model.txt                    trained parameters and standardizer
//   metrics.txt                  key=value scalars (no wall-clock values)
//   trace.csv                    per-epoch losses, lr and accuracies
//   reliability_confidence.csv   reliability_uncertainty.csv
//   uncertainty_histogram.csv
//   timing.txt                   wall-clock seconds, kept apart so metrics stay diffable

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tmur/datasets.hpp"
#include "tmur/model.hpp"
#include "tmur/training.hpp"

namespace tmur {

struct RunOptions {
  ModelConfig model;  // view dims and classes come from the data
  TrainConfig train;
  double split_ratio = 0.8;
};

nlohmann::json config_snapshot(const RunOptions& opts, std::uint64_t seed, const std::string& data_source);
RunOptions options_from_snapshot(const nlohmann::json& j);

struct RunArtifact {
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  MetricsReport metrics;
  std::size_t best_epoch = 0;
  double best_test_accuracy = 0.0;
  double seconds = 0.0;
};

std::string trace_csv(const TrainReport& report);
std::string run_metrics_text(const SeedRun& run);

// Trains one seed and writes its artifact directory.
RunArtifact train_and_write(const MultiViewDataset& ds, const RunOptions& opts, std::uint64_t seed,
                            const std::filesystem::path& dir, const std::string& data_source,
                            const EpochCallback& on_epoch = {});

// Writes the reliability / histogram tables of `m` into dir.
void write_metric_tables(const std::filesystem::path& dir, const MetricsReport& m);
// Writes metrics.txt and the reliability / histogram tables of `m` into dir,
// with `prefix` on every metric key.
void write_metrics_dir(const std::filesystem::path& dir, const MetricsReport& m, const std::string& prefix = "");

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for a single value
  std::size_t n = 0;
};

MeanStd mean_std(std::span<const double> values);
// "mean ± std" of values scaled by 100 with two decimals, e.g. "99.10 ± 0.46".
std::string percent_mean_std(const MeanStd& m);

// "five" -> protocol seeds; otherwise a comma list of integers.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);
// Comma list of reals.
std::vector<double> parse_real_list(const std::string& text);

}  // namespace tmur
