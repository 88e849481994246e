#pragma once

// Accuracy and calibration metrics over a set of evidential predictions.
//
// Prob-ECE bins the maximum class probability c; for K classes c lies in
// [1/K, 1], and that interval is what gets split into equal-width bins.
// U-ECE bins the uncertainty u over [0, 1] and compares each bin's accuracy
// with 1 - mean(u).

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tmur/array.hpp"

namespace tmur {

struct Predictions;

struct PredictionSet {
  std::size_t num_classes = 0;
  std::vector<int> predicted;
  std::vector<int> truth;
  std::vector<double> confidence;   // max class probability
  std::vector<double> uncertainty;  // K / S

  std::size_t size() const noexcept { return truth.size(); }
  // Throws ShapeError on length mismatch, DomainError on out-of-range values.
  void validate() const;

  // Fused predictions of a model.
  static PredictionSet from_predictions(const Predictions& p, std::span<const int> labels);
  // Opinion of a single evidence block (e.g. one expert); argmax ties go low.
  static PredictionSet from_evidence(const DenseArray& evidence, std::span<const int> labels);
};

// Throws DomainError on an empty set.
double accuracy(const PredictionSet& p);
double mean_uncertainty(const PredictionSet& p);
double prob_ece(const PredictionSet& p, std::size_t bins = 15);
double u_ece(const PredictionSet& p, std::size_t bins = 15);

enum class ReliabilityAxis { kConfidence, kUncertainty };

struct ReliabilityBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
  double mean_axis = 0.0;  // mean confidence or mean uncertainty; 0 when empty
  double accuracy = 0.0;   // 0 when empty
};

struct HistogramBin {
  double lo = 0.0, hi = 0.0;
  std::size_t count = 0;
};

// Bin index of x in [lo, hi] split into `bins` equal parts; values on the
// upper edge (and rounding spill) land in the last bin.
std::size_t bin_index(double x, double lo, double hi, std::size_t bins);

std::vector<ReliabilityBin> reliability_table(const PredictionSet& p, ReliabilityAxis axis, std::size_t bins = 15);
std::vector<HistogramBin> uncertainty_histogram(const PredictionSet& p, std::size_t bins = 15);

struct MetricsReport {
  std::size_t samples = 0;
  std::size_t bins = 15;
  double accuracy = 0.0;
  double prob_ece = 0.0;
  double u_ece = 0.0;
  double mean_uncertainty = 0.0;
  std::vector<ReliabilityBin> confidence_bins;
  std::vector<ReliabilityBin> uncertainty_bins;
  std::vector<HistogramBin> histogram;
};

MetricsReport evaluate(const PredictionSet& p, std::size_t bins = 15);

// Shortest round-trip decimal form of x.
std::string format_number(double x);

// key=value lines for the scalar metrics, prefixed with `prefix`.
std::string metrics_text(const MetricsReport& m, const std::string& prefix = "");
// bin_lo,bin_hi,count,mean_axis,accuracy
std::string reliability_csv(std::span<const ReliabilityBin> table);
// bin_lo,bin_hi,count
std::string histogram_csv(std::span<const HistogramBin> hist);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace tmur
