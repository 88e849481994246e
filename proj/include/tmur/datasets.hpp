#pragma once

// Multi-view datasets: N samples, V dense feature blocks and integer labels.
//
// On disk a dataset is a manifest plus one headerless CSV per view and a label
// file with one integer per line. Manifest syntax (paths relative to the
// manifest's directory, '#' starts a comment):
//
//   name = handwritten
//   classes = 10
//   samples = 2000
//   labels = labels.txt
//   view = pix pix.csv 240
//   view = fou fou.csv 76

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tmur/array.hpp"

namespace tmur {

struct ViewSpec {
  std::string name;
  std::filesystem::path path;
  std::size_t dim = 0;
};

struct DatasetManifest {
  std::string name;
  std::size_t num_classes = 0;
  std::size_t num_samples = 0;
  std::filesystem::path labels;
  std::vector<ViewSpec> views;
};

struct MultiViewDataset {
  std::string name;
  std::size_t num_classes = 0;
  std::vector<std::string> view_names;
  std::vector<DenseArray> views;
  std::vector<int> labels;

  std::size_t num_samples() const noexcept { return labels.size(); }
  std::size_t num_views() const noexcept { return views.size(); }
  std::vector<std::size_t> view_dims() const;
  // Throws DataError on row-count mismatch, bad labels or non-finite features.
  void validate() const;
  MultiViewDataset subset(std::span<const std::size_t> indices) const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
MultiViewDataset load_manifest(const std::filesystem::path& path);
// Writes <dir>/manifest.txt, one CSV per view and labels.txt; returns the
// manifest path. Numbers use the shortest round-trip decimal form, so saving a
// loaded dataset reproduces the files byte for byte.
std::filesystem::path save_dataset(const MultiViewDataset& ds, const std::filesystem::path& dir);

// Parses a headerless CSV of `expected_cols` numeric columns.
DenseArray read_csv_matrix(const std::filesystem::path& path, std::size_t expected_cols);
void write_csv_matrix(const std::filesystem::path& path, const DenseArray& m);

enum class ReliabilityMode {
  // Every view carries the true class with its own fraction / noise.
  kStatic,
  // Per sample a latent context picks the single informative view; the other
  // views show a decoy class. The context is the sum of per-view key digits
  // modulo V, so no proper subset of views reveals it.
  kSampleDependent,
};

struct SyntheticSpec {
  std::size_t num_samples = 1000;
  std::size_t num_classes = 4;
  std::vector<std::size_t> view_dims{16, 16};
  std::vector<double> informative_fraction{1.0, 1.0};
  std::vector<double> noise{0.0, 0.0};
  double separation = 1.0;  // std of centroid coordinates
  ReliabilityMode mode = ReliabilityMode::kStatic;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticDataset {
  MultiViewDataset data;
  std::vector<int> context;                   // informative view per sample (sample-dependent mode)
  std::vector<int> shown_class;               // row-major N x V: class whose centroid each view shows
  std::vector<DenseArray> centroids;          // per view, K x d_v
  std::vector<std::size_t> informative_dims;  // leading informative coordinates per view
};

SyntheticDataset generate_synthetic_detailed(const SyntheticSpec& spec);
MultiViewDataset generate_synthetic(const SyntheticSpec& spec);

// Multiplies view v by factors[v]. Throws DomainError for non-positive factors.
MultiViewDataset perturb_view_strength(const MultiViewDataset& ds, std::span<const double> factors);
// Factors drawn uniformly from [lo, hi], one per view.
std::vector<double> random_strength_factors(std::size_t num_views, std::uint64_t seed, double lo = 0.25,
                                            double hi = 4.0);
// Adds i.i.d. N(0, sigma^2) to every feature. Throws DomainError for sigma < 0.
MultiViewDataset add_gaussian_noise(const MultiViewDataset& ds, double sigma, std::uint64_t seed);

}  // namespace tmur
