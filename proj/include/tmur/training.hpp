#pragma once

// Deterministic training loop: per-view standardization fitted on the training
// split, a seeded shuffle per epoch (the last partial batch is kept), Adam with
// bias correction and a per-step cosine learning-rate decay to zero.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tmur/datasets.hpp"
#include "tmur/evaluation.hpp"
#include "tmur/model.hpp"
#include "tmur/objectives.hpp"

namespace tmur {

inline constexpr std::uint64_t kProtocolSeeds[] = {3407, 7, 601, 101, 503};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Per class: floor(ratio * n_c) training samples, then the remaining
// floor(ratio * N) - sum(floors) slots go to the classes with the largest
// fractional parts (lowest class index on ties), never emptying a class's test
// side. Throws DataError for a class with fewer than 2 samples.
SplitIndices stratified_split(std::span<const int> labels, std::size_t num_classes, double ratio, std::uint64_t seed);

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 128;
  double base_lr = 1e-3;
  std::uint64_t seed = 3407;
  LossWeights weights;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t bins = 15;
  // Evaluate on the test split after every epoch (test-accuracy trace).
  bool trace_test = true;

  // Throws ConfigError.
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown loss;     // sample-weighted mean over the epoch's batches
  double lr = 0.0;        // rate used by the epoch's last step
  double train_accuracy = 0.0;  // running accuracy of the batches as trained
  double test_accuracy = 0.0;   // NaN when no test split is traced
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  double seconds = 0.0;
  std::size_t best_epoch = 0;  // highest test accuracy, earliest on ties
  double best_test_accuracy = 0.0;
  MetricsReport final_metrics;  // last epoch, on the test split (train split if none)
};

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr);

class Adam {
 public:
  Adam(const std::vector<Parameter>& params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // m <- b1 m + (1 - b1) g, v <- b2 v + (1 - b2) g^2,
  // theta <- theta - lr * mhat / (sqrt(vhat) + eps).
  void step(std::vector<Parameter>& params, double lr);
  std::size_t steps() const noexcept { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<DenseArray> m_, v_;
};

// Builds every loss term of one forward pass on the tape.
LossTerms build_objective(Tape& t, const ForwardOutput& out, std::span<const int> labels, const LossWeights& w);

// Rows `indices` of each view.
std::vector<DenseArray> gather_rows(std::span<const DenseArray> views, std::span<const std::size_t> indices);

// Standardizes with the model's statistics, then predicts in chunks.
Predictions predict_dataset(Model& model, const MultiViewDataset& ds, std::size_t chunk = 1024);
// Predicts on views that are already standardized.
Predictions predict_standardized(Model& model, std::span<const DenseArray> views, std::size_t chunk = 1024);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Fits the model's standardizer on `train`, then trains. `test` may be null.
// Throws NumericalError naming epoch, batch and loss term if a loss turns
// non-finite.
TrainReport fit(Model& model, const MultiViewDataset& train, const MultiViewDataset* test, const TrainConfig& cfg,
                const EpochCallback& on_epoch = {});

// One protocol run: stratified split, model init and shuffling all derive
// from `seed` through labelled forks.
struct SeedRun {
  std::uint64_t seed = 0;
  SplitIndices split;
  MultiViewDataset test;
  TrainReport report;
  Model model;
};

SeedRun train_seed(const MultiViewDataset& ds, const ModelConfig& base, TrainConfig cfg, std::uint64_t seed,
                   double split_ratio = 0.8, const EpochCallback& on_epoch = {});

ModelConfig model_config_for(const MultiViewDataset& ds, const ModelConfig& base);

// Seed used for weight initialization of a run with protocol seed `seed`.
std::uint64_t init_seed(std::uint64_t seed);

}  // namespace tmur
