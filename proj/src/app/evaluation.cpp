#include "tmur/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>

#include "tmur/errors.hpp"
#include "tmur/evidential.hpp"
#include "tmur/model.hpp"

namespace tmur {

namespace {

void require_nonempty(const PredictionSet& p) {
  if (p.size() == 0) throw DomainError("empty prediction set");
}

double confidence_floor(const PredictionSet& p) { return 1.0 / static_cast<double>(p.num_classes); }

struct BinSums {
  std::size_t count = 0;
  double axis = 0.0;
  double correct = 0.0;
};

std::vector<BinSums> accumulate(const PredictionSet& p, ReliabilityAxis axis, std::size_t bins) {
  if (bins == 0) throw DomainError("bin count must be positive");
  const double lo = axis == ReliabilityAxis::kConfidence ? confidence_floor(p) : 0.0;
  std::vector<BinSums> sums(bins);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double x = axis == ReliabilityAxis::kConfidence ? p.confidence[i] : p.uncertainty[i];
    BinSums& s = sums[bin_index(x, lo, 1.0, bins)];
    ++s.count;
    s.axis += x;
    s.correct += p.predicted[i] == p.truth[i] ? 1.0 : 0.0;
  }
  return sums;
}

}  // namespace

void PredictionSet::validate() const {
  const std::size_t n = truth.size();
  if (predicted.size() != n || confidence.size() != n || uncertainty.size() != n) {
    throw ShapeError("prediction set fields differ in length");
  }
  if (num_classes < 2) throw DomainError("prediction set needs at least 2 classes");
  const double floor = 1.0 / static_cast<double>(num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(confidence[i] >= floor - 1e-12 && confidence[i] <= 1.0 + 1e-12)) {
      throw DomainError("confidence outside [1/K, 1]");
    }
    if (!(uncertainty[i] >= 0.0 && uncertainty[i] <= 1.0 + 1e-12)) throw DomainError("uncertainty outside [0, 1]");
  }
}

PredictionSet PredictionSet::from_predictions(const Predictions& p, std::span<const int> labels) {
  if (labels.size() != p.labels.size()) throw ShapeError("label count differs from prediction count");
  PredictionSet s;
  s.num_classes = p.probabilities.cols();
  s.predicted = p.labels;
  s.truth.assign(labels.begin(), labels.end());
  s.uncertainty = p.uncertainty;
  s.confidence.resize(labels.size());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto row = p.probabilities.row(b);
    s.confidence[b] = *std::max_element(row.begin(), row.end());
  }
  return s;
}

PredictionSet PredictionSet::from_evidence(const DenseArray& evidence, std::span<const int> labels) {
  if (labels.size() != evidence.rows()) throw ShapeError("label count differs from evidence rows");
  PredictionSet s;
  s.num_classes = evidence.cols();
  s.truth.assign(labels.begin(), labels.end());
  for (std::size_t b = 0; b < evidence.rows(); ++b) {
    const DirichletOpinion op = evidence_to_opinion(evidence.row(b));
    const auto best = std::max_element(op.probabilities.begin(), op.probabilities.end());
    s.predicted.push_back(static_cast<int>(best - op.probabilities.begin()));
    s.confidence.push_back(*best);
    s.uncertainty.push_back(op.uncertainty);
  }
  return s;
}

std::size_t bin_index(double x, double lo, double hi, std::size_t bins) {
  const double pos = (x - lo) / (hi - lo) * static_cast<double>(bins);
  if (!(pos > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(pos), bins - 1);
}

double accuracy(const PredictionSet& p) {
  require_nonempty(p);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < p.size(); ++i) correct += p.predicted[i] == p.truth[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(p.size());
}

double mean_uncertainty(const PredictionSet& p) {
  require_nonempty(p);
  double s = 0.0;
  for (double u : p.uncertainty) s += u;
  return s / static_cast<double>(p.size());
}

double prob_ece(const PredictionSet& p, std::size_t bins) {
  require_nonempty(p);
  const double n = static_cast<double>(p.size());
  double ece = 0.0;
  for (const BinSums& s : accumulate(p, ReliabilityAxis::kConfidence, bins)) {
    if (s.count == 0) continue;
    const double c = static_cast<double>(s.count);
    ece += (c / n) * std::abs(s.correct / c - s.axis / c);
  }
  return ece;
}

double u_ece(const PredictionSet& p, std::size_t bins) {
  require_nonempty(p);
  const double n = static_cast<double>(p.size());
  double ece = 0.0;
  for (const BinSums& s : accumulate(p, ReliabilityAxis::kUncertainty, bins)) {
    if (s.count == 0) continue;
    const double c = static_cast<double>(s.count);
    ece += (c / n) * std::abs(s.correct / c - (1.0 - s.axis / c));
  }
  return ece;
}

std::vector<ReliabilityBin> reliability_table(const PredictionSet& p, ReliabilityAxis axis, std::size_t bins) {
  const double lo = axis == ReliabilityAxis::kConfidence ? confidence_floor(p) : 0.0;
  const double width = (1.0 - lo) / static_cast<double>(bins);
  const std::vector<BinSums> sums = accumulate(p, axis, bins);
  std::vector<ReliabilityBin> table(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    table[b].lo = lo + width * static_cast<double>(b);
    table[b].hi = b + 1 == bins ? 1.0 : lo + width * static_cast<double>(b + 1);
    table[b].count = sums[b].count;
    if (sums[b].count > 0) {
      const double c = static_cast<double>(sums[b].count);
      table[b].mean_axis = sums[b].axis / c;
      table[b].accuracy = sums[b].correct / c;
    }
  }
  return table;
}

std::vector<HistogramBin> uncertainty_histogram(const PredictionSet& p, std::size_t bins) {
  std::vector<HistogramBin> hist;
  for (const ReliabilityBin& b : reliability_table(p, ReliabilityAxis::kUncertainty, bins)) {
    hist.push_back({b.lo, b.hi, b.count});
  }
  return hist;
}

MetricsReport evaluate(const PredictionSet& p, std::size_t bins) {
  p.validate();
  MetricsReport m;
  m.samples = p.size();
  m.bins = bins;
  m.accuracy = accuracy(p);
  m.prob_ece = prob_ece(p, bins);
  m.u_ece = u_ece(p, bins);
  m.mean_uncertainty = mean_uncertainty(p);
  m.confidence_bins = reliability_table(p, ReliabilityAxis::kConfidence, bins);
  m.uncertainty_bins = reliability_table(p, ReliabilityAxis::kUncertainty, bins);
  m.histogram = uncertainty_histogram(p, bins);
  return m;
}

std::string format_number(double x) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

std::string metrics_text(const MetricsReport& m, const std::string& prefix) {
  std::string out;
  auto line = [&](const char* key, const std::string& value) { out += prefix + key + "=" + value + "\n"; };
  line("samples", std::to_string(m.samples));
  line("bins", std::to_string(m.bins));
  line("accuracy", format_number(m.accuracy));
  line("prob_ece", format_number(m.prob_ece));
  line("u_ece", format_number(m.u_ece));
  line("mean_uncertainty", format_number(m.mean_uncertainty));
  return out;
}

std::string reliability_csv(std::span<const ReliabilityBin> table) {
  std::string out = "bin_lo,bin_hi,count,mean_axis,accuracy\n";
  for (const ReliabilityBin& b : table) {
    out += format_number(b.lo) + "," + format_number(b.hi) + "," + std::to_string(b.count) + "," +
           format_number(b.mean_axis) + "," + format_number(b.accuracy) + "\n";
  }
  return out;
}

std::string histogram_csv(std::span<const HistogramBin> hist) {
  std::string out = "bin_lo,bin_hi,count\n";
  for (const HistogramBin& b : hist) {
    out += format_number(b.lo) + "," + format_number(b.hi) + "," + std::to_string(b.count) + "\n";
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace tmur
