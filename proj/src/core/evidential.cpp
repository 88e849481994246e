#include "tmur/evidential.hpp"

#include <cmath>
#include <string>

#include "tmur/errors.hpp"

namespace tmur {

namespace {

void validate_evidence(std::span<const double> values) {
  if (values.size() < 2) throw DomainError("evidence needs at least 2 classes");
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (!std::isfinite(values[k]) || values[k] < 0.0) {
      throw DomainError("evidence[" + std::to_string(k) + "] must be finite and non-negative");
    }
  }
}

void require_positive_t(double t) {
  if (!(t > 0.0) || !std::isfinite(t)) throw DomainError("scale parameter t must be positive");
}

}  // namespace

EvidenceVector::EvidenceVector(std::vector<double> values) : values_(std::move(values)) {
  validate_evidence(values_);
}

EvidenceVector EvidenceVector::scaled(double t) const {
  if (!(t >= 0.0)) throw DomainError("evidence scale must be non-negative");
  std::vector<double> out(values_);
  for (double& v : out) v *= t;
  return EvidenceVector(std::move(out));
}

DirichletOpinion evidence_to_opinion(const EvidenceVector& e) { return evidence_to_opinion(e.values()); }

DirichletOpinion evidence_to_opinion(std::span<const double> evidence) {
  validate_evidence(evidence);
  const std::size_t k = evidence.size();
  DirichletOpinion op;
  op.alpha.resize(k);
  op.belief.resize(k);
  op.probabilities.resize(k);
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    op.alpha[i] = evidence[i] + 1.0;
    s += op.alpha[i];
  }
  for (std::size_t i = 0; i < k; ++i) {
    op.belief[i] = evidence[i] / s;
    op.probabilities[i] = op.alpha[i] / s;
  }
  op.strength = s;
  op.uncertainty = static_cast<double>(k) / s;
  return op;
}

ScaleFamily::ScaleFamily(std::vector<double> pattern) : pattern_(std::move(pattern)), total_(0.0) {
  validate_evidence(pattern_);
  for (double r : pattern_) total_ += r;
  if (!(total_ > 0.0)) throw DomainError("support pattern must have positive total");
}

EvidenceVector ScaleFamily::at(double t) const {
  require_positive_t(t);
  std::vector<double> e(pattern_);
  for (double& v : e) v *= t;
  return EvidenceVector(std::move(e));
}

double family_uncertainty(const ScaleFamily& f, double t) {
  require_positive_t(t);
  const double k = static_cast<double>(f.num_classes());
  return k / (k + t * f.total());
}

double family_uncertainty_derivative(const ScaleFamily& f, double t) {
  require_positive_t(t);
  const double k = static_cast<double>(f.num_classes());
  const double s = k + t * f.total();
  return -k * f.total() / (s * s);
}

double true_class_probability(const ScaleFamily& f, std::size_t y, double t) {
  require_positive_t(t);
  if (y >= f.num_classes()) throw DomainError("class index out of range");
  const double k = static_cast<double>(f.num_classes());
  return (1.0 + t * f.pattern()[y]) / (k + t * f.total());
}

double true_class_probability_derivative(const ScaleFamily& f, std::size_t y, double t) {
  require_positive_t(t);
  if (y >= f.num_classes()) throw DomainError("class index out of range");
  const double k = static_cast<double>(f.num_classes());
  const double s = k + t * f.total();
  return (k * f.pattern()[y] - f.total()) / (s * s);
}

}  // namespace tmur
