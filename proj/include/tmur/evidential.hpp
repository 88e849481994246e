#pragma once

// Dirichlet / subjective-logic algebra for evidential classifiers.
//
// A K-class evidence vector e >= 0 induces Dirichlet parameters alpha = e + 1,
// strength S = sum(alpha), class probabilities p = alpha / S, belief masses
// b = e / S and uncertainty mass u = K / S, so that sum(b) + u = 1.

#include <cstddef>
#include <span>
#include <vector>

namespace tmur {

class EvidenceVector {
 public:
  // Throws DomainError on negative / non-finite entries or fewer than 2 classes.
  explicit EvidenceVector(std::vector<double> values);

  std::size_t num_classes() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t k) const noexcept { return values_[k]; }

  // Uniform rescaling e -> t * e (t >= 0).
  EvidenceVector scaled(double t) const;

 private:
  std::vector<double> values_;
};

struct DirichletOpinion {
  std::vector<double> alpha;
  std::vector<double> belief;
  std::vector<double> probabilities;
  double strength = 0.0;
  double uncertainty = 1.0;

  std::size_t num_classes() const noexcept { return alpha.size(); }
};

DirichletOpinion evidence_to_opinion(const EvidenceVector& e);

// Span overload for hot paths; validates like the EvidenceVector constructor.
DirichletOpinion evidence_to_opinion(std::span<const double> evidence);

// The one-parameter family e(t) = t * r for a fixed support pattern r.
class ScaleFamily {
 public:
  // Throws DomainError if any entry is negative, the total is not positive,
  // or there are fewer than 2 classes.
  explicit ScaleFamily(std::vector<double> pattern);

  std::size_t num_classes() const noexcept { return pattern_.size(); }
  std::span<const double> pattern() const noexcept { return pattern_; }
  double total() const noexcept { return total_; }

  EvidenceVector at(double t) const;

 private:
  std::vector<double> pattern_;
  double total_;
};

// u(t) = K / (K + tR)
double family_uncertainty(const ScaleFamily& f, double t);
// du/dt = -KR / (K + tR)^2
double family_uncertainty_derivative(const ScaleFamily& f, double t);
// p_y(t) = (1 + t r_y) / (K + tR)
double true_class_probability(const ScaleFamily& f, std::size_t y, double t);
// dp_y/dt = (K r_y - R) / (K + tR)^2
double true_class_probability_derivative(const ScaleFamily& f, std::size_t y, double t);

}  // namespace tmur
