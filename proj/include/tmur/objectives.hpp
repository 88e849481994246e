#pragma once

// Training objective: evidential digamma loss on the fused Dirichlet, the same
// loss averaged over every expert, a soft load-balancing hinge on batch-mean
// routing weights, and a squared-cosine diversity penalty between private
// expert features. Each term exists as a plain function over arrays and as a
// differentiable tape primitive; both share the same forward arithmetic.

#include <span>

#include "tmur/array.hpp"
#include "tmur/autodiff.hpp"

namespace tmur {

struct LossWeights {
  double lambda = 0.3;  // auxiliary expert supervision
  double beta = 0.0;    // load balancing
  double gamma = 0.0;   // diversity
  double rho = 1.5;     // tolerated routing concentration, > 1

  // Throws ConfigError.
  void validate() const;
};

struct LossBreakdown {
  double fused = 0.0;
  double view = 0.0;
  double bal = 0.0;
  double div = 0.0;
  double total = 0.0;
};

// Batch mean of psi(S) - psi(alpha_y). Requires alpha >= 1 and labels in [0, K).
double digamma_loss(const DenseArray& alpha, std::span<const int> labels);
// Mean of digamma_loss over experts.
double auxiliary_expert_loss(std::span<const DenseArray> alphas, std::span<const int> labels);
// max(sum_i mean_b(pi)_i^2 - rho / E, 0) for E experts. Throws ConfigError for rho <= 1.
double load_balance_loss(const DenseArray& pi, double rho);
// 2 / (V (V - 1)) * sum_{i<j} mean_b (zhat_i . zhat_j)^2. Zero-norm rows are
// left out of a pair's batch mean. Returns 0 for fewer than two experts.
double diversity_loss(std::span<const DenseArray> zhat);
LossBreakdown combine_losses(double fused, double view, double bal, double div, const LossWeights& w);

Var digamma_loss(Tape& t, Var alpha, std::span<const int> labels);
Var auxiliary_expert_loss(Tape& t, std::span<const Var> alphas, std::span<const int> labels);
Var load_balance_loss(Tape& t, Var pi, double rho);
Var diversity_loss(Tape& t, std::span<const Var> zhat);

struct LossTerms {
  Var fused, view, bal, div, total;

  LossBreakdown values(const Tape& t) const;
};

LossTerms total_loss(Tape& t, Var fused, Var view, Var bal, Var div, const LossWeights& w);

}  // namespace tmur
