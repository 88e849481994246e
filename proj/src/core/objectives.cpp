#include "tmur/objectives.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "tmur/errors.hpp"
#include "tmur/kernels.hpp"
#include "tmur/special.hpp"

namespace tmur {

void LossWeights::validate() const {
  if (!(lambda >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (!(rho > 1.0)) throw ConfigError("rho must exceed 1");
}

namespace {

void check_labels(const DenseArray& alpha, std::span<const int> labels) {
  if (labels.size() != alpha.rows()) throw ShapeError("digamma_loss: label count != batch size");
  if (alpha.rows() == 0) throw ShapeError("digamma_loss: empty batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= alpha.cols()) {
      throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(alpha.cols()) + ")");
    }
  }
}

struct PairStats {
  std::size_t i, j;
  double sum_sq = 0.0;
  std::size_t count = 0;
};

std::vector<PairStats> diversity_pairs(std::span<const DenseArray* const> zhat) {
  std::vector<PairStats> pairs;
  const std::size_t v = zhat.size();
  if (v < 2) return pairs;
  const std::size_t batch = zhat[0]->rows();
  for (const DenseArray* z : zhat) {
    if (z->rows() != batch || z->cols() != zhat[0]->cols()) throw ShapeError("diversity_loss: feature shape mismatch");
  }
  std::vector<std::vector<bool>> live(v, std::vector<bool>(batch));
  for (std::size_t e = 0; e < v; ++e) {
    for (std::size_t b = 0; b < batch; ++b) live[e][b] = kernels::dot(zhat[e]->row(b), zhat[e]->row(b)) > 0.0;
  }
  for (std::size_t i = 0; i < v; ++i) {
    for (std::size_t j = i + 1; j < v; ++j) {
      PairStats p{i, j};
      for (std::size_t b = 0; b < batch; ++b) {
        if (!live[i][b] || !live[j][b]) continue;
        const double c = kernels::dot(zhat[i]->row(b), zhat[j]->row(b));
        p.sum_sq += c * c;
        ++p.count;
      }
      pairs.push_back(p);
    }
  }
  return pairs;
}

double pair_coefficient(std::size_t v) { return 2.0 / (static_cast<double>(v) * static_cast<double>(v - 1)); }

double diversity_from_pairs(const std::vector<PairStats>& pairs, std::size_t v) {
  if (v < 2) return 0.0;
  double total = 0.0;
  for (const PairStats& p : pairs) {
    if (p.count > 0) total += p.sum_sq / static_cast<double>(p.count);
  }
  return pair_coefficient(v) * total;
}

struct BalanceStats {
  std::vector<double> mean;
  double concentration = 0.0;
  double threshold = 0.0;
};

BalanceStats balance_stats(const DenseArray& pi, double rho) {
  if (!(rho > 1.0)) throw ConfigError("rho must exceed 1");
  if (pi.rows() == 0 || pi.cols() == 0) throw ShapeError("load_balance_loss: empty routing matrix");
  BalanceStats s;
  s.mean.assign(pi.cols(), 0.0);
  for (std::size_t b = 0; b < pi.rows(); ++b) {
    for (std::size_t i = 0; i < pi.cols(); ++i) s.mean[i] += pi(b, i);
  }
  for (double& m : s.mean) {
    m /= static_cast<double>(pi.rows());
    s.concentration += m * m;
  }
  s.threshold = rho / static_cast<double>(pi.cols());
  return s;
}

}  // namespace

double digamma_loss(const DenseArray& alpha, std::span<const int> labels) {
  check_labels(alpha, labels);
  double total = 0.0;
  for (std::size_t b = 0; b < alpha.rows(); ++b) {
    double s = 0.0;
    for (double a : alpha.row(b)) {
      // NaN propagates as a NaN loss so the trainer can name the failing term.
      if (std::isnan(a)) return std::numeric_limits<double>::quiet_NaN();
      if (a < 1.0) throw DomainError("digamma_loss: Dirichlet parameters must be >= 1");
      s += a;
    }
    total += digamma(s) - digamma(alpha(b, static_cast<std::size_t>(labels[b])));
  }
  return total / static_cast<double>(alpha.rows());
}

double auxiliary_expert_loss(std::span<const DenseArray> alphas, std::span<const int> labels) {
  if (alphas.empty()) throw ShapeError("auxiliary_expert_loss: no experts");
  double total = 0.0;
  for (const DenseArray& a : alphas) total += digamma_loss(a, labels);
  return total / static_cast<double>(alphas.size());
}

double load_balance_loss(const DenseArray& pi, double rho) {
  const BalanceStats s = balance_stats(pi, rho);
  return std::max(s.concentration - s.threshold, 0.0);
}

double diversity_loss(std::span<const DenseArray> zhat) {
  std::vector<const DenseArray*> ptrs;
  for (const DenseArray& z : zhat) ptrs.push_back(&z);
  return diversity_from_pairs(diversity_pairs(ptrs), ptrs.size());
}

LossBreakdown combine_losses(double fused, double view, double bal, double div, const LossWeights& w) {
  LossBreakdown out{fused, view, bal, div, 0.0};
  out.total = fused + w.lambda * view + w.beta * bal + w.gamma * div;
  return out;
}

// ---------------------------------------------------------------------------
// Tape primitives

Var digamma_loss(Tape& t, Var alpha, std::span<const int> labels) {
  const DenseArray& av = t.value(alpha);
  const double value = digamma_loss(av, labels);
  std::vector<int> ys(labels.begin(), labels.end());
  return t.record(DenseArray(1, 1, value), {alpha}, [alpha, ys](Tape& tp, std::size_t self) {
    DenseArray* da = tp.grad_buffer(alpha);
    if (!da) return;
    const DenseArray& a = tp.value(alpha);
    const double g = tp.grad(self)(0, 0) / static_cast<double>(a.rows());
    for (std::size_t b = 0; b < a.rows(); ++b) {
      double s = 0.0;
      for (double v : a.row(b)) s += v;
      const double ts = trigamma(s);
      for (double& d : da->row(b)) d += g * ts;
      const auto y = static_cast<std::size_t>(ys[b]);
      (*da)(b, y) -= g * trigamma(a(b, y));
    }
  });
}

Var auxiliary_expert_loss(Tape& t, std::span<const Var> alphas, std::span<const int> labels) {
  if (alphas.empty()) throw ShapeError("auxiliary_expert_loss: no experts");
  std::vector<Var> terms;
  for (Var a : alphas) terms.push_back(digamma_loss(t, a, labels));
  const std::vector<double> w(terms.size(), 1.0 / static_cast<double>(terms.size()));
  return weighted_sum(t, terms, w);
}

Var load_balance_loss(Tape& t, Var pi, double rho) {
  const BalanceStats s = balance_stats(t.value(pi), rho);
  const bool active = s.concentration > s.threshold;
  const double value = active ? s.concentration - s.threshold : 0.0;
  const std::vector<double> mean = s.mean;
  return t.record(DenseArray(1, 1, value), {pi}, [pi, active, mean](Tape& tp, std::size_t self) {
    if (!active) return;
    DenseArray* dp = tp.grad_buffer(pi);
    if (!dp) return;
    const double g = tp.grad(self)(0, 0) * 2.0 / static_cast<double>(dp->rows());
    for (std::size_t b = 0; b < dp->rows(); ++b) {
      for (std::size_t i = 0; i < dp->cols(); ++i) (*dp)(b, i) += g * mean[i];
    }
  });
}

Var diversity_loss(Tape& t, std::span<const Var> zhat) {
  std::vector<const DenseArray*> ptrs;
  for (Var z : zhat) ptrs.push_back(&t.value(z));
  const std::vector<PairStats> pairs = diversity_pairs(ptrs);
  const double value = diversity_from_pairs(pairs, ptrs.size());
  std::vector<Var> ins(zhat.begin(), zhat.end());
  return t.record(DenseArray(1, 1, value), zhat, [ins, pairs](Tape& tp, std::size_t self) {
    const double coef = pair_coefficient(ins.size()) * tp.grad(self)(0, 0);
    for (const PairStats& p : pairs) {
      if (p.count == 0) continue;
      const DenseArray& zi = tp.value(ins[p.i]);
      const DenseArray& zj = tp.value(ins[p.j]);
      DenseArray* di = tp.grad_buffer(ins[p.i]);
      DenseArray* dj = tp.grad_buffer(ins[p.j]);
      const double scale = coef / static_cast<double>(p.count);
      for (std::size_t b = 0; b < zi.rows(); ++b) {
        const double ni = kernels::dot(zi.row(b), zi.row(b));
        const double nj = kernels::dot(zj.row(b), zj.row(b));
        if (!(ni > 0.0) || !(nj > 0.0)) continue;
        const double c = kernels::dot(zi.row(b), zj.row(b));
        if (di) kernels::axpy(2.0 * c * scale, zj.row(b), di->row(b));
        if (dj) kernels::axpy(2.0 * c * scale, zi.row(b), dj->row(b));
      }
    }
  });
}

LossBreakdown LossTerms::values(const Tape& t) const {
  auto v = [&t](Var x) { return x.valid() ? t.value(x)(0, 0) : 0.0; };
  return LossBreakdown{v(fused), v(view), v(bal), v(div), v(total)};
}

LossTerms total_loss(Tape& t, Var fused, Var view, Var bal, Var div, const LossWeights& w) {
  w.validate();
  const std::array<Var, 4> terms{fused, view, bal, div};
  const std::array<double, 4> weights{1.0, w.lambda, w.beta, w.gamma};
  return LossTerms{fused, view, bal, div, weighted_sum(t, terms, weights)};
}

}  // namespace tmur
