#include "tmur/theory.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "tmur/errors.hpp"
#include "tmur/evaluation.hpp"

namespace tmur {

std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0) || !(hi > lo) || n < 2) throw DomainError("log_grid needs 0 < lo < hi and n >= 2");
  std::vector<double> g(n);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i) g[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  g.front() = lo;
  g.back() = hi;
  return g;
}

// ---------------------------------------------------------------------------
// Scale bias

namespace {

constexpr double kDerivativeTol = 1e-6;
constexpr double kDirectionTol = 1e-10;

template <typename F>
double central_difference(F&& f, double t) {
  const double h = 1e-5 * t;
  return (f(t + h) - f(t - h)) / (2.0 * h);
}

}  // namespace

Theorem1Report evaluate_theorem1(const ScaleFamily& f, const std::vector<double>& t_grid) {
  if (t_grid.size() < 2) throw DomainError("t grid needs at least two points");
  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    if (!(t_grid[i] > 0.0) || (i > 0 && !(t_grid[i] > t_grid[i - 1]))) {
      throw DomainError("t grid must be positive and strictly increasing");
    }
  }
  const std::size_t k = f.num_classes();
  const double kd = static_cast<double>(k);
  const double r_total = f.total();
  Theorem1Report rep;
  rep.grid_points = t_grid.size();

  for (std::size_t i = 0; i < t_grid.size(); ++i) {
    const double t = t_grid[i];
    if (i > 0 && !(family_uncertainty(f, t) < family_uncertainty(f, t_grid[i - 1]))) rep.uncertainty_decreasing = false;

    const double du = family_uncertainty_derivative(f, t);
    const double du_num = central_difference([&](double s) { return family_uncertainty(f, s); }, t);
    rep.max_uncertainty_derivative_error = std::max(rep.max_uncertainty_derivative_error, std::abs(du_num - du) / std::abs(du));

    for (std::size_t y = 0; y < k; ++y) {
      const double dp = true_class_probability_derivative(f, y, t);
      const double dp_num = central_difference([&](double s) { return true_class_probability(f, y, s); }, t);
      const double err = dp == 0.0 ? std::abs(dp_num) : std::abs(dp_num - dp) / std::abs(dp);
      rep.max_probability_derivative_error = std::max(rep.max_probability_derivative_error, err);

      if (i > 0) {
        const double prev = true_class_probability(f, y, t_grid[i - 1]);
        const double cur = true_class_probability(f, y, t);
        const double drive = kd * f.pattern()[y] - r_total;
        const bool ok = drive > 0.0 ? cur > prev : drive < 0.0 ? cur < prev : std::abs(cur - prev) <= 1e-15;
        if (!ok) rep.probability_direction_ok = false;
      }
    }

    const DirichletOpinion op = evidence_to_opinion(f.at(t));
    double belief_total = 0.0;
    for (double b : op.belief) belief_total += b;
    for (std::size_t y = 0; y < k; ++y) {
      const double dev = std::abs(op.belief[y] / belief_total - f.pattern()[y] / r_total);
      rep.max_belief_direction_error = std::max(rep.max_belief_direction_error, dev);
    }
  }

  if (!rep.uncertainty_decreasing) rep.failures.push_back("uncertainty is not strictly decreasing in t");
  if (!(rep.max_uncertainty_derivative_error <= kDerivativeTol)) rep.failures.push_back("du/dt disagrees with finite differences");
  if (!(rep.max_probability_derivative_error <= kDerivativeTol)) rep.failures.push_back("dp_y/dt disagrees with finite differences");
  if (!rep.probability_direction_ok) rep.failures.push_back("p_y does not move with the sign of K r_y - R");
  if (!(rep.max_belief_direction_error <= kDirectionTol)) rep.failures.push_back("belief direction changes with t");
  return rep;
}

Theorem1Report check_theorem1(const ScaleFamily& f, const std::vector<double>& t_grid) {
  Theorem1Report rep = evaluate_theorem1(f, t_grid);
  if (!rep.passed()) throw CheckFailure("scale-bias check failed: " + rep.failures.front());
  return rep;
}

// ---------------------------------------------------------------------------
// Information gap

void RoutingGapInstance::validate() const {
  const std::size_t n = probability.size();
  if (n == 0) throw DomainError("instance has no contexts");
  if (oracle.size() != n || statistic.size() != n) throw DomainError("instance fields differ in length");
  if (!(mu > 0.0)) throw DomainError("mu must be positive");
  double total = 0.0;
  for (double p : probability) {
    if (!(p >= 0.0)) throw DomainError("context probabilities must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw DomainError("context probabilities must sum to 1");
  const std::size_t v = oracle.front().size();
  if (v == 0) throw DomainError("oracle weights are empty");
  for (const auto& w : oracle) {
    if (w.size() != v) throw DomainError("oracle weights differ in length");
    double s = 0.0;
    for (double x : w) {
      if (!(x >= 0.0)) throw DomainError("oracle weights must be non-negative");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-12) throw DomainError("oracle weights must sum to 1");
  }
}

RoutingGapInstance xor_instance(double mu) {
  RoutingGapInstance inst;
  inst.mu = mu;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      inst.probability.push_back(0.25);
      inst.statistic.push_back(a);
      inst.oracle.push_back((a ^ b) == 0 ? std::vector<double>{1.0, 0.0} : std::vector<double>{0.0, 1.0});
    }
  }
  return inst;
}

LocalRule best_local_rule(const RoutingGapInstance& inst) {
  inst.validate();
  std::map<int, double> mass;
  LocalRule rule;
  for (std::size_t x = 0; x < inst.num_contexts(); ++x) {
    auto& acc = rule[inst.statistic[x]];
    acc.resize(inst.num_weights(), 0.0);
    mass[inst.statistic[x]] += inst.probability[x];
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += inst.probability[x] * inst.oracle[x][j];
  }
  for (auto& [s, w] : rule) {
    // A statistic value of probability zero has no constraint; any simplex
    // point is optimal, take the uniform one.
    if (mass[s] == 0.0) {
      std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
      continue;
    }
    for (double& x : w) x /= mass[s];
  }
  return rule;
}

double local_rule_risk(const RoutingGapInstance& inst, const LocalRule& rule) {
  inst.validate();
  double risk = 0.0;
  for (std::size_t x = 0; x < inst.num_contexts(); ++x) {
    const auto it = rule.find(inst.statistic[x]);
    if (it == rule.end() || it->second.size() != inst.num_weights()) throw DomainError("rule does not cover statistic");
    double sq = 0.0;
    for (std::size_t j = 0; j < inst.num_weights(); ++j) {
      const double d = it->second[j] - inst.oracle[x][j];
      sq += d * d;
    }
    risk += inst.probability[x] * 0.5 * inst.mu * sq;
  }
  return risk;
}

namespace {

// (mu/2) E[Var(w* | s)] via E[|w|^2 | s] - |E[w | s]|^2, a different route
// from the residual sum used for the risk itself.
double conditional_variance_bound(const RoutingGapInstance& inst) {
  std::map<int, double> mass, second;
  std::map<int, std::vector<double>> first;
  for (std::size_t x = 0; x < inst.num_contexts(); ++x) {
    const int s = inst.statistic[x];
    const double p = inst.probability[x];
    mass[s] += p;
    auto& m = first[s];
    m.resize(inst.num_weights(), 0.0);
    for (std::size_t j = 0; j < inst.num_weights(); ++j) {
      m[j] += p * inst.oracle[x][j];
      second[s] += p * inst.oracle[x][j] * inst.oracle[x][j];
    }
  }
  double total = 0.0;
  for (const auto& [s, ps] : mass) {
    if (ps == 0.0) continue;
    double mean_sq = 0.0;
    for (double m : first[s]) mean_sq += (m / ps) * (m / ps);
    total += ps * (second[s] / ps - mean_sq);
  }
  return 0.5 * inst.mu * total;
}

// Minimizes sum_x p(x) |w - w*(x)|^2 over simplex grid points w for the
// contexts sharing one statistic value.
double grid_minimum(const RoutingGapInstance& inst, int s, double resolution) {
  const std::size_t v = inst.num_weights();
  const auto steps = static_cast<long>(std::llround(1.0 / resolution));
  std::vector<std::size_t> members;
  for (std::size_t x = 0; x < inst.num_contexts(); ++x) {
    if (inst.statistic[x] == s) members.push_back(x);
  }
  auto risk_at = [&](const double* w) {
    double r = 0.0;
    for (std::size_t x : members) {
      double sq = 0.0;
      for (std::size_t j = 0; j < v; ++j) {
        const double d = w[j] - inst.oracle[x][j];
        sq += d * d;
      }
      r += inst.probability[x] * 0.5 * inst.mu * sq;
    }
    return r;
  };
  double best = std::numeric_limits<double>::infinity();
  double w[3];
  const double stepd = static_cast<double>(steps);
  if (v == 1) {
    w[0] = 1.0;
    return risk_at(w);
  }
  for (long a = 0; a <= steps; ++a) {
    if (v == 2) {
      w[0] = static_cast<double>(a) / stepd;
      w[1] = static_cast<double>(steps - a) / stepd;
      best = std::min(best, risk_at(w));
      continue;
    }
    for (long b = 0; a + b <= steps; ++b) {
      w[0] = static_cast<double>(a) / stepd;
      w[1] = static_cast<double>(b) / stepd;
      w[2] = static_cast<double>(steps - a - b) / stepd;
      best = std::min(best, risk_at(w));
    }
  }
  return best;
}

}  // namespace

GapReport evaluate_theorem2(const RoutingGapInstance& inst, double resolution) {
  inst.validate();
  if (inst.num_weights() > 3) throw ConfigError("grid search supports at most 3 weights");
  if (!(resolution > 0.0 && resolution <= 0.5)) throw ConfigError("grid resolution must lie in (0, 0.5]");
  GapReport rep;
  rep.grid_resolution = resolution;
  // The oracle rule reads the full context, so it reproduces w*(x) exactly.
  rep.oracle_risk = 0.0;
  const LocalRule rule = best_local_rule(inst);
  rep.best_local_risk = local_rule_risk(inst, rule);
  rep.lower_bound = conditional_variance_bound(inst);
  for (const auto& entry : rule) rep.grid_local_risk += grid_minimum(inst, entry.first, resolution);

  if (!(rep.best_local_risk >= rep.oracle_risk)) rep.failures.push_back("best local risk is below the oracle risk");
  if (!(std::abs(rep.gap() - rep.lower_bound) <= 1e-12)) rep.failures.push_back("gap differs from (mu/2) E[Var(w*|s)]");
  if (!(rep.grid_local_risk >= rep.best_local_risk - 1e-12)) {
    rep.failures.push_back("grid search beat the conditional-mean rule");
  }
  if (!(std::abs(rep.grid_local_risk - rep.best_local_risk) <= 1e-4)) {
    rep.failures.push_back("grid search disagrees with the conditional-mean risk");
  }
  return rep;
}

GapReport check_theorem2(const RoutingGapInstance& inst, double resolution) {
  GapReport rep = evaluate_theorem2(inst, resolution);
  if (!rep.passed()) throw CheckFailure("information-gap check failed: " + rep.failures.front());
  return rep;
}

// ---------------------------------------------------------------------------
// Learning demo

GapDemoSpec GapDemoSpec::xor_default() {
  GapDemoSpec s;
  s.data.num_samples = 1000;
  s.data.num_classes = 2;
  s.data.view_dims = {8, 8};
  s.data.informative_fraction = {1.0, 1.0};
  s.data.noise = {0.3, 0.3};
  s.data.mode = ReliabilityMode::kSampleDependent;
  s.data.seed = 20240601;
  s.model.aligned_dim = 16;
  s.model.hidden_dims = {32};
  s.train.epochs = 60;
  s.train.batch_size = 64;
  s.train.base_lr = 5e-3;
  s.train.trace_test = false;
  return s;
}

GapDemoReport routing_gap_learning_demo(const GapDemoSpec& spec) {
  const auto t0 = std::chrono::steady_clock::now();
  const MultiViewDataset ds = generate_synthetic(spec.data);
  GapDemoReport rep;
  for (std::uint64_t seed : spec.seeds) {
    ModelConfig full = spec.model;
    full.router_mode = RouterMode::kUnified;
    full.use_attention = true;
    ModelConfig restricted = spec.model;
    restricted.router_mode = RouterMode::kMarginalEvidence;
    restricted.use_attention = false;

    GapDemoRow row;
    row.seed = seed;
    row.full_accuracy = train_seed(ds, full, spec.train, seed).report.final_metrics.accuracy;
    row.restricted_accuracy = train_seed(ds, restricted, spec.train, seed).report.final_metrics.accuracy;
    rep.rows.push_back(row);
    if (row.full_accuracy < row.restricted_accuracy - spec.tolerance) {
      rep.failures.push_back("seed " + std::to_string(seed) + ": full router below restricted router");
    }
    if (row.margin() < spec.min_margin) {
      rep.failures.push_back("seed " + std::to_string(seed) + ": margin " + format_number(row.margin()) + " < " +
                             format_number(spec.min_margin));
    }
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

// ---------------------------------------------------------------------------
// Text reports

namespace {

void append_failures(std::ostringstream& out, const std::vector<std::string>& failures) {
  out << "status=" << (failures.empty() ? "PASS" : "FAIL") << '\n';
  for (const std::string& f : failures) out << "failure=" << f << '\n';
}

}  // namespace

std::string format_report(const Theorem1Report& r) {
  std::ostringstream out;
  out << "check=thm1\n";
  out << "grid_points=" << r.grid_points << '\n';
  out << "uncertainty_strictly_decreasing=" << (r.uncertainty_decreasing ? "true" : "false") << '\n';
  out << "max_du_rel_error=" << format_number(r.max_uncertainty_derivative_error) << '\n';
  out << "max_dp_rel_error=" << format_number(r.max_probability_derivative_error) << '\n';
  out << "probability_direction_ok=" << (r.probability_direction_ok ? "true" : "false") << '\n';
  out << "max_belief_direction_error=" << format_number(r.max_belief_direction_error) << '\n';
  append_failures(out, r.failures);
  return out.str();
}

std::string format_report(const GapReport& r) {
  std::ostringstream out;
  out << "check=thm2\n";
  out << "oracle_risk=" << format_number(r.oracle_risk) << '\n';
  out << "best_local_risk=" << format_number(r.best_local_risk) << '\n';
  out << "gap=" << format_number(r.gap()) << '\n';
  out << "bound=" << format_number(r.lower_bound) << '\n';
  out << "gap_minus_bound=" << format_number(r.gap() - r.lower_bound) << '\n';
  out << "grid_resolution=" << format_number(r.grid_resolution) << '\n';
  out << "grid_local_risk=" << format_number(r.grid_local_risk) << '\n';
  append_failures(out, r.failures);
  return out.str();
}

std::string format_report(const GapDemoReport& r) {
  std::ostringstream out;
  out << "check=gap-demo\n";
  out << "seed,full_accuracy,restricted_accuracy,margin\n";
  for (const GapDemoRow& row : r.rows) {
    out << row.seed << ',' << format_number(row.full_accuracy) << ',' << format_number(row.restricted_accuracy) << ','
        << format_number(row.margin()) << '\n';
  }
  append_failures(out, r.failures);
  return out.str();
}

}  // namespace tmur
