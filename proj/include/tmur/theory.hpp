#pragma once

// Executable checks of the two theoretical claims behind the unified router.
//
// Scale bias: along e(t) = t r, uncertainty u(t) = K / (K + tR) strictly
// decreases, p_y moves up or down depending on the sign of K r_y - R, and the
// belief direction b / sum(b) = r / R never changes.
//
// Information gap: with quadratic per-context loss (mu/2) |w - w*(x)|^2, the
// best rule that sees only a local statistic s(x) is E[w* | s], and its excess
// risk over the oracle is exactly (mu/2) E[Var(w* | s)].

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tmur/datasets.hpp"
#include "tmur/evidential.hpp"
#include "tmur/model.hpp"
#include "tmur/training.hpp"

namespace tmur {

// n log-spaced points from lo to hi inclusive.
std::vector<double> log_grid(double lo, double hi, std::size_t n);

struct Theorem1Report {
  std::size_t grid_points = 0;
  bool uncertainty_decreasing = true;
  double max_uncertainty_derivative_error = 0.0;  // relative, vs central differences
  double max_probability_derivative_error = 0.0;  // relative (absolute where the derivative is 0)
  bool probability_direction_ok = true;           // p_y up iff K r_y > R, down iff <, flat iff =
  double max_belief_direction_error = 0.0;
  std::vector<std::string> failures;

  bool passed() const noexcept { return failures.empty(); }
};

// Tolerances: derivative agreement 1e-6, belief direction 1e-10.
Theorem1Report evaluate_theorem1(const ScaleFamily& f, const std::vector<double>& t_grid);
// As above; throws CheckFailure naming the first failed check.
Theorem1Report check_theorem1(const ScaleFamily& f, const std::vector<double>& t_grid);

struct RoutingGapInstance {
  std::vector<double> probability;               // per context
  std::vector<std::vector<double>> oracle;       // w*(x), on the simplex
  std::vector<int> statistic;                    // s(x)
  double mu = 2.0;

  std::size_t num_contexts() const noexcept { return probability.size(); }
  std::size_t num_weights() const noexcept { return oracle.empty() ? 0 : oracle.front().size(); }
  // Throws DomainError.
  void validate() const;
};

// Contexts (a, b) uniform on {0,1}^2, s = a, w* = (1,0) if a xor b == 0 else (0,1).
RoutingGapInstance xor_instance(double mu = 2.0);

using LocalRule = std::map<int, std::vector<double>>;

// E[w* | s = value] for every statistic value, by enumeration.
LocalRule best_local_rule(const RoutingGapInstance& inst);
// E_x (mu/2) |rule(s(x)) - w*(x)|^2.
double local_rule_risk(const RoutingGapInstance& inst, const LocalRule& rule);

struct GapReport {
  double oracle_risk = 0.0;
  double best_local_risk = 0.0;
  double lower_bound = 0.0;  // (mu/2) E[Var(w* | s)]
  double grid_local_risk = 0.0;
  double grid_resolution = 1e-3;
  std::vector<std::string> failures;

  double gap() const noexcept { return best_local_risk - oracle_risk; }
  bool passed() const noexcept { return failures.empty(); }
};

// Equality tolerance 1e-12; grid agreement 1e-4. The grid search walks every
// simplex point with coordinates on multiples of `resolution`, separately per
// statistic value; it supports up to 3 weights (ConfigError beyond).
GapReport evaluate_theorem2(const RoutingGapInstance& inst, double resolution = 1e-3);
GapReport check_theorem2(const RoutingGapInstance& inst, double resolution = 1e-3);

// Training-based face of the gap: a unified router against a router that only
// sees each view's own (detached) total evidence, on sample-dependent data.
struct GapDemoSpec {
  SyntheticSpec data;
  ModelConfig model;  // view dims / classes are filled from the data
  TrainConfig train;
  std::vector<std::uint64_t> seeds{std::begin(kProtocolSeeds), std::end(kProtocolSeeds)};
  double min_margin = 0.05;  // required accuracy advantage per seed
  double tolerance = 0.01;   // full >= restricted - tolerance

  // Defaults tuned for a V=2, K=2 XOR-reliability problem on one CPU core.
  static GapDemoSpec xor_default();
};

struct GapDemoRow {
  std::uint64_t seed = 0;
  double full_accuracy = 0.0;
  double restricted_accuracy = 0.0;
  double margin() const noexcept { return full_accuracy - restricted_accuracy; }
};

struct GapDemoReport {
  std::vector<GapDemoRow> rows;
  double seconds = 0.0;
  std::vector<std::string> failures;

  bool passed() const noexcept { return failures.empty(); }
};

GapDemoReport routing_gap_learning_demo(const GapDemoSpec& spec);

std::string format_report(const Theorem1Report& r);
std::string format_report(const GapReport& r);
std::string format_report(const GapDemoReport& r);

}  // namespace tmur
