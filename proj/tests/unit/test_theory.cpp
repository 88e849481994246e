#include <doctest.h>

#include <cmath>

#include "tmur/errors.hpp"
#include "tmur/theory.hpp"

using namespace tmur;

TEST_SUITE("theory") {
  TEST_CASE("log grid") {
    const auto g = log_grid(1e-2, 1e2, 50);
    CHECK(g.size() == 50);
    CHECK(g.front() == 1e-2);
    CHECK(g.back() == 1e2);
    for (std::size_t i = 1; i < g.size(); ++i) CHECK(g[i] > g[i - 1]);
    CHECK_THROWS_AS(log_grid(0.0, 1.0, 5), DomainError);
  }

  TEST_CASE("scale-bias checks") {
    const auto grid = log_grid(1e-2, 1e2, 50);
    const Theorem1Report r = check_theorem1(ScaleFamily({2, 1, 1}), grid);
    CHECK(r.passed());
    CHECK(r.max_uncertainty_derivative_error <= 1e-6);
    CHECK(r.max_belief_direction_error <= 1e-10);

    CHECK(check_theorem1(ScaleFamily({1, 1, 1}), grid).passed());
    const ScaleFamily uniform({1, 1, 1});
    for (double t : grid) CHECK(std::abs(true_class_probability(uniform, 1, t) - 1.0 / 3.0) <= 1e-15);
    CHECK(check_theorem1(ScaleFamily({0, 4, 0, 0}), grid).passed());

    CHECK_THROWS_AS(evaluate_theorem1(ScaleFamily({2, 1}), {1.0, 0.5}), DomainError);
    CHECK(format_report(r).find("status=PASS") != std::string::npos);
  }

  TEST_CASE("XOR instance gap") {
    const RoutingGapInstance inst = xor_instance(2.0);
    const LocalRule rule = best_local_rule(inst);
    REQUIRE(rule.size() == 2);
    for (const auto& [s, w] : rule) {
      CHECK(w[0] == 0.5);
      CHECK(w[1] == 0.5);
    }
    const GapReport r = check_theorem2(inst);
    CHECK(r.oracle_risk == 0.0);
    CHECK(std::abs(r.gap() - 0.5) <= 1e-12);
    CHECK(std::abs(r.gap() - r.lower_bound) <= 1e-12);
    CHECK(std::abs(r.grid_local_risk - r.best_local_risk) <= 1e-4);
    CHECK(r.grid_local_risk >= r.best_local_risk - 1e-12);

    const GapReport half = check_theorem2(xor_instance(1.0));
    CHECK(std::abs(half.gap() - 0.25) <= 1e-12);
  }

  TEST_CASE("zero-gap instances") {
    RoutingGapInstance full = xor_instance();
    for (std::size_t x = 0; x < 4; ++x) full.statistic[x] = static_cast<int>(x);
    CHECK(std::abs(check_theorem2(full).gap()) <= 1e-15);

    RoutingGapInstance constant = xor_instance();
    for (auto& w : constant.oracle) w = {0.3, 0.7};
    CHECK(std::abs(check_theorem2(constant).gap()) <= 1e-15);

    // w* measurable from s
    RoutingGapInstance measurable = xor_instance();
    measurable.oracle = {{1, 0}, {1, 0}, {0.2, 0.8}, {0.2, 0.8}};
    CHECK(std::abs(check_theorem2(measurable).gap()) <= 1e-15);
  }

  TEST_CASE("three-weight instance with uneven probabilities") {
    RoutingGapInstance inst;
    inst.mu = 3.0;
    inst.probability = {0.1, 0.2, 0.3, 0.4};
    inst.statistic = {0, 0, 1, 1};
    inst.oracle = {{1, 0, 0}, {0, 0.5, 0.5}, {0.2, 0.2, 0.6}, {0, 1, 0}};
    const GapReport r = check_theorem2(inst, 1e-2);
    CHECK(r.passed());
    CHECK(r.gap() > 0.0);
  }

  TEST_CASE("invalid instances") {
    RoutingGapInstance bad = xor_instance();
    bad.probability[0] = 0.5;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = xor_instance();
    bad.oracle[1] = {0.5, 0.6};
    CHECK_THROWS_AS(bad.validate(), DomainError);
  }
}
