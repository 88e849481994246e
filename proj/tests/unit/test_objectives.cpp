#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "tmur/errors.hpp"
#include "tmur/objectives.hpp"
#include "tmur/special.hpp"

using namespace tmur;
using tmur::testing::gradcheck;
using tmur::testing::random_array;

namespace {

// Three unit vectors with every pairwise cosine equal to 0.5.
std::vector<DenseArray> half_cosine_triple() {
  const double s = 1.0 / std::sqrt(2.0);
  return {DenseArray{{s, s, 0}}, DenseArray{{s, 0, s}}, DenseArray{{0, s, s}}};
}

DenseArray softmax_rows(const DenseArray& logits) {
  DenseArray out = logits;
  for (std::size_t b = 0; b < out.rows(); ++b) {
    double m = -INFINITY, s = 0.0;
    for (double x : out.row(b)) m = std::max(m, x);
    for (double& x : out.row(b)) s += (x = std::exp(x - m));
    for (double& x : out.row(b)) x /= s;
  }
  return out;
}

}  // namespace

TEST_SUITE("objectives") {
  TEST_CASE("digamma loss examples") {
    const int y0[] = {0};
    CHECK(std::abs(digamma_loss(DenseArray{{2, 1}}, y0) - 0.5) <= 1e-12);
    CHECK(std::abs(digamma_loss(DenseArray{{1, 1}}, y0) - 1.0) <= 1e-12);
    double prev = INFINITY;
    for (double a : {10.0, 1e3, 1e6}) {
      const double l = digamma_loss(DenseArray{{a, 1}}, y0);
      CHECK(l > 0.0);
      CHECK(l < prev);
      prev = l;
    }
    CHECK(prev < 1e-5);
    const int bad[] = {2};
    CHECK_THROWS_AS(digamma_loss(DenseArray{{1, 1}}, bad), DomainError);
    const int neg[] = {-1};
    CHECK_THROWS_AS(digamma_loss(DenseArray{{1, 1}}, neg), DomainError);
    CHECK_THROWS_AS(digamma_loss(DenseArray{{0.5, 1}}, y0), DomainError);
  }

  TEST_CASE("auxiliary loss examples") {
    const int y[] = {0};
    const DenseArray a{{2, 1}}, b{{1, 1}};
    const DenseArray same[] = {a, a, a};
    CHECK(std::abs(auxiliary_expert_loss(same, y) - digamma_loss(a, y)) <= 1e-15);
    const DenseArray mixed[] = {b, a};  // losses 1 and 1/2
    CHECK(std::abs(auxiliary_expert_loss(mixed, y) - 0.75) <= 1e-12);
    const DenseArray vacuous[] = {b, b};
    CHECK(std::abs(auxiliary_expert_loss(vacuous, y) - 1.0) <= 1e-12);
  }

  TEST_CASE("load balance examples") {
    const DenseArray uniform(5, 4, 0.25);
    CHECK(load_balance_loss(uniform, 1.5) == 0.0);
    DenseArray one_hot(3, 4, 0.0);
    for (std::size_t b = 0; b < 3; ++b) one_hot(b, 2) = 1.0;
    CHECK(std::abs(load_balance_loss(one_hot, 1.5) - 0.625) <= 1e-12);
    CHECK_THROWS_AS(load_balance_loss(uniform, 1.0), ConfigError);

    // invariance under expert permutation
    Rng rng(4);
    const DenseArray pi = softmax_rows(random_array(8, 4, rng, 3.0));
    DenseArray perm(8, 4);
    for (std::size_t b = 0; b < 8; ++b)
      for (std::size_t i = 0; i < 4; ++i) perm(b, i) = pi(b, (i + 1) % 4);
    CHECK(load_balance_loss(pi, 1.1) == doctest::Approx(load_balance_loss(perm, 1.1)).epsilon(1e-14));
  }

  TEST_CASE("load balance subgradient vanishes when inactive") {
    Parameter logits("logits", DenseArray(4, 3, 0.0));
    Rng rng(1);
    for (double& x : logits.value.values()) x = rng.normal(0.0, 0.1);
    Tape t;
    Var loss = load_balance_loss(t, softmax_temperature(t, t.parameter(logits), 1.0), 1.5);
    CHECK(t.value(loss)(0, 0) == 0.0);
    t.backward(loss);
    for (double g : logits.gradient.values()) CHECK(g == 0.0);
  }

  TEST_CASE("diversity examples") {
    const std::vector<DenseArray> orthogonal{DenseArray{{1, 0}}, DenseArray{{0, 1}}};
    CHECK(diversity_loss(orthogonal) == 0.0);
    const std::vector<DenseArray> identical{DenseArray{{0.6, 0.8}}, DenseArray{{0.6, 0.8}}};
    CHECK(std::abs(diversity_loss(identical) - 1.0) <= 1e-12);
    const std::vector<DenseArray> negated{DenseArray{{0.6, 0.8}}, DenseArray{{-0.6, -0.8}}};
    CHECK(std::abs(diversity_loss(negated) - 1.0) <= 1e-12);
    CHECK(std::abs(diversity_loss(half_cosine_triple()) - 0.25) <= 1e-12);
    const std::vector<DenseArray> single{DenseArray{{1, 0}}};
    CHECK(diversity_loss(single) == 0.0);
  }

  TEST_CASE("diversity invariances") {
    Rng rng(8);
    std::vector<DenseArray> z;
    for (int v = 0; v < 3; ++v) {
      DenseArray a = random_array(5, 4, rng);
      for (std::size_t b = 0; b < 5; ++b) {
        double n = 0.0;
        for (double x : a.row(b)) n += x * x;
        for (double& x : a.row(b)) x /= std::sqrt(n);
      }
      z.push_back(a);
    }
    const double base = diversity_loss(z);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
    std::vector<DenseArray> permuted{z[2], z[0], z[1]};
    CHECK(diversity_loss(permuted) == doctest::Approx(base).epsilon(1e-14));
    for (double& x : z[1].values()) x = -x;
    CHECK(diversity_loss(z) == doctest::Approx(base).epsilon(1e-14));
  }

  TEST_CASE("total loss") {
    const LossWeights ablated{0.0, 0.0, 0.0, 1.5};
    CHECK(combine_losses(0.7, 0.5, 0.2, 0.1, ablated).total == 0.7);
    const LossWeights fixed_lambda{0.3, 0.0, 0.0, 1.5};
    CHECK(std::abs(combine_losses(1.0, 0.5, 0.0, 0.0, fixed_lambda).total - 1.15) <= 1e-12);
    const LossWeights w{0.3, 0.05, 0.1, 1.5};
    const LossBreakdown l = combine_losses(0.9, 0.4, 0.2, 0.3, w);
    CHECK(std::abs(l.total - (0.9 + 0.3 * 0.4 + 0.05 * 0.2 + 0.1 * 0.3)) <= 1e-12);
    CHECK_THROWS_AS((LossWeights{0.3, -1.0, 0.0, 1.5}.validate()), ConfigError);
    CHECK_THROWS_AS((LossWeights{0.3, 0.0, 0.0, 0.9}.validate()), ConfigError);
  }

  TEST_CASE("tape losses agree with array losses and pass gradient checks") {
    Rng rng(12);
    const int labels[] = {0, 2, 1, 2};
    Parameter e1("e1", random_array(4, 3, rng));
    Parameter e2("e2", random_array(4, 3, rng));
    Parameter logits("logits", random_array(4, 3, rng, 4.0));
    Parameter z1("z1", random_array(4, 5, rng));
    Parameter z2("z2", random_array(4, 5, rng));
    Parameter z3("z3", random_array(4, 5, rng));

    auto build = [&](Tape& t, double rho) {
      Var a1 = add_constant(t, softplus(t, t.parameter(e1)), 1.0);
      Var a2 = add_constant(t, softplus(t, t.parameter(e2)), 1.0);
      Var alphas[] = {a1, a2};
      Var fused = digamma_loss(t, a1, labels);
      Var view = auxiliary_expert_loss(t, alphas, labels);
      Var bal = load_balance_loss(t, softmax_temperature(t, t.parameter(logits), 0.5), rho);
      Var zs[] = {l2_normalize_rows(t, t.parameter(z1)), l2_normalize_rows(t, t.parameter(z2)),
                  l2_normalize_rows(t, t.parameter(z3))};
      Var div = diversity_loss(t, zs);
      return total_loss(t, fused, view, bal, div, LossWeights{0.3, 0.7, 0.9, rho});
    };

    Tape t(false);
    const LossTerms terms = build(t, 1.05);
    const LossBreakdown v = terms.values(t);
    CHECK(v.bal > 0.0);  // the hinge must be active for the check to mean something
    CHECK(std::abs(v.total - (v.fused + 0.3 * v.view + 0.7 * v.bal + 0.9 * v.div)) <= 1e-12);
    const DenseArray alpha1 = t.value(add_constant(t, softplus(t, t.constant(e1.value)), 1.0));
    CHECK(std::abs(v.fused - digamma_loss(alpha1, labels)) <= 1e-15);

    auto r = gradcheck({&e1, &e2, &logits, &z1, &z2, &z3}, [&](Tape& tape) { return build(tape, 1.05).total; });
    CHECK_MESSAGE(r.max_error <= 1e-4, r.worst);
  }
}
