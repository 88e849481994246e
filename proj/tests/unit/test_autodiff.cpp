#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "tmur/errors.hpp"

using namespace tmur;
using tmur::testing::gradcheck;
using tmur::testing::random_array;

namespace {

constexpr double kTol = 1e-4;

Parameter param(const char* name, DenseArray v) { return Parameter(name, std::move(v)); }

bool near(const DenseArray& a, const DenseArray& b, double tol) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a.data()[i] - b.data()[i]) > tol) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("autodiff") {
  TEST_CASE("dense array basics") {
    DenseArray a{{1, 2, 3}, {4, 5, 6}};
    CHECK(a.rows() == 2);
    CHECK(a.cols() == 3);
    CHECK(a(1, 2) == 6.0);
    CHECK(a.row(1)[0] == 4.0);
    CHECK(DenseArray::identity(2) == DenseArray{{1, 0}, {0, 1}});
    CHECK_THROWS_AS(DenseArray(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
    CHECK_THROWS_AS(require_shape(a, 3, 2, "a"), ShapeError);
    a(0, 0) = NAN;
    CHECK_FALSE(a.all_finite());
  }

  TEST_CASE("linear examples") {
    Tape t;
    Parameter w = param("w", DenseArray{{1, 2}, {3, 4}});
    Parameter b = param("b", DenseArray{{1, 1}});
    Var out1 = linear(t, t.constant(DenseArray::identity(2)), t.parameter(w), Var{});
    CHECK(t.value(out1) == DenseArray{{1, 2}, {3, 4}});
    Var out2 = linear(t, t.constant(DenseArray{{1, 1}}), t.parameter(w), t.parameter(b));
    CHECK(t.value(out2) == DenseArray{{5, 7}});

    Tape g;
    Var y = linear(g, g.constant(DenseArray{{1, 1}}), g.parameter(w), Var{});
    w.zero_grad();
    g.backward(y, DenseArray{{1, 1}});
    CHECK(w.gradient == DenseArray{{1, 1}, {1, 1}});

    Tape bad;
    CHECK_THROWS_AS(linear(bad, bad.constant(DenseArray(1, 3)), bad.parameter(w), Var{}), ShapeError);
  }

  TEST_CASE("layer norm examples") {
    Parameter gain = param("gain", DenseArray(1, 3, 1.0));
    Parameter shift = param("shift", DenseArray(1, 3, 0.0));
    Tape t;
    Var c = layer_norm(t, t.constant(DenseArray{{4, 4, 4}}), t.parameter(gain), t.parameter(shift));
    CHECK(t.value(c) == DenseArray{{0, 0, 0}});

    Parameter g2 = param("g2", DenseArray(1, 2, 1.0));
    Parameter s2 = param("s2", DenseArray(1, 2, 0.0));
    Var r = layer_norm(t, t.constant(DenseArray{{1, -1}}), t.parameter(g2), t.parameter(s2), 1e-14);
    CHECK(near(t.value(r), DenseArray{{1, -1}}, 1e-12));
  }

  TEST_CASE("softplus examples") {
    Tape t;
    Var y = softplus(t, t.constant(DenseArray{{0, 50, -50}}));
    CHECK(std::abs(t.value(y)(0, 0) - std::log(2.0)) <= 1e-15);
    CHECK(std::abs(t.value(y)(0, 1) - 50.0) <= 1e-12);
    CHECK(t.value(y)(0, 2) > 0.0);
    CHECK(sigmoid_value(0.0) == 0.5);

    Parameter x = param("x", DenseArray(1, 1, 0.0));
    Tape g;
    Var s = softplus(g, g.parameter(x));
    g.backward(s);
    CHECK(x.gradient(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  }

  TEST_CASE("softmax temperature examples") {
    Tape t;
    Var u = softmax_temperature(t, t.constant(DenseArray{{3, 3, 3, 3}}), 0.7);
    for (double p : t.value(u).values()) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
    Var q = softmax_temperature(t, t.constant(DenseArray{{std::log(2.0), 0.0}}), 1.0);
    CHECK(std::abs(t.value(q)(0, 0) - 2.0 / 3.0) <= 1e-15);
    CHECK(std::abs(t.value(q)(0, 1) - 1.0 / 3.0) <= 1e-15);
    Var cold = softmax_temperature(t, t.constant(DenseArray{{1, 0}}), 1e-3);
    CHECK(t.value(cold)(0, 0) > 1.0 - 1e-12);
    CHECK_THROWS_AS(softmax_temperature(t, t.constant(DenseArray{{1, 0}}), 0.0), DomainError);
    CHECK_THROWS_AS(softmax_temperature(t, t.constant(DenseArray{{1, 0}}), -1.0), DomainError);

    Rng rng(2);
    Var r = softmax_temperature(t, t.constant(random_array(20, 6, rng, 5.0)), 0.5);
    for (std::size_t b = 0; b < 20; ++b) {
      double s = 0.0;
      for (double p : t.value(r).row(b)) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        s += p;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }

  TEST_CASE("attention examples") {
    const std::size_t d = 3;
    Tape t;
    const AttentionVars id{t.constant(DenseArray::identity(d)), t.constant(DenseArray::identity(d)),
                           t.constant(DenseArray::identity(d)), t.constant(DenseArray::identity(d))};
    // One key: softmax weight is 1, output equals the value row.
    Var single = cross_attention(t, t.constant(DenseArray{{0.3, -1, 2}}), t.constant(DenseArray{{1, 1, 1}}),
                                 t.constant(DenseArray{{5, 6, 7}}), id, 1, 1, d);
    CHECK(near(t.value(single), DenseArray{{5, 6, 7}}, 1e-15));
    // Identical keys: uniform weights, output is the mean of the values.
    Var mean = cross_attention(t, t.constant(DenseArray{{0.3, -1, 2}}), t.constant(DenseArray{{1, 2, 3, 1, 2, 3}}),
                               t.constant(DenseArray{{1, 0, 0, 0, 4, 2}}), id, 1, 2, d);
    CHECK(near(t.value(mean), DenseArray{{0.5, 2, 1}}, 1e-15));
    CHECK_THROWS_AS(cross_attention(t, t.constant(DenseArray(1, 4)), t.constant(DenseArray(1, 3)),
                                    t.constant(DenseArray(1, 3)), id, 1, 1, d),
                    ShapeError);
  }

  TEST_CASE("tape contract") {
    Parameter w = param("w", DenseArray{{0.5}});
    Parameter unused = param("unused", DenseArray{{2.0}});
    Tape t;
    Var y = softplus(t, linear(t, t.constant(DenseArray{{1.5}}), t.parameter(w), Var{}));
    t.parameter(unused);
    t.backward(y);
    CHECK(t.consumed());
    CHECK(unused.gradient(0, 0) == 0.0);
    CHECK(w.gradient(0, 0) == doctest::Approx(1.5 * sigmoid_value(0.75)).epsilon(1e-15));
    CHECK_THROWS_AS(t.backward(y), StateError);

    Tape s;
    Var z = softplus(s, s.parameter(w));
    CHECK_THROWS_AS(s.backward(z, DenseArray(2, 1)), ShapeError);

    Tape inference(false);
    Var q = softplus(inference, inference.parameter(w));
    CHECK_THROWS_AS(inference.backward(q), StateError);
  }

  TEST_CASE("stop gradient and concat") {
    Parameter a = param("a", DenseArray{{1, 2}});
    Parameter b = param("b", DenseArray{{3}});
    Tape t;
    Var pieces[] = {t.parameter(a), stop_gradient(t, t.parameter(b))};
    Var c = concat_cols(t, pieces);
    CHECK(t.value(c) == DenseArray{{1, 2, 3}});
    t.backward(c, DenseArray{{1, 1, 1}});
    CHECK(a.gradient == DenseArray{{1, 1}});
    CHECK(b.gradient == DenseArray{{0}});
  }

  TEST_CASE("l2 normalization") {
    Tape t;
    Var n = l2_normalize_rows(t, t.constant(DenseArray{{3, 4}, {0, 0}}));
    CHECK(near(t.value(n), DenseArray{{0.6, 0.8}, {0, 0}}, 1e-15));
  }

  TEST_CASE("primitive gradients match central differences") {
    Rng rng(7);
    SUBCASE("linear") {
      Parameter x = param("x", random_array(4, 3, rng));
      Parameter w = param("w", random_array(3, 5, rng));
      Parameter b = param("b", random_array(1, 5, rng));
      auto r = gradcheck({&x, &w, &b}, [&](Tape& t) { return linear(t, t.parameter(x), t.parameter(w), t.parameter(b)); });
      CHECK_MESSAGE(r.max_error <= kTol, r.worst);
    }
    SUBCASE("layer norm") {
      Parameter x = param("x", random_array(3, 5, rng));
      Parameter g = param("g", random_array(1, 5, rng));
      Parameter s = param("s", random_array(1, 5, rng));
      auto r = gradcheck({&x, &g, &s}, [&](Tape& t) { return layer_norm(t, t.parameter(x), t.parameter(g), t.parameter(s)); });
      CHECK_MESSAGE(r.max_error <= kTol, r.worst);
    }
    SUBCASE("softplus") {
      Parameter x = param("x", random_array(3, 4, rng, 3.0));
      auto r = gradcheck({&x}, [&](Tape& t) { return softplus(t, t.parameter(x)); });
      CHECK_MESSAGE(r.max_error <= kTol, r.worst);
    }
    SUBCASE("softmax") {
      Parameter x = param("x", random_array(3, 4, rng));
      auto r = gradcheck({&x}, [&](Tape& t) { return softmax_temperature(t, t.parameter(x), 0.6); });
      CHECK_MESSAGE(r.max_error <= kTol, r.worst);
    }
    SUBCASE("l2 normalize / row sum / add constant") {
      Parameter x = param("x", random_array(3, 4, rng));
      auto r = gradcheck({&x}, [&](Tape& t) {
        Var n = l2_normalize_rows(t, t.parameter(x));
        Var parts[] = {n, row_sum(t, add_constant(t, t.parameter(x), 2.0))};
        return concat_cols(t, parts);
      });
      CHECK_MESSAGE(r.max_error <= kTol, r.worst);
    }
    SUBCASE("weighted sum") {
      Parameter a = param("a", random_array(1, 1, rng));
      Parameter b = param("b", random_array(1, 1, rng));
      auto r = gradcheck({&a, &b}, [&](Tape& t) {
        Var s[] = {t.parameter(a), t.parameter(b)};
        const double w[] = {0.3, -2.0};
        return weighted_sum(t, s, w);
      });
      CHECK_MESSAGE(r.max_error <= kTol, r.worst);
    }
    SUBCASE("cross attention d=4, 3 keys") {
      const std::size_t d = 4, n = 3;
      Parameter tokens = param("tokens", random_array(2, n * d, rng));
      Parameter q = param("q", random_array(d, d, rng, 0.6));
      Parameter k = param("k", random_array(d, d, rng, 0.6));
      Parameter v = param("v", random_array(d, d, rng, 0.6));
      Parameter o = param("o", random_array(d, d, rng, 0.6));
      auto r = gradcheck({&tokens, &q, &k, &v, &o}, [&](Tape& t) {
        Var x = t.parameter(tokens);
        const AttentionVars proj{t.parameter(q), t.parameter(k), t.parameter(v), t.parameter(o)};
        return cross_attention(t, x, x, x, proj, n, n, d);
      });
      CHECK_MESSAGE(r.max_error <= kTol, r.worst);
    }
    SUBCASE("scalar chain softplus(linear(x))") {
      Parameter x = param("x", random_array(1, 3, rng));
      Parameter w = param("w", random_array(3, 1, rng));
      auto r = gradcheck({&x, &w}, [&](Tape& t) { return softplus(t, linear(t, t.parameter(x), t.parameter(w), Var{})); });
      CHECK_MESSAGE(r.max_error <= kTol, r.worst);
    }
  }

  TEST_CASE("forward is deterministic") {
    Rng rng(3);
    Parameter w = param("w", random_array(6, 6, rng));
    const DenseArray x = random_array(5, 6, rng);
    Tape a(false), b(false);
    CHECK(a.value(softplus(a, linear(a, a.constant(x), a.parameter(w), Var{}))) ==
          b.value(softplus(b, linear(b, b.constant(x), b.parameter(w), Var{}))));
  }
}
