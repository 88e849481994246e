#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gradcheck.hpp"
#include "tmur/errors.hpp"
#include "tmur/evidential.hpp"
#include "tmur/model.hpp"
#include "tmur/training.hpp"

using namespace tmur;
using tmur::testing::gradcheck;
using tmur::testing::random_array;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.view_dims = {4, 6};
  c.aligned_dim = 3;
  c.hidden_dims = {5};
  c.num_classes = 2;
  return c;
}

std::vector<DenseArray> random_views(const ModelConfig& c, std::size_t batch, Rng& rng) {
  std::vector<DenseArray> v;
  for (std::size_t d : c.view_dims) v.push_back(random_array(batch, d, rng));
  return v;
}

double row_norm(std::span<const double> r) {
  double s = 0.0;
  for (double x : r) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("config validation") {
    ModelConfig c = small_config();
    CHECK_NOTHROW(c.validate());
    CHECK(c.num_experts() == 3);
    c.temperature = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.view_dims = {};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.view_dims = {3, 0};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_config();
    c.num_classes = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_router_mode("unified") == RouterMode::kUnified);
    CHECK(parse_router_mode("marginal-evidence") == RouterMode::kMarginalEvidence);
    CHECK_THROWS_AS(parse_router_mode("nope"), ConfigError);
  }

  TEST_CASE("forward output invariants") {
    const ModelConfig c = small_config();
    Model m(c, 17);
    Rng rng(1);
    const auto views = random_views(c, 6, rng);
    Tape t(false);
    const ForwardOutput out = m.forward(t, views);
    REQUIRE(out.aligned.size() == 2);
    for (Var h : out.aligned) CHECK(t.value(h).cols() == 3);
    CHECK(t.value(out.context).cols() == 6);
    CHECK(m.parameter("collaborative.layer1.weight").value.rows() == 6);
    REQUIRE(out.evidence.size() == 3);
    for (Var e : out.evidence)
      for (double x : t.value(e).values()) CHECK(x > 0.0);
    for (Var z : out.normalized_hidden)
      for (std::size_t b = 0; b < 6; ++b) CHECK(std::abs(row_norm(t.value(z).row(b)) - 1.0) <= 1e-10);
    const DenseArray& pi = t.value(out.routing);
    const DenseArray& fused = t.value(out.fused_evidence);
    for (std::size_t b = 0; b < 6; ++b) {
      double s = 0.0;
      for (double p : pi.row(b)) {
        CHECK(p > 0.0);
        CHECK(p < 1.0);
        s += p;
      }
      CHECK(std::abs(s - 1.0) <= 1e-12);
      for (std::size_t k = 0; k < 2; ++k) {
        double expect = 0.0, lo = INFINITY, hi = -INFINITY;
        for (std::size_t i = 0; i < 3; ++i) {
          const double e = t.value(out.evidence[i])(b, k);
          expect += pi(b, i) * e;
          lo = std::min(lo, e);
          hi = std::max(hi, e);
        }
        CHECK(std::abs(fused(b, k) - expect) <= 1e-10);
        CHECK(fused(b, k) >= lo - 1e-10);
        CHECK(fused(b, k) <= hi + 1e-10);
      }
    }
  }

  TEST_CASE("identical samples give identical aligned rows") {
    const ModelConfig c = small_config();
    Model m(c, 3);
    Rng rng(2);
    auto views = random_views(c, 2, rng);
    for (DenseArray& v : views) std::copy(v.row(0).begin(), v.row(0).end(), v.row(1).begin());
    Tape t(false);
    const auto aligned = m.align_views(t, views);
    for (Var h : aligned) {
      const DenseArray& a = t.value(h);
      for (std::size_t j = 0; j < a.cols(); ++j) CHECK(a(0, j) == a(1, j));
    }
    std::vector<DenseArray> wrong{DenseArray(2, 5), DenseArray(2, 6)};
    CHECK_THROWS_AS(m.align_views(t, wrong), ShapeError);
    CHECK_THROWS_AS(m.align_views(t, std::span<const DenseArray>(views.data(), 1)), ShapeError);
  }

  TEST_CASE("fusion oracles") {
    const DenseArray e1{{2, 0}}, e2{{0, 2}};
    const DenseArray ev[] = {e1, e2};
    const DenseArray fused = fuse_evidence(DenseArray{{0.5, 0.5}}, ev);
    CHECK(fused == DenseArray{{1, 1}});
    CHECK(evidence_to_opinion(fused.row(0)).uncertainty == 0.5);

    const DenseArray same[] = {DenseArray{{0.3, 7.1, 2.2}}, DenseArray{{0.3, 7.1, 2.2}}, DenseArray{{0.3, 7.1, 2.2}}};
    const DenseArray f2 = fuse_evidence(DenseArray{{0.2, 0.5, 0.3}}, same);
    for (std::size_t k = 0; k < 3; ++k) CHECK(f2(0, k) == doctest::Approx(same[0](0, k)).epsilon(1e-15));

    Rng rng(6);
    const DenseArray experts[] = {random_array(1, 4, rng), random_array(1, 4, rng), random_array(1, 4, rng)};
    std::vector<DenseArray> positive;
    for (const DenseArray& e : experts) {
      DenseArray p = e;
      for (double& x : p.values()) x = std::abs(x);
      positive.push_back(p);
    }
    for (std::size_t i = 0; i < 3; ++i) {
      DenseArray onehot(1, 3, 0.0);
      onehot(0, i) = 1.0;
      const DenseArray f = fuse_evidence(onehot, positive);
      CHECK(f == positive[i]);
      const DirichletOpinion a = evidence_to_opinion(f.row(0));
      const DirichletOpinion b = evidence_to_opinion(positive[i].row(0));
      CHECK(a.probabilities == b.probabilities);
      CHECK(a.uncertainty == b.uncertainty);
    }
  }

  TEST_CASE("attention only affects the router") {
    const ModelConfig c = small_config();
    Model m(c, 5);
    Rng rng(3);
    const auto views = random_views(c, 4, rng);
    const Predictions before = m.predict(views);
    for (const char* name : {"attention.query", "attention.key", "attention.value", "attention.output"}) {
      m.parameter(name).value.fill(0.0);
    }
    const Predictions after = m.predict(views);
    for (std::size_t i = 0; i < before.expert_evidence.size(); ++i) CHECK(before.expert_evidence[i] == after.expert_evidence[i]);
    CHECK_FALSE(before.routing == after.routing);
  }

  TEST_CASE("router context variants") {
    ModelConfig one;
    one.view_dims = {5};
    one.aligned_dim = 4;
    one.hidden_dims = {3};
    one.num_classes = 3;
    Model m(one, 1);
    for (const char* name : {"attention.query", "attention.key", "attention.value", "attention.output"}) {
      m.parameter(name).value = DenseArray::identity(4);
    }
    Rng rng(4);
    const auto views = random_views(one, 3, rng);
    Tape t(false);
    const auto aligned = m.align_views(t, views);
    const Var g = m.router_context(t, aligned);
    const DenseArray& gv = t.value(g);
    const DenseArray& hv = t.value(aligned[0]);
    for (std::size_t i = 0; i < gv.size(); ++i) CHECK(gv.data()[i] == doctest::Approx(hv.data()[i]).epsilon(1e-15));

    ModelConfig off = small_config();
    off.use_attention = false;
    Model plain(off, 2);
    CHECK_THROWS_AS(plain.parameter("attention.query"), ConfigError);
    const auto pv = random_views(off, 3, rng);
    Tape u(false);
    const auto a2 = plain.align_views(u, pv);
    const DenseArray& ctx = u.value(plain.router_context(u, a2));
    for (std::size_t b = 0; b < 3; ++b) {
      for (std::size_t j = 0; j < 3; ++j) {
        CHECK(ctx(b, j) == u.value(a2[0])(b, j));
        CHECK(ctx(b, 3 + j) == u.value(a2[1])(b, j));
      }
    }
  }

  TEST_CASE("temperature identities") {
    const ModelConfig c = small_config();
    Rng rng(9);
    const auto views = random_views(c, 5, rng);

    Model base(c, 8);
    ModelConfig hot = c;
    hot.temperature = 2.0;
    Model doubled(hot, 8);
    for (const char* name : {"router.layer2.weight", "router.layer2.bias"}) {
      for (double& x : doubled.parameter(name).value.values()) x *= 2.0;
    }
    const DenseArray a = base.predict(views).routing;
    const DenseArray b = doubled.predict(views).routing;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == doctest::Approx(b.data()[i]).epsilon(1e-14));

    ModelConfig flat = c;
    flat.temperature = 1e12;
    Model m(flat, 8);
    const DenseArray uniform = m.predict(views).routing;
    for (double p : uniform.values()) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  }

  TEST_CASE("predictions") {
    ModelConfig c;
    c.view_dims = {8, 8};
    c.aligned_dim = 16;
    c.hidden_dims = {16};
    c.num_classes = 10;
    Model m(c, 21);
    Rng rng(10);
    const auto views = random_views(c, 32, rng);
    const Predictions p = m.predict(views);
    double mean_u = 0.0;
    for (double u : p.uncertainty) mean_u += u / 32.0;
    CHECK(mean_u > 0.5);
    for (std::size_t b = 0; b < 32; ++b) {
      const auto row = p.probabilities.row(b);
      CHECK(p.labels[b] == std::max_element(row.begin(), row.end()) - row.begin());
    }

    // Zeroed evidence heads give equal evidence everywhere: ties go to class 0.
    for (std::size_t i = 0; i < 3; ++i) {
      m.parameter("heads." + std::to_string(i) + ".weight").value.fill(0.0);
      m.parameter("heads." + std::to_string(i) + ".bias").value.fill(0.0);
    }
    for (int y : m.predict(views).labels) CHECK(y == 0);
  }

  TEST_CASE("scale bias shows up directly in evidence") {
    const ScaleFamily f({3.0, 1.0, 0.5});
    const DirichletOpinion a = evidence_to_opinion(f.at(1.0));
    const DirichletOpinion b = evidence_to_opinion(f.at(6.0));
    CHECK(std::abs(a.uncertainty - family_uncertainty(f, 1.0)) <= 1e-15);
    CHECK(std::abs(b.uncertainty - family_uncertainty(f, 6.0)) <= 1e-15);
    CHECK(b.uncertainty < a.uncertainty);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(std::abs(a.belief[k] / (1 - a.uncertainty) - b.belief[k] / (1 - b.uncertainty)) <= 1e-12);
    }
  }

  TEST_CASE("save and load are exact") {
    const ModelConfig c = small_config();
    Model m(c, 99);
    Rng rng(11);
    const auto views = random_views(c, 5, rng);
    m.standardizer() = Standardizer::fit(views);
    const auto path = std::filesystem::temp_directory_path() / "tmur_model_roundtrip.txt";
    m.save(path);
    Model r = Model::load(path);
    CHECK(r.config() == m.config());
    for (std::size_t i = 0; i < m.parameters().size(); ++i) CHECK(r.parameters()[i].value == m.parameters()[i].value);
    const auto sv = m.standardizer().apply(views);
    const Predictions a = m.predict(sv);
    const Predictions b = r.predict(r.standardizer().apply(views));
    CHECK(a.fused_evidence == b.fused_evidence);
    CHECK(a.routing == b.routing);

    std::filesystem::path broken = std::filesystem::temp_directory_path() / "tmur_model_broken.txt";
    {
      std::ofstream out(broken);
      out << "tmur-model 1\nconfig {}\n";
    }
    CHECK_THROWS_AS(Model::load(broken), DataError);
    CHECK_THROWS_AS(Model::load("/nonexistent/model.txt"), DataError);
    std::filesystem::remove(path);
    std::filesystem::remove(broken);
  }

  TEST_CASE("standardizer") {
    const DenseArray v{{1, 5}, {3, 5}};
    const DenseArray views[] = {v};
    const Standardizer s = Standardizer::fit(views);
    CHECK(s.mean[0] == DenseArray{{2, 5}});
    CHECK(s.scale[0] == DenseArray{{1, 1}});
    const auto out = s.apply(views);
    CHECK(out[0] == DenseArray{{-1, 0}, {1, 0}});
  }

  TEST_CASE("full objective gradient through a tiny model") {
    ModelConfig c;
    c.view_dims = {3, 2};
    c.aligned_dim = 3;
    c.hidden_dims = {4};
    c.num_classes = 2;
    c.temperature = 0.3;
    Model m(c, 2024);
    Rng rng(12);
    const auto views = random_views(c, 4, rng);
    const int labels[] = {0, 1, 1, 0};
    const LossWeights w{0.3, 0.5, 0.4, 1.01};

    std::vector<Parameter*> params;
    for (Parameter& p : m.parameters()) params.push_back(&p);
    auto build = [&](Tape& t) {
      const ForwardOutput out = m.forward(t, views);
      return build_objective(t, out, labels, w).total;
    };
    {
      Tape t(false);
      const ForwardOutput out = m.forward(t, views);
      const LossBreakdown l = build_objective(t, out, labels, w).values(t);
      CHECK(l.bal > 0.0);
      CHECK(l.div > 0.0);
    }
    const auto r = gradcheck(params, build);
    CHECK(r.entries == m.parameter_count());
    CHECK_MESSAGE(r.max_error <= 1e-4, r.worst);

    ModelConfig marginal = c;
    marginal.router_mode = RouterMode::kMarginalEvidence;
    Model mm(marginal, 5);
    // The marginal router reads detached evidence totals, so only the router
    // sees the full function; expert gradients deliberately skip that path.
    std::vector<Parameter*> mp;
    for (Parameter& p : mm.parameters()) {
      if (p.name.starts_with("router.")) mp.push_back(&p);
    }
    REQUIRE_FALSE(mp.empty());
    const auto r2 = gradcheck(mp, [&](Tape& t) { return build_objective(t, mm.forward(t, views), labels, w).total; });
    CHECK_MESSAGE(r2.max_error <= 1e-4, r2.worst);
  }
}
