#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tmur/datasets.hpp"
#include "tmur/errors.hpp"

using namespace tmur;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tmur_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

double view_norm(const DenseArray& a) {
  double s = 0.0;
  for (double x : a.values()) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("datasets") {
  TEST_CASE("HandWritten-shaped manifest loads") {
    SyntheticSpec spec;
    spec.num_samples = 2000;
    spec.num_classes = 10;
    spec.view_dims = {240, 76, 216, 47, 64, 6};
    spec.informative_fraction = std::vector<double>(6, 0.5);
    spec.noise = std::vector<double>(6, 1.0);
    spec.seed = 1;
    MultiViewDataset ds = generate_synthetic(spec);
    ds.name = "handwritten";
    ds.view_names = {"pix", "fou", "fac", "zer", "kar", "mor"};
    const fs::path dir = fresh_dir("hw");
    const fs::path manifest = save_dataset(ds, dir);
    const MultiViewDataset loaded = load_manifest(manifest);
    CHECK(loaded.num_samples() == 2000);
    CHECK(loaded.num_views() == 6);
    CHECK(loaded.num_classes == 10);
    CHECK(loaded.view_dims() == std::vector<std::size_t>{240, 76, 216, 47, 64, 6});
    CHECK(loaded.view_names == ds.view_names);
    CHECK(loaded.labels == ds.labels);
    for (std::size_t v = 0; v < 6; ++v) CHECK(loaded.views[v] == ds.views[v]);
    fs::remove_all(dir);
  }

  TEST_CASE("re-saving reproduces files byte for byte") {
    SyntheticSpec spec;
    spec.num_samples = 50;
    spec.noise = {0.3, 2.0};
    spec.seed = 4;
    const fs::path a = fresh_dir("rs_a"), b = fresh_dir("rs_b");
    save_dataset(generate_synthetic(spec), a);
    save_dataset(load_manifest(a / "manifest.txt"), b);
    for (const char* f : {"manifest.txt", "labels.txt", "view0.csv", "view1.csv"}) {
      CAPTURE(f);
      CHECK(slurp(a / f) == slurp(b / f));
    }
    fs::remove_all(a);
    fs::remove_all(b);
  }

  TEST_CASE("malformed files") {
    const fs::path dir = fresh_dir("bad");
    write(dir / "labels.txt", "0\n1\n1\n");
    write(dir / "a.csv", "1,2\n3,4\n5,6\n");
    write(dir / "short.csv", "1,2\n3,4\n");
    write(dir / "empty_cell.csv", "1,2\n3,\n5,6\n");
    write(dir / "text_cell.csv", "1,2\n3,4\n5,x7\n");
    write(dir / "bad_label.txt", "0\n1\n2\n");
    const std::string head = "name = t\nclasses = 2\nsamples = 3\n";

    write(dir / "m_short.txt", head + "labels = labels.txt\nview = a a.csv 2\nview = b short.csv 2\n");
    try {
      load_manifest(dir / "m_short.txt");
      FAIL("expected DataError");
    } catch (const ParseError&) {
      FAIL("row-count mismatch should not be a parse error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("'b'") != std::string::npos);
    }

    write(dir / "m_empty.txt", head + "labels = labels.txt\nview = a empty_cell.csv 2\n");
    try {
      load_manifest(dir / "m_empty.txt");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.row() == 2);
      CHECK(e.col() == 2);
    }

    write(dir / "m_text.txt", head + "labels = labels.txt\nview = a text_cell.csv 2\n");
    try {
      load_manifest(dir / "m_text.txt");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.row() == 3);
      CHECK(e.col() == 2);
    }

    write(dir / "m_label.txt", head + "labels = bad_label.txt\nview = a a.csv 2\n");
    CHECK_THROWS_AS(load_manifest(dir / "m_label.txt"), DataError);
    write(dir / "m_width.txt", head + "labels = labels.txt\nview = a a.csv 3\n");
    CHECK_THROWS_AS(load_manifest(dir / "m_width.txt"), ParseError);
    write(dir / "m_key.txt", head + "labels = labels.txt\nbogus = 1\nview = a a.csv 2\n");
    CHECK_THROWS_AS(load_manifest(dir / "m_key.txt"), ParseError);
    write(dir / "m_ok.txt", head + "# comment\nlabels = labels.txt\nview = a a.csv 2\n");
    CHECK(load_manifest(dir / "m_ok.txt").views[0] == DenseArray{{1, 2}, {3, 4}, {5, 6}});
    CHECK_THROWS_AS(load_manifest(dir / "missing.txt"), DataError);
    fs::remove_all(dir);
  }

  TEST_CASE("zero-noise synthetic is nearest-centroid separable") {
    SyntheticSpec spec;
    spec.num_samples = 400;
    spec.num_classes = 4;
    spec.view_dims = {6, 9};
    spec.seed = 7;
    const SyntheticDataset s = generate_synthetic_detailed(spec);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < spec.num_samples; ++i) {
      double best = INFINITY;
      int arg = -1;
      for (int k = 0; k < 4; ++k) {
        double d = 0.0;
        for (std::size_t v = 0; v < 2; ++v) {
          for (std::size_t j = 0; j < spec.view_dims[v]; ++j) {
            const double diff = s.data.views[v](i, j) - s.centroids[v](k, j);
            d += diff * diff;
          }
        }
        if (d < best) {
          best = d;
          arg = k;
        }
      }
      correct += arg == s.data.labels[i] ? 1 : 0;
    }
    CHECK(correct == spec.num_samples);
    // balanced classes
    std::vector<int> counts(4, 0);
    for (int y : s.data.labels) ++counts[y];
    for (int c : counts) CHECK(c == 100);
  }

  TEST_CASE("sample-dependent mode") {
    SyntheticSpec spec;
    spec.num_samples = 600;
    spec.num_classes = 3;
    spec.view_dims = {5, 5};
    spec.mode = ReliabilityMode::kSampleDependent;
    spec.seed = 3;
    const SyntheticDataset s = generate_synthetic_detailed(spec);
    std::size_t per_context[2] = {0, 0};
    for (std::size_t i = 0; i < spec.num_samples; ++i) {
      const int c = s.context[i];
      REQUIRE((c == 0 || c == 1));
      ++per_context[c];
      // the informative view shows the true class
      CHECK(s.shown_class[i * 2 + c] == s.data.labels[i]);
      // key digits: the context is their xor
      const int k0 = s.data.views[0](i, 4) > 0 ? 1 : 0;
      const int k1 = s.data.views[1](i, 4) > 0 ? 1 : 0;
      CHECK((k0 ^ k1) == c);
      CHECK(std::abs(std::abs(s.data.views[0](i, 4)) - 1.0) == 0.0);
    }
    CHECK(per_context[0] > 200);
    CHECK(per_context[1] > 200);

    spec.view_dims = {5};
    spec.informative_fraction = {1.0};
    spec.noise = {0.0};
    CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
  }

  TEST_CASE("synthetic determinism and validation") {
    SyntheticSpec spec;
    spec.num_samples = 120;
    spec.noise = {0.5, 0.1};
    spec.informative_fraction = {0.5, 0.25};
    spec.seed = 77;
    const MultiViewDataset a = generate_synthetic(spec);
    const MultiViewDataset b = generate_synthetic(spec);
    CHECK(a.views == b.views);
    CHECK(a.labels == b.labels);
    spec.seed = 78;
    CHECK_FALSE(generate_synthetic(spec).views == a.views);

    SyntheticSpec bad = spec;
    bad.num_classes = 200;
    CHECK_THROWS_AS(generate_synthetic(bad), DataError);
    bad = spec;
    bad.informative_fraction = {1.5, 0.0};
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
    bad = spec;
    bad.noise = {-1.0, 0.0};
    CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
  }

  TEST_CASE("view strength perturbation") {
    SyntheticSpec spec;
    spec.num_samples = 80;
    spec.noise = {1.0, 1.0};
    spec.seed = 5;
    const MultiViewDataset ds = generate_synthetic(spec);
    const double ones[] = {1.0, 1.0};
    const MultiViewDataset same = perturb_view_strength(ds, ones);
    CHECK(same.views == ds.views);
    const double f[] = {2.0, 0.5};
    const MultiViewDataset scaled = perturb_view_strength(ds, f);
    CHECK(scaled.labels == ds.labels);
    CHECK(view_norm(scaled.views[0]) == doctest::Approx(2.0 * view_norm(ds.views[0])).epsilon(1e-14));
    CHECK(view_norm(scaled.views[1]) == doctest::Approx(0.5 * view_norm(ds.views[1])).epsilon(1e-14));
    const double bad[] = {1.0, 0.0};
    CHECK_THROWS_AS(perturb_view_strength(ds, bad), DomainError);
    const double neg[] = {1.0, -2.0};
    CHECK_THROWS_AS(perturb_view_strength(ds, neg), DomainError);

    const auto r1 = random_strength_factors(6, 42);
    const auto r2 = random_strength_factors(6, 42);
    CHECK(r1 == r2);
    for (double x : r1) {
      CHECK(x >= 0.25);
      CHECK(x <= 4.0);
    }
  }

  TEST_CASE("gaussian noise") {
    SyntheticSpec spec;
    spec.num_samples = 2500;
    spec.view_dims = {20, 20};
    spec.seed = 9;
    const MultiViewDataset ds = generate_synthetic(spec);
    CHECK(add_gaussian_noise(ds, 0.0, 1).views == ds.views);
    for (double sigma : {0.1, 1.0, 10.0}) {
      const MultiViewDataset noisy = add_gaussian_noise(ds, sigma, 3);
      CHECK(noisy.labels == ds.labels);
      double s = 0.0, s2 = 0.0;
      std::size_t n = 0;
      for (std::size_t v = 0; v < 2; ++v) {
        for (std::size_t i = 0; i < ds.views[v].size(); ++i) {
          const double d = noisy.views[v].data()[i] - ds.views[v].data()[i];
          s += d;
          s2 += d * d;
          ++n;
        }
      }
      REQUIRE(n >= 100000);
      const double mean = s / static_cast<double>(n);
      const double sd = std::sqrt(s2 / static_cast<double>(n) - mean * mean);
      CHECK(std::abs(sd - sigma) <= 0.05 * sigma);
    }
    CHECK_THROWS_AS(add_gaussian_noise(ds, -0.1, 1), DomainError);
  }

  TEST_CASE("subset and validate") {
    MultiViewDataset ds;
    ds.name = "x";
    ds.num_classes = 2;
    ds.view_names = {"a"};
    ds.views = {DenseArray{{1}, {2}, {3}}};
    ds.labels = {0, 1, 0};
    const std::size_t idx[] = {2, 0};
    const MultiViewDataset s = ds.subset(idx);
    CHECK(s.views[0] == DenseArray{{3}, {1}});
    CHECK(s.labels == std::vector<int>{0, 0});
    ds.labels = {0, 1};
    CHECK_THROWS_AS(ds.validate(), DataError);
    ds.labels = {0, 1, 5};
    CHECK_THROWS_AS(ds.validate(), DataError);
  }
}
