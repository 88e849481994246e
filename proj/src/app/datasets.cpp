#include "tmur/datasets.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tmur/errors.hpp"
#include "tmur/rng.hpp"

namespace fs = std::filesystem;

namespace tmur {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& text, const fs::path& file, std::size_t line, const char* what) {
  std::size_t v = 0;
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) throw ParseError(file.string(), line, 1, std::string("bad ") + what + " '" + text + "'");
  return v;
}

void append_number(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// MultiViewDataset

std::vector<std::size_t> MultiViewDataset::view_dims() const {
  std::vector<std::size_t> dims;
  for (const DenseArray& v : views) dims.push_back(v.cols());
  return dims;
}

void MultiViewDataset::validate() const {
  if (views.empty()) throw DataError(name + ": dataset has no views");
  if (num_classes < 2) throw DataError(name + ": need at least 2 classes");
  for (std::size_t v = 0; v < views.size(); ++v) {
    const std::string vname = v < view_names.size() ? view_names[v] : std::to_string(v);
    if (views[v].rows() != labels.size()) {
      throw DataError(name + ": view '" + vname + "' has " + std::to_string(views[v].rows()) + " rows, expected " +
                      std::to_string(labels.size()));
    }
    if (views[v].cols() == 0) throw DataError(name + ": view '" + vname + "' has zero width");
    if (!views[v].all_finite()) throw DataError(name + ": view '" + vname + "' contains non-finite values");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw DataError(name + ": label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                      " outside [0, " + std::to_string(num_classes) + ")");
    }
  }
}

MultiViewDataset MultiViewDataset::subset(std::span<const std::size_t> indices) const {
  MultiViewDataset out;
  out.name = name;
  out.num_classes = num_classes;
  out.view_names = view_names;
  for (const DenseArray& v : views) {
    DenseArray s(indices.size(), v.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto src = v.row(indices[i]);
      std::copy(src.begin(), src.end(), s.row(i).begin());
    }
    out.views.push_back(std::move(s));
  }
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Files

DenseArray read_csv_matrix(const fs::path& path, std::size_t expected_cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<double> values;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw ParseError(path.string(), row, 1, "empty line");
    std::size_t col = 0;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      const std::size_t end = comma == std::string::npos ? line.size() : comma;
      ++col;
      std::string_view cell(line.data() + start, end - start);
      while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
      while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
      if (cell.empty()) throw ParseError(path.string(), row, col, "empty cell");
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (ec != std::errc() || ptr != cell.data() + cell.size()) {
        throw ParseError(path.string(), row, col, "non-numeric cell '" + std::string(cell) + "'");
      }
      if (!std::isfinite(v)) throw ParseError(path.string(), row, col, "non-finite value");
      values.push_back(v);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (col != expected_cols) {
      throw ParseError(path.string(), row, col,
                       "expected " + std::to_string(expected_cols) + " columns, found " + std::to_string(col));
    }
  }
  return DenseArray(row, expected_cols, std::move(values));
}

void write_csv_matrix(const fs::path& path, const DenseArray& m) {
  std::string text;
  text.reserve(m.size() * 12);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c > 0) text.push_back(',');
      append_number(text, m(r, c));
    }
    text.push_back('\n');
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  DatasetManifest m;
  bool have_classes = false, have_samples = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), lineno, 1, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "name") {
      m.name = value;
    } else if (key == "classes") {
      m.num_classes = parse_count(value, path, lineno, "class count");
      have_classes = true;
    } else if (key == "samples") {
      m.num_samples = parse_count(value, path, lineno, "sample count");
      have_samples = true;
    } else if (key == "labels") {
      m.labels = base / value;
    } else if (key == "view") {
      std::istringstream fields(value);
      ViewSpec v;
      std::string file, dim;
      if (!(fields >> v.name >> file >> dim)) throw ParseError(path.string(), lineno, 1, "view needs: name path dim");
      v.path = base / file;
      v.dim = parse_count(dim, path, lineno, "view dimension");
      if (v.dim == 0) throw DataError(path.string() + ": view '" + v.name + "' has zero dimension");
      m.views.push_back(std::move(v));
    } else {
      throw ParseError(path.string(), lineno, 1, "unknown key '" + key + "'");
    }
  }
  if (!have_classes || !have_samples || m.labels.empty() || m.views.empty()) {
    throw DataError(path.string() + ": manifest needs classes, samples, labels and at least one view");
  }
  if (m.name.empty()) m.name = path.parent_path().filename().string();
  return m;
}

MultiViewDataset load_manifest(const fs::path& path) {
  const DatasetManifest m = read_manifest(path);
  MultiViewDataset ds;
  ds.name = m.name;
  ds.num_classes = m.num_classes;

  std::ifstream in(m.labels);
  if (!in) throw DataError("cannot open labels " + m.labels.string());
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::string t = trim(line);
    int y = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), y);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
      throw ParseError(m.labels.string(), row, 1, "bad label '" + t + "'");
    }
    ds.labels.push_back(y);
  }
  if (ds.labels.size() != m.num_samples) {
    throw DataError("labels file has " + std::to_string(ds.labels.size()) + " rows, manifest says " +
                    std::to_string(m.num_samples));
  }
  for (const ViewSpec& v : m.views) {
    DenseArray block = read_csv_matrix(v.path, v.dim);
    if (block.rows() != m.num_samples) {
      throw DataError("view '" + v.name + "' (" + v.path.string() + ") has " + std::to_string(block.rows()) +
                      " rows, expected " + std::to_string(m.num_samples));
    }
    ds.view_names.push_back(v.name);
    ds.views.push_back(std::move(block));
  }
  ds.validate();
  return ds;
}

fs::path save_dataset(const MultiViewDataset& ds, const fs::path& dir) {
  ds.validate();
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "name = " << ds.name << '\n';
  manifest << "classes = " << ds.num_classes << '\n';
  manifest << "samples = " << ds.num_samples() << '\n';
  manifest << "labels = labels.txt\n";
  for (std::size_t v = 0; v < ds.num_views(); ++v) {
    const std::string vname = v < ds.view_names.size() ? ds.view_names[v] : "view" + std::to_string(v);
    const std::string file = vname + ".csv";
    manifest << "view = " << vname << ' ' << file << ' ' << ds.views[v].cols() << '\n';
    write_csv_matrix(dir / file, ds.views[v]);
  }
  {
    std::ofstream labels(dir / "labels.txt", std::ios::binary);
    for (int y : ds.labels) labels << y << '\n';
  }
  const fs::path mpath = dir / "manifest.txt";
  std::ofstream out(mpath, std::ios::binary);
  out << manifest.str();
  if (!out) throw DataError("cannot write " + mpath.string());
  return mpath;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
  const std::size_t v = view_dims.size();
  if (v == 0) throw ConfigError("synthetic spec needs at least one view");
  if (informative_fraction.size() != v || noise.size() != v) {
    throw ConfigError("informative_fraction and noise need one entry per view");
  }
  for (std::size_t i = 0; i < v; ++i) {
    if (view_dims[i] == 0) throw ConfigError("view dimensions must be positive");
    if (!(informative_fraction[i] >= 0.0 && informative_fraction[i] <= 1.0)) {
      throw ConfigError("informative fractions must lie in [0, 1]");
    }
    if (!(noise[i] >= 0.0)) throw ConfigError("noise levels must be non-negative");
  }
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (num_classes > num_samples) throw DataError("more classes than samples");
  if (!(separation > 0.0)) throw ConfigError("separation must be positive");
  if (mode == ReliabilityMode::kSampleDependent) {
    if (v < 2) throw ConfigError("sample-dependent reliability needs at least 2 views");
    for (std::size_t d : view_dims) {
      if (d < 2) throw ConfigError("sample-dependent reliability needs view width >= 2 (one key coordinate)");
    }
  }
}

SyntheticDataset generate_synthetic_detailed(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t n = spec.num_samples, k = spec.num_classes, nv = spec.view_dims.size();
  const bool dependent = spec.mode == ReliabilityMode::kSampleDependent;
  const Rng root(spec.seed);

  SyntheticDataset out;
  MultiViewDataset& ds = out.data;
  ds.name = dependent ? "synthetic-xor" : "synthetic";
  ds.num_classes = k;

  // Balanced labels in shuffled order.
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<int>(i % k);
  Rng label_rng = root.fork("labels");
  label_rng.shuffle(ds.labels);

  Rng centroid_rng = root.fork("centroids");
  for (std::size_t v = 0; v < nv; ++v) {
    const std::size_t usable = spec.view_dims[v] - (dependent ? 1 : 0);
    const auto informative = static_cast<std::size_t>(std::llround(spec.informative_fraction[v] * static_cast<double>(usable)));
    out.informative_dims.push_back(informative);
    DenseArray c(k, spec.view_dims[v]);
    for (std::size_t cls = 0; cls < k; ++cls) {
      for (std::size_t j = 0; j < informative; ++j) c(cls, j) = centroid_rng.normal(0.0, spec.separation);
    }
    out.centroids.push_back(std::move(c));
  }

  out.context.assign(n, -1);
  out.shown_class.assign(n * nv, 0);
  Rng context_rng = root.fork("context");
  std::vector<std::size_t> keys(dependent ? n * nv : 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = ds.labels[i];
    if (dependent) {
      std::size_t sum = 0;
      for (std::size_t v = 0; v < nv; ++v) {
        keys[i * nv + v] = context_rng.index(nv);
        sum += keys[i * nv + v];
      }
      out.context[i] = static_cast<int>(sum % nv);
    }
    for (std::size_t v = 0; v < nv; ++v) {
      int shown = y;
      if (dependent && static_cast<int>(v) != out.context[i]) shown = static_cast<int>(context_rng.index(k));
      out.shown_class[i * nv + v] = shown;
    }
  }

  Rng noise_rng = root.fork("noise");
  for (std::size_t v = 0; v < nv; ++v) {
    const std::size_t d = spec.view_dims[v];
    const std::size_t informative = out.informative_dims[v];
    DenseArray x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto cls = static_cast<std::size_t>(out.shown_class[i * nv + v]);
      for (std::size_t j = 0; j < d; ++j) {
        if (j < informative) {
          x(i, j) = out.centroids[v](cls, j) + (spec.noise[v] > 0.0 ? noise_rng.normal(0.0, spec.noise[v]) : 0.0);
        } else {
          x(i, j) = noise_rng.normal();
        }
      }
    }
    ds.views.push_back(std::move(x));
    ds.view_names.push_back("view" + std::to_string(v));
  }

  if (dependent) {
    // The last coordinate of every view holds its key digit, mapped to [-1, 1].
    const double denom = static_cast<double>(nv - 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t v = 0; v < nv; ++v) {
        ds.views[v](i, spec.view_dims[v] - 1) = 2.0 * static_cast<double>(keys[i * nv + v]) / denom - 1.0;
      }
    }
  }
  ds.validate();
  return out;
}

MultiViewDataset generate_synthetic(const SyntheticSpec& spec) { return generate_synthetic_detailed(spec).data; }

// ---------------------------------------------------------------------------
// Perturbations

MultiViewDataset perturb_view_strength(const MultiViewDataset& ds, std::span<const double> factors) {
  if (factors.size() != ds.num_views()) throw DomainError("need one strength factor per view");
  MultiViewDataset out = ds;
  for (std::size_t v = 0; v < factors.size(); ++v) {
    if (!(factors[v] > 0.0) || !std::isfinite(factors[v])) throw DomainError("strength factors must be positive");
    for (double& x : out.views[v].values()) x *= factors[v];
  }
  return out;
}

std::vector<double> random_strength_factors(std::size_t num_views, std::uint64_t seed, double lo, double hi) {
  if (!(lo > 0.0) || !(hi >= lo)) throw DomainError("strength factor range must be positive");
  Rng rng = Rng(seed).fork("view-strength");
  std::vector<double> f(num_views);
  for (double& x : f) x = rng.uniform(lo, hi);
  return f;
}

MultiViewDataset add_gaussian_noise(const MultiViewDataset& ds, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DomainError("noise sigma must be non-negative");
  MultiViewDataset out = ds;
  if (sigma == 0.0) return out;
  Rng rng = Rng(seed).fork("gaussian-noise");
  for (DenseArray& v : out.views) {
    for (double& x : v.values()) x += rng.normal(0.0, sigma);
  }
  return out;
}

}  // namespace tmur
