#include "tmur/experiment.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "tmur/errors.hpp"
#include "tmur/evaluation.hpp"

namespace fs = std::filesystem;

namespace tmur {

nlohmann::json config_snapshot(const RunOptions& opts, std::uint64_t seed, const std::string& data_source) {
  const ModelConfig& m = opts.model;
  const TrainConfig& t = opts.train;
  return nlohmann::json{
      {"data", data_source},
      {"seed", seed},
      {"split_ratio", opts.split_ratio},
      {"model",
       {{"view_dims", m.view_dims},
        {"aligned_dim", m.aligned_dim},
        {"hidden_dims", m.hidden_dims},
        {"num_classes", m.num_classes},
        {"temperature", m.temperature},
        {"use_attention", m.use_attention},
        {"router_mode", std::string(router_mode_name(m.router_mode))}}},
      {"train",
       {{"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"base_lr", t.base_lr},
        {"lambda", t.weights.lambda},
        {"beta", t.weights.beta},
        {"gamma", t.weights.gamma},
        {"rho", t.weights.rho},
        {"adam_beta1", t.beta1},
        {"adam_beta2", t.beta2},
        {"adam_eps", t.adam_eps},
        {"bins", t.bins},
        {"trace_test", t.trace_test}}},
  };
}

RunOptions options_from_snapshot(const nlohmann::json& j) {
  try {
    RunOptions o;
    o.split_ratio = j.at("split_ratio").get<double>();
    const auto& m = j.at("model");
    o.model.view_dims = m.at("view_dims").get<std::vector<std::size_t>>();
    o.model.aligned_dim = m.at("aligned_dim").get<std::size_t>();
    o.model.hidden_dims = m.at("hidden_dims").get<std::vector<std::size_t>>();
    o.model.num_classes = m.at("num_classes").get<std::size_t>();
    o.model.temperature = m.at("temperature").get<double>();
    o.model.use_attention = m.at("use_attention").get<bool>();
    o.model.router_mode = parse_router_mode(m.at("router_mode").get<std::string>());
    const auto& t = j.at("train");
    o.train.epochs = t.at("epochs").get<std::size_t>();
    o.train.batch_size = t.at("batch_size").get<std::size_t>();
    o.train.base_lr = t.at("base_lr").get<double>();
    o.train.weights.lambda = t.at("lambda").get<double>();
    o.train.weights.beta = t.at("beta").get<double>();
    o.train.weights.gamma = t.at("gamma").get<double>();
    o.train.weights.rho = t.at("rho").get<double>();
    o.train.beta1 = t.at("adam_beta1").get<double>();
    o.train.beta2 = t.at("adam_beta2").get<double>();
    o.train.adam_eps = t.at("adam_eps").get<double>();
    o.train.bins = t.at("bins").get<std::size_t>();
    o.train.trace_test = t.at("trace_test").get<bool>();
    o.train.seed = j.at("seed").get<std::uint64_t>();
    return o;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad config snapshot: ") + e.what());
  }
}

std::string trace_csv(const TrainReport& report) {
  std::string out = "epoch,lr,loss_total,loss_fused,loss_view,loss_bal,loss_div,train_accuracy,test_accuracy\n";
  for (const EpochRecord& r : report.epochs) {
    out += std::to_string(r.epoch) + "," + format_number(r.lr) + "," + format_number(r.loss.total) + "," +
           format_number(r.loss.fused) + "," + format_number(r.loss.view) + "," + format_number(r.loss.bal) + "," +
           format_number(r.loss.div) + "," + format_number(r.train_accuracy) + "," +
           (std::isnan(r.test_accuracy) ? std::string("") : format_number(r.test_accuracy)) + "\n";
  }
  return out;
}

std::string run_metrics_text(const SeedRun& run) {
  std::string out = "seed=" + std::to_string(run.seed) + "\n";
  out += "train_samples=" + std::to_string(run.split.train.size()) + "\n";
  out += "test_samples=" + std::to_string(run.split.test.size()) + "\n";
  out += "epochs=" + std::to_string(run.report.epochs.size()) + "\n";
  out += metrics_text(run.report.final_metrics, "test.");
  if (!run.report.epochs.empty()) {
    const EpochRecord& last = run.report.epochs.back();
    out += "final_loss_total=" + format_number(last.loss.total) + "\n";
    out += "final_train_accuracy=" + format_number(last.train_accuracy) + "\n";
  }
  // Which epoch is "the" result is ambiguous; the last epoch is reported
  // above and the best test epoch is logged alongside.
  out += "best_epoch=" + std::to_string(run.report.best_epoch) + "\n";
  out += "best_test_accuracy=" + format_number(run.report.best_test_accuracy) + "\n";
  return out;
}

void write_metric_tables(const fs::path& dir, const MetricsReport& m) {
  fs::create_directories(dir);
  write_text_file(dir / "reliability_confidence.csv", reliability_csv(m.confidence_bins));
  write_text_file(dir / "reliability_uncertainty.csv", reliability_csv(m.uncertainty_bins));
  write_text_file(dir / "uncertainty_histogram.csv", histogram_csv(m.histogram));
}

void write_metrics_dir(const fs::path& dir, const MetricsReport& m, const std::string& prefix) {
  write_metric_tables(dir, m);
  write_text_file(dir / "metrics.txt", metrics_text(m, prefix));
}

RunArtifact train_and_write(const MultiViewDataset& ds, const RunOptions& opts, std::uint64_t seed, const fs::path& dir,
                            const std::string& data_source, const EpochCallback& on_epoch) {
  SeedRun run = train_seed(ds, opts.model, opts.train, seed, opts.split_ratio, on_epoch);
  RunOptions resolved = opts;
  resolved.model = run.model.config();
  fs::create_directories(dir);
  write_text_file(dir / "config.json", config_snapshot(resolved, seed, data_source).dump(2) + "\n");
  run.model.save(dir / "model.txt");
  write_text_file(dir / "trace.csv", trace_csv(run.report));
  write_metric_tables(dir, run.report.final_metrics);
  write_text_file(dir / "metrics.txt", run_metrics_text(run));
  write_text_file(dir / "timing.txt", "seconds=" + format_number(run.report.seconds) + "\n");

  RunArtifact a;
  a.seed = seed;
  a.dir = dir;
  a.metrics = run.report.final_metrics;
  a.best_epoch = run.report.best_epoch;
  a.best_test_accuracy = run.report.best_test_accuracy;
  a.seconds = run.report.seconds;
  return a;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd m;
  m.n = values.size();
  if (values.empty()) return m;
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return m;
}

std::string percent_mean_std(const MeanStd& m) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * m.mean, 100.0 * m.std);
  return buf;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  if (text == "five") return {std::begin(kProtocolSeeds), std::end(kProtocolSeeds)};
  std::vector<std::uint64_t> seeds;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, comma - start);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError("bad seed '" + item + "' (expected 'five' or a comma list of integers)");
    }
    seeds.push_back(v);
    start = comma + 1;
  }
  return seeds;
}

std::vector<double> parse_real_list(const std::string& text) {
  std::vector<double> values;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    const std::string item = text.substr(start, comma - start);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || ptr != item.data() + item.size() || !std::isfinite(v)) {
      throw ConfigError("bad number '" + item + "' in list '" + text + "'");
    }
    values.push_back(v);
    start = comma + 1;
  }
  return values;
}

}  // namespace tmur
