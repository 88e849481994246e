#include "tmur/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

#include "tmur/errors.hpp"
#include "tmur/rng.hpp"

namespace tmur {

SplitIndices stratified_split(std::span<const int> labels, std::size_t num_classes, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("split ratio must lie in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) throw DataError("label out of range in split");
    by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  // The small epsilon keeps products such as 0.8 * 10 from flooring to 7.
  auto floor_of = [ratio](std::size_t n) { return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 1e-9)); };
  std::vector<std::size_t> take(num_classes);
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const std::size_t n = by_class[c].size();
    if (n == 0) continue;
    if (n < 2) throw DataError("class " + std::to_string(c) + " has fewer than 2 samples");
    take[c] = std::max<std::size_t>(1, std::min(floor_of(n), n - 1));
    assigned += take[c];
  }
  const std::size_t target = floor_of(labels.size());
  std::vector<std::size_t> order(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) order[c] = c;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double fa = ratio * static_cast<double>(by_class[a].size()) - static_cast<double>(take[a]);
    const double fb = ratio * static_cast<double>(by_class[b].size()) - static_cast<double>(take[b]);
    return fa > fb;
  });
  for (std::size_t c : order) {
    if (assigned >= target) break;
    if (take[c] + 1 < by_class[c].size()) {
      ++take[c];
      ++assigned;
    }
  }

  Rng rng = Rng(seed).fork("split");
  SplitIndices split;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::vector<std::size_t>& idx = by_class[c];
    rng.shuffle(idx);
    split.train.insert(split.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]));
    split.test.insert(split.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(take[c]), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("learning rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("Adam eps must be positive");
  if (bins < 1) throw ConfigError("bin count must be >= 1");
  weights.validate();
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
  if (total_steps == 0 || step > total_steps) throw DomainError("cosine_lr needs 0 <= step <= total_steps, total > 0");
  const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(phase));
}

Adam::Adam(const std::vector<Parameter>& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Parameter& p : params) {
    m_.emplace_back(p.value.rows(), p.value.cols());
    v_.emplace_back(p.value.rows(), p.value.cols());
  }
}

void Adam::step(std::vector<Parameter>& params, double lr) {
  if (params.size() != m_.size()) throw ShapeError("Adam state does not match parameter list");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    double* theta = p.value.data();
    const double* g = p.gradient.data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      theta[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

LossTerms build_objective(Tape& t, const ForwardOutput& out, std::span<const int> labels, const LossWeights& w) {
  std::vector<Var> alphas;
  for (Var e : out.evidence) alphas.push_back(add_constant(t, e, 1.0));
  Var fused = digamma_loss(t, add_constant(t, out.fused_evidence, 1.0), labels);
  Var view = auxiliary_expert_loss(t, alphas, labels);
  Var bal = load_balance_loss(t, out.routing, w.rho);
  Var div = diversity_loss(t, out.normalized_hidden);
  return total_loss(t, fused, view, bal, div, w);
}

std::vector<DenseArray> gather_rows(std::span<const DenseArray> views, std::span<const std::size_t> indices) {
  std::vector<DenseArray> out;
  out.reserve(views.size());
  for (const DenseArray& v : views) {
    DenseArray b(indices.size(), v.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto src = v.row(indices[i]);
      std::copy(src.begin(), src.end(), b.row(i).begin());
    }
    out.push_back(std::move(b));
  }
  return out;
}

Predictions predict_standardized(Model& model, std::span<const DenseArray> views, std::size_t chunk) {
  if (views.empty()) throw ShapeError("no views to predict on");
  const std::size_t n = views[0].rows();
  if (n <= chunk) return model.predict(views);

  Predictions all;
  const std::size_t k = model.config().num_classes;
  const std::size_t experts = model.config().num_experts();
  all.probabilities = DenseArray(n, k);
  all.routing = DenseArray(n, experts);
  all.fused_evidence = DenseArray(n, k);
  all.expert_evidence.assign(experts, DenseArray(n, k));
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t stop = std::min(n, start + chunk);
    idx.clear();
    for (std::size_t i = start; i < stop; ++i) idx.push_back(i);
    const Predictions part = model.predict(gather_rows(views, idx));
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    all.uncertainty.insert(all.uncertainty.end(), part.uncertainty.begin(), part.uncertainty.end());
    auto copy_rows = [&](const DenseArray& src, DenseArray& dst) {
      std::copy(src.values().begin(), src.values().end(), dst.data() + start * dst.cols());
    };
    copy_rows(part.probabilities, all.probabilities);
    copy_rows(part.routing, all.routing);
    copy_rows(part.fused_evidence, all.fused_evidence);
    for (std::size_t e = 0; e < experts; ++e) copy_rows(part.expert_evidence[e], all.expert_evidence[e]);
  }
  return all;
}

Predictions predict_dataset(Model& model, const MultiViewDataset& ds, std::size_t chunk) {
  return predict_standardized(model, model.standardizer().apply(ds.views), chunk);
}

namespace {

void check_finite(const LossBreakdown& l, std::size_t epoch, std::size_t batch) {
  const std::pair<const char*, double> terms[] = {
      {"fused", l.fused}, {"view", l.view}, {"bal", l.bal}, {"div", l.div}, {"total", l.total}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) {
      throw NumericalError("non-finite " + std::string(name) + " loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch));
    }
  }
}

double accuracy_of(const Predictions& p, std::span<const int> labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += p.labels[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace

TrainReport fit(Model& model, const MultiViewDataset& train, const MultiViewDataset* test, const TrainConfig& cfg,
                const EpochCallback& on_epoch) {
  cfg.validate();
  train.validate();
  if (train.num_samples() == 0) throw DataError("empty training set");
  if (train.view_dims() != model.config().view_dims) throw DataError("dataset view widths do not match the model");
  if (train.num_classes != model.config().num_classes) throw DataError("dataset class count does not match the model");
  if (test != nullptr && test->view_dims() != train.view_dims()) throw DataError("test split widths differ from train");

  const auto t0 = std::chrono::steady_clock::now();
  model.standardizer() = Standardizer::fit(train.views);
  const std::vector<DenseArray> x_train = model.standardizer().apply(train.views);
  std::vector<DenseArray> x_test;
  if (test != nullptr) x_test = model.standardizer().apply(test->views);

  const std::size_t n = train.num_samples();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * batches;
  Rng shuffler = Rng(cfg.seed).fork("shuffle");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  Adam adam(model.parameters(), cfg.beta1, cfg.beta2, cfg.adam_eps);
  TrainReport report;
  std::size_t step = 0;
  std::vector<int> batch_labels;
  std::vector<std::size_t> batch_idx;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffler.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t start = b * cfg.batch_size;
      const std::size_t stop = std::min(n, start + cfg.batch_size);
      batch_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(stop));
      batch_labels.clear();
      for (std::size_t i : batch_idx) batch_labels.push_back(train.labels[i]);
      const std::vector<DenseArray> xb = gather_rows(x_train, batch_idx);

      Tape tape;
      model.zero_grad();
      const ForwardOutput out = model.forward(tape, xb);
      const LossTerms terms = build_objective(tape, out, batch_labels, cfg.weights);
      const LossBreakdown values = terms.values(tape);
      check_finite(values, epoch, b + 1);
      tape.backward(terms.total);
      rec.lr = cosine_lr(step, total_steps, cfg.base_lr);
      adam.step(model.parameters(), rec.lr);
      ++step;

      const double w = static_cast<double>(batch_idx.size());
      rec.loss.fused += w * values.fused;
      rec.loss.view += w * values.view;
      rec.loss.bal += w * values.bal;
      rec.loss.div += w * values.div;
      rec.loss.total += w * values.total;
      const DenseArray& fused = tape.value(out.fused_evidence);
      for (std::size_t i = 0; i < batch_idx.size(); ++i) {
        const auto row = fused.row(i);
        const auto pred = std::max_element(row.begin(), row.end()) - row.begin();
        correct += pred == batch_labels[i] ? 1 : 0;
      }
    }
    const double dn = static_cast<double>(n);
    rec.loss.fused /= dn;
    rec.loss.view /= dn;
    rec.loss.bal /= dn;
    rec.loss.div /= dn;
    rec.loss.total /= dn;
    rec.train_accuracy = static_cast<double>(correct) / dn;
    rec.test_accuracy = std::numeric_limits<double>::quiet_NaN();
    if (test != nullptr && test->num_samples() > 0 && (cfg.trace_test || epoch == cfg.epochs)) {
      rec.test_accuracy = accuracy_of(predict_standardized(model, x_test), test->labels);
      if (report.best_epoch == 0 || rec.test_accuracy > report.best_test_accuracy) {
        report.best_epoch = epoch;
        report.best_test_accuracy = rec.test_accuracy;
      }
    }
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }

  if (test != nullptr && test->num_samples() > 0) {
    const Predictions p = predict_standardized(model, x_test);
    report.final_metrics = evaluate(PredictionSet::from_predictions(p, test->labels), cfg.bins);
  } else {
    const Predictions p = predict_standardized(model, x_train);
    report.final_metrics = evaluate(PredictionSet::from_predictions(p, train.labels), cfg.bins);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

ModelConfig model_config_for(const MultiViewDataset& ds, const ModelConfig& base) {
  ModelConfig c = base;
  c.view_dims = ds.view_dims();
  c.num_classes = ds.num_classes;
  c.validate();
  return c;
}

std::uint64_t init_seed(std::uint64_t seed) { return mix_seed(seed, stable_hash("init")); }

SeedRun train_seed(const MultiViewDataset& ds, const ModelConfig& base, TrainConfig cfg, std::uint64_t seed,
                   double split_ratio, const EpochCallback& on_epoch) {
  ds.validate();
  cfg.seed = seed;
  SplitIndices split = stratified_split(ds.labels, ds.num_classes, split_ratio, seed);
  const MultiViewDataset train = ds.subset(split.train);
  MultiViewDataset test = ds.subset(split.test);
  Model model(model_config_for(ds, base), init_seed(seed));
  TrainReport report = fit(model, train, &test, cfg, on_epoch);
  return SeedRun{seed, std::move(split), std::move(test), std::move(report), std::move(model)};
}

}  // namespace tmur
