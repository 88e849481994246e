// tmur: command-line front end.
//
//   tmur train   --manifest m.txt --out runs/a --seeds five
//   tmur eval    --model runs/a/seed-3407/model.txt --manifest m.txt --perturb noise --sigma 0.1,1,10
//   tmur ablate  --manifest m.txt --out runs/abl --which all --beta 0.05 --gamma 0.05
//   tmur sweep   --manifest m.txt --out runs/sw --betas 0,0.05,0.1 --gammas 0,0.05,0.1
//   tmur theory  --check thm1|thm2|gap-demo
//   tmur synth   --out data/xor --mode xor
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tmur/datasets.hpp"
#include "tmur/errors.hpp"
#include "tmur/evaluation.hpp"
#include "tmur/experiment.hpp"
#include "tmur/theory.hpp"
#include "tmur/training.hpp"

namespace fs = std::filesystem;
using namespace tmur;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kCheck = 3;

struct Hyper {
  std::size_t epochs = 300;
  std::size_t batch = 128;
  double lr = 1e-3;
  double lambda = 0.3;
  double beta = 0.05;
  double gamma = 0.05;
  double rho = 1.5;
  double tau = 1.0;
  std::string hidden = "256";
  std::size_t aligned_dim = 64;
  std::size_t bins = 15;
  std::string router = "unified";
  bool no_attention = false;
  bool no_trace = false;
  std::size_t log_every = 0;

  RunOptions options() const {
    RunOptions o;
    o.model.aligned_dim = aligned_dim;
    o.model.hidden_dims.clear();
    for (double h : parse_real_list(hidden)) {
      if (!(h >= 1.0) || h != static_cast<double>(static_cast<std::size_t>(h))) {
        throw ConfigError("--hidden expects positive integers");
      }
      o.model.hidden_dims.push_back(static_cast<std::size_t>(h));
    }
    o.model.temperature = tau;
    o.model.use_attention = !no_attention;
    o.model.router_mode = parse_router_mode(router);
    o.train.epochs = epochs;
    o.train.batch_size = batch;
    o.train.base_lr = lr;
    o.train.weights = LossWeights{lambda, beta, gamma, rho};
    o.train.bins = bins;
    o.train.trace_test = !no_trace;
    o.train.validate();
    return o;
  }
};

void add_hyper(CLI::App* cmd, Hyper& h) {
  cmd->add_option("--epochs", h.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--batch", h.batch, "Batch size")->capture_default_str();
  cmd->add_option("--lr", h.lr, "Initial learning rate (cosine decay to 0)")->capture_default_str();
  cmd->add_option("--lambda", h.lambda, "Auxiliary expert loss weight")->capture_default_str();
  cmd->add_option("--beta", h.beta, "Load-balancing weight")->capture_default_str();
  cmd->add_option("--gamma", h.gamma, "Diversity weight")->capture_default_str();
  cmd->add_option("--rho", h.rho, "Tolerated routing concentration (> 1)")->capture_default_str();
  cmd->add_option("--tau", h.tau, "Routing temperature")->capture_default_str();
  cmd->add_option("--hidden", h.hidden, "Hidden widths of expert / router MLPs, comma list")->capture_default_str();
  cmd->add_option("--aligned-dim", h.aligned_dim, "Shared aligned width d")->capture_default_str();
  cmd->add_option("--bins", h.bins, "Calibration bins")->capture_default_str();
  cmd->add_option("--router", h.router, "unified | marginal-evidence")->capture_default_str();
  cmd->add_flag("--no-attention", h.no_attention, "Feed the router the raw concatenation");
  cmd->add_flag("--no-trace", h.no_trace, "Skip the per-epoch test-accuracy trace");
  cmd->add_option("--log-every", h.log_every, "Print a progress line every N epochs (0 = off)");
}

struct SeedChoice {
  std::uint64_t seed = 3407;
  std::string seeds;
  CLI::Option* seed_option = nullptr;

  // Without --seed or --seeds, commands that average over seeds use all five.
  std::vector<std::uint64_t> resolve(bool five_by_default) const {
    if (!seeds.empty()) return parse_seed_list(seeds);
    if (five_by_default && seed_option->count() == 0) return parse_seed_list("five");
    return {seed};
  }
};

void add_seeds(CLI::App* cmd, SeedChoice& s, const char* seeds_help) {
  s.seed_option = cmd->add_option("--seed", s.seed, "Single protocol seed")->capture_default_str();
  auto* many = cmd->add_option("--seeds", s.seeds, seeds_help);
  s.seed_option->excludes(many);
  many->excludes(s.seed_option);
}

std::string seed_dir(std::uint64_t seed) { return "seed-" + std::to_string(seed); }

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? "," : "") + std::to_string(seeds[i]);
  return out;
}

struct SeedMetrics {
  std::vector<double> accuracy, prob_ece, u_ece, mean_u;

  void add(const MetricsReport& m) {
    accuracy.push_back(m.accuracy);
    prob_ece.push_back(m.prob_ece);
    u_ece.push_back(m.u_ece);
    mean_u.push_back(m.mean_uncertainty);
  }

  std::string summary_text() const {
    std::string out;
    auto block = [&](const char* key, const std::vector<double>& v) {
      const MeanStd s = mean_std(v);
      out += std::string(key) + "_mean=" + format_number(s.mean) + "\n";
      out += std::string(key) + "_std=" + format_number(s.std) + "\n";
    };
    block("accuracy", accuracy);
    block("prob_ece", prob_ece);
    block("u_ece", u_ece);
    block("mean_uncertainty", mean_u);
    return out;
  }
};

EpochCallback progress(std::size_t every, std::uint64_t seed) {
  if (every == 0) return {};
  return [every, seed](const EpochRecord& r) {
    if (r.epoch % every != 0) return;
    std::printf("  seed %llu epoch %zu loss=%.6f train_acc=%.4f test_acc=%.4f lr=%.3g\n",
                static_cast<unsigned long long>(seed), r.epoch, r.loss.total, r.train_accuracy, r.test_accuracy, r.lr);
    std::fflush(stdout);
  };
}

// Trains every seed of one configuration into out/seed-*/ and writes a summary.
SeedMetrics run_seeds(const MultiViewDataset& ds, const RunOptions& opts, const std::vector<std::uint64_t>& seeds,
                      const fs::path& out, const std::string& source, std::size_t log_every, const std::string& label) {
  SeedMetrics acc;
  std::string rows = "seed,accuracy,prob_ece,u_ece,mean_uncertainty,best_epoch,best_test_accuracy\n";
  for (std::uint64_t seed : seeds) {
    const RunArtifact run = train_and_write(ds, opts, seed, out / seed_dir(seed), source, progress(log_every, seed));
    const MetricsReport& m = run.metrics;
    acc.add(m);
    rows += std::to_string(seed) + "," + format_number(m.accuracy) + "," + format_number(m.prob_ece) + "," +
            format_number(m.u_ece) + "," + format_number(m.mean_uncertainty) + "," + std::to_string(run.best_epoch) +
            "," + format_number(run.best_test_accuracy) + "\n";
    std::printf("%s seed %llu: accuracy=%.4f prob_ece=%.4f u_ece=%.4f mean_u=%.4f (%.1f s)\n", label.c_str(),
                static_cast<unsigned long long>(seed), m.accuracy, m.prob_ece, m.u_ece, m.mean_uncertainty,
                run.seconds);
    std::fflush(stdout);
  }
  write_text_file(out / "seeds.csv", rows);
  write_text_file(out / "summary.txt", "seeds=" + join_seeds(seeds) + "\n" + acc.summary_text());
  return acc;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string manifest, out;
  SeedChoice seeds;
  Hyper hyper;
};

int cmd_train(const TrainArgs& a) {
  const MultiViewDataset ds = load_manifest(a.manifest);
  const RunOptions opts = a.hyper.options();
  const auto seeds = a.seeds.resolve(false);
  const SeedMetrics m = run_seeds(ds, opts, seeds, a.out, a.manifest, a.hyper.log_every, "train");
  std::printf("accuracy %s over %zu seed(s)\n", percent_mean_std(mean_std(m.accuracy)).c_str(), seeds.size());
  return 0;
}

struct EvalArgs {
  std::string model, manifest, out, perturb = "none", sigma = "0.1,1,10", factors = "random", split = "all";
  std::uint64_t seed = 3407;
  bool per_view = false;
  std::size_t bins = 15;
};

MetricsReport report_for(const Predictions& p, std::span<const int> labels, std::size_t bins) {
  return evaluate(PredictionSet::from_predictions(p, labels), bins);
}

int cmd_eval(const EvalArgs& a) {
  Model model = Model::load(a.model);
  MultiViewDataset ds = load_manifest(a.manifest);
  if (ds.view_dims() != model.config().view_dims || ds.num_classes != model.config().num_classes) {
    throw DataError("dataset views / classes do not match the model");
  }
  if (a.split == "test") {
    ds = ds.subset(stratified_split(ds.labels, ds.num_classes, 0.8, a.seed).test);
  } else if (a.split != "all") {
    throw ConfigError("--split must be 'all' or 'test'");
  }
  const fs::path out = a.out;
  std::string text = "samples=" + std::to_string(ds.num_samples()) + "\n";

  if (a.perturb == "none" || a.perturb == "scale") {
    std::string prefix = "clean.";
    if (a.perturb == "scale") {
      const std::vector<double> f = a.factors == "random" ? random_strength_factors(ds.num_views(), a.seed)
                                                          : parse_real_list(a.factors);
      ds = perturb_view_strength(ds, f);
      std::string list;
      for (std::size_t i = 0; i < f.size(); ++i) list += (i ? "," : "") + format_number(f[i]);
      text += "factors=" + list + "\n";
      prefix = "scaled.";
    }
    const Predictions p = predict_dataset(model, ds);
    const MetricsReport m = report_for(p, ds.labels, a.bins);
    text += metrics_text(m, prefix);
    if (!a.out.empty()) write_metric_tables(out, m);
    if (a.per_view) {
      for (std::size_t i = 0; i < p.expert_evidence.size(); ++i) {
        const bool collab = model.config().has_collaborative() && i + 1 == p.expert_evidence.size();
        const std::string name = collab ? "expert-collaborative" : "expert-" + std::to_string(i);
        const MetricsReport em = evaluate(PredictionSet::from_evidence(p.expert_evidence[i], ds.labels), a.bins);
        text += metrics_text(em, name + ".");
        if (!a.out.empty()) write_metric_tables(out / name, em);
      }
    }
  } else if (a.perturb == "noise") {
    // Noise is added to standardized features.
    MultiViewDataset standardized = ds;
    standardized.views = model.standardizer().apply(ds.views);
    const std::vector<double> sigmas = parse_real_list(a.sigma);
    std::vector<double> mean_u;
    for (double s : sigmas) {
      const MultiViewDataset noisy = add_gaussian_noise(standardized, s, a.seed);
      const MetricsReport m = report_for(predict_standardized(model, noisy.views), ds.labels, a.bins);
      text += metrics_text(m, "sigma_" + format_number(s) + ".");
      mean_u.push_back(m.mean_uncertainty);
      if (!a.out.empty()) write_metric_tables(out / ("sigma-" + format_number(s)), m);
    }
    bool increasing = true;
    for (std::size_t i = 1; i < mean_u.size(); ++i) increasing = increasing && mean_u[i] > mean_u[i - 1];
    text += std::string("mean_uncertainty_increasing=") + (increasing ? "true" : "false") + "\n";
  } else {
    throw ConfigError("--perturb must be none, scale or noise");
  }

  if (!a.out.empty()) write_text_file(out / "metrics.txt", text);
  std::cout << text;
  return 0;
}

struct AblateArgs {
  std::string manifest, out, which = "all";
  SeedChoice seeds;
  Hyper hyper;
};

int cmd_ablate(const AblateArgs& a) {
  const MultiViewDataset ds = load_manifest(a.manifest);
  const RunOptions full = a.hyper.options();
  struct Variant {
    std::string name, dir;
    RunOptions opts;
  };
  std::vector<Variant> variants;
  auto add = [&](const std::string& key) {
    RunOptions o = full;
    if (key == "bal") {
      o.train.weights.beta = 0.0;
      variants.push_back({"w/o L_bal", "no-bal", o});
    } else if (key == "div") {
      o.train.weights.gamma = 0.0;
      variants.push_back({"w/o L_div", "no-div", o});
    } else if (key == "attention") {
      o.model.use_attention = false;
      variants.push_back({"w/o Cross-Attention", "no-attention", o});
    }
  };
  if (a.which == "all") {
    for (const char* k : {"bal", "div", "attention"}) add(k);
  } else if (a.which == "bal" || a.which == "div" || a.which == "attention") {
    add(a.which);
  } else {
    throw ConfigError("--which must be bal, div, attention or all");
  }
  variants.push_back({"Full", "full", full});

  const auto seeds = a.seeds.resolve(true);
  std::string table = "variant,accuracy_mean,accuracy_std,prob_ece_mean,u_ece_mean,mean_uncertainty_mean\n";
  std::string pretty;
  for (const Variant& v : variants) {
    const SeedMetrics m = run_seeds(ds, v.opts, seeds, fs::path(a.out) / v.dir, a.manifest, a.hyper.log_every, v.name);
    table += v.name + "," + format_number(mean_std(m.accuracy).mean) + "," + format_number(mean_std(m.accuracy).std) +
             "," + format_number(mean_std(m.prob_ece).mean) + "," + format_number(mean_std(m.u_ece).mean) + "," +
             format_number(mean_std(m.mean_u).mean) + "\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-22s %s\n", v.name.c_str(), percent_mean_std(mean_std(m.accuracy)).c_str());
    pretty += line;
  }
  write_text_file(fs::path(a.out) / "ablation.csv", table);
  std::cout << "\nvariant                accuracy (%)\n" << pretty;
  return 0;
}

struct SweepArgs {
  std::string manifest, out, betas = "0,0.05,0.1", gammas = "0,0.05,0.1";
  SeedChoice seeds;
  Hyper hyper;
};

int cmd_sweep(const SweepArgs& a) {
  const MultiViewDataset ds = load_manifest(a.manifest);
  const std::vector<double> betas = parse_real_list(a.betas);
  const std::vector<double> gammas = parse_real_list(a.gammas);
  const auto seeds = a.seeds.resolve(false);
  std::vector<std::vector<double>> surface(betas.size(), std::vector<double>(gammas.size()));
  std::string table = "beta,gamma,accuracy_mean,accuracy_std\n";
  for (std::size_t i = 0; i < betas.size(); ++i) {
    for (std::size_t j = 0; j < gammas.size(); ++j) {
      Hyper h = a.hyper;
      h.beta = betas[i];
      h.gamma = gammas[j];
      const std::string cell = "beta-" + format_number(betas[i]) + "_gamma-" + format_number(gammas[j]);
      const SeedMetrics m = run_seeds(ds, h.options(), seeds, fs::path(a.out) / cell, a.manifest, h.log_every, cell);
      const MeanStd s = mean_std(m.accuracy);
      surface[i][j] = s.mean;
      table += format_number(betas[i]) + "," + format_number(gammas[j]) + "," + format_number(s.mean) + "," +
               format_number(s.std) + "\n";
    }
  }
  // Smoothness: largest accuracy change between grid neighbours.
  double max_delta = 0.0;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    for (std::size_t j = 0; j < gammas.size(); ++j) {
      if (i + 1 < betas.size()) max_delta = std::max(max_delta, std::abs(surface[i + 1][j] - surface[i][j]));
      if (j + 1 < gammas.size()) max_delta = std::max(max_delta, std::abs(surface[i][j + 1] - surface[i][j]));
    }
  }
  write_text_file(fs::path(a.out) / "surface.csv", table);
  const std::string smooth = "cells=" + std::to_string(betas.size() * gammas.size()) + "\nmax_neighbor_delta=" +
                             format_number(max_delta) + "\n";
  write_text_file(fs::path(a.out) / "smoothness.txt", smooth);
  std::cout << table << smooth;
  return 0;
}

struct TheoryArgs {
  std::string check, out, pattern = "2,1,1";
  double mu = 2.0;
  double resolution = 1e-3;
  SeedChoice seeds;
  std::size_t epochs = 0;
};

int cmd_theory(const TheoryArgs& a) {
  std::string text;
  bool passed = false;
  if (a.check == "thm1") {
    const Theorem1Report r = evaluate_theorem1(ScaleFamily(parse_real_list(a.pattern)), log_grid(1e-2, 1e2, 50));
    text = format_report(r);
    passed = r.passed();
  } else if (a.check == "thm2") {
    const GapReport r = evaluate_theorem2(xor_instance(a.mu), a.resolution);
    text = format_report(r);
    passed = r.passed();
  } else if (a.check == "gap-demo") {
    GapDemoSpec spec = GapDemoSpec::xor_default();
    spec.seeds = a.seeds.resolve(true);
    if (a.epochs > 0) spec.train.epochs = a.epochs;
    const GapDemoReport r = routing_gap_learning_demo(spec);
    text = format_report(r);
    passed = r.passed();
  } else {
    throw ConfigError("--check must be thm1, thm2 or gap-demo");
  }
  if (!a.out.empty()) write_text_file(fs::path(a.out) / (a.check + ".txt"), text);
  std::cout << text;
  return passed ? 0 : kCheck;
}

struct SynthArgs {
  std::string out, dims = "16,16", noise, informative, mode = "static";
  std::size_t samples = 1000, classes = 4;
  double separation = 1.0;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  SyntheticSpec s;
  s.num_samples = a.samples;
  s.num_classes = a.classes;
  s.view_dims.clear();
  for (double d : parse_real_list(a.dims)) {
    if (!(d >= 1.0)) throw ConfigError("--dims expects positive integers");
    s.view_dims.push_back(static_cast<std::size_t>(d));
  }
  s.noise = a.noise.empty() ? std::vector<double>(s.view_dims.size(), 0.0) : parse_real_list(a.noise);
  s.informative_fraction =
      a.informative.empty() ? std::vector<double>(s.view_dims.size(), 1.0) : parse_real_list(a.informative);
  s.separation = a.separation;
  s.seed = a.seed;
  if (a.mode == "static") {
    s.mode = ReliabilityMode::kStatic;
  } else if (a.mode == "xor") {
    s.mode = ReliabilityMode::kSampleDependent;
  } else {
    throw ConfigError("--mode must be static or xor");
  }
  const fs::path manifest = save_dataset(generate_synthetic(s), a.out);
  std::cout << "wrote " << manifest.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trusted multi-view classification with a unified router"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train one model per seed and write run artifacts");
  c_train->add_option("--manifest", train.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", train.out, "Output directory")->required();
  add_seeds(c_train, train.seeds, "'five' or a comma list of seeds");
  add_hyper(c_train, train.hyper);

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a trained model, optionally under perturbation");
  c_eval->add_option("--model", eval.model, "Model file written by train")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--manifest", eval.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--out", eval.out, "Output directory (optional)");
  c_eval->add_option("--perturb", eval.perturb, "none | scale | noise")->capture_default_str();
  c_eval->add_option("--sigma", eval.sigma, "Noise levels for --perturb noise")->capture_default_str();
  c_eval->add_option("--factors", eval.factors, "Per-view factors for --perturb scale, or 'random'")->capture_default_str();
  c_eval->add_option("--seed", eval.seed, "Seed for noise, random factors and --split test")->capture_default_str();
  c_eval->add_option("--split", eval.split, "all | test (stratified test split of --seed)")->capture_default_str();
  c_eval->add_flag("--per-view", eval.per_view, "Also report every expert's own opinion");
  c_eval->add_option("--bins", eval.bins, "Calibration bins")->capture_default_str();

  AblateArgs ablate;
  auto* c_ablate = app.add_subcommand("ablate", "Full model against ablated variants");
  c_ablate->add_option("--manifest", ablate.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_ablate->add_option("--out", ablate.out, "Output directory")->required();
  c_ablate->add_option("--which", ablate.which, "bal | div | attention | all")->capture_default_str();
  add_seeds(c_ablate, ablate.seeds, "'five' (default) or a comma list of seeds");
  add_hyper(c_ablate, ablate.hyper);

  SweepArgs sweep;
  auto* c_sweep = app.add_subcommand("sweep", "Accuracy surface over (beta, gamma)");
  c_sweep->add_option("--manifest", sweep.manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  c_sweep->add_option("--out", sweep.out, "Output directory")->required();
  c_sweep->add_option("--betas", sweep.betas, "Comma list of beta values")->capture_default_str();
  c_sweep->add_option("--gammas", sweep.gammas, "Comma list of gamma values")->capture_default_str();
  add_seeds(c_sweep, sweep.seeds, "'five' or a comma list of seeds");
  add_hyper(c_sweep, sweep.hyper);

  TheoryArgs theory;
  auto* c_theory = app.add_subcommand("theory", "Numerical checks of the scale-bias and information-gap results");
  c_theory->add_option("--check", theory.check, "thm1 | thm2 | gap-demo")->required();
  c_theory->add_option("--out", theory.out, "Directory for the report (optional)");
  c_theory->add_option("--pattern", theory.pattern, "Support pattern r for thm1")->capture_default_str();
  c_theory->add_option("--mu", theory.mu, "Strong-convexity constant for thm2")->capture_default_str();
  c_theory->add_option("--resolution", theory.resolution, "Simplex grid resolution for thm2")->capture_default_str();
  c_theory->add_option("--epochs", theory.epochs, "Override gap-demo epochs");
  add_seeds(c_theory, theory.seeds, "Seeds for gap-demo ('five' by default)");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic multi-view dataset");
  c_synth->add_option("--out", synth.out, "Output directory")->required();
  c_synth->add_option("--samples", synth.samples, "Sample count")->capture_default_str();
  c_synth->add_option("--classes", synth.classes, "Class count")->capture_default_str();
  c_synth->add_option("--dims", synth.dims, "Per-view widths")->capture_default_str();
  c_synth->add_option("--noise", synth.noise, "Per-view noise levels (default 0)");
  c_synth->add_option("--informative", synth.informative, "Per-view informative fractions (default 1)");
  c_synth->add_option("--separation", synth.separation, "Centroid spread")->capture_default_str();
  c_synth->add_option("--mode", synth.mode, "static | xor")->capture_default_str();
  c_synth->add_option("--seed", synth.seed, "Generator seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*c_train) return cmd_train(train);
    if (*c_eval) return cmd_eval(eval);
    if (*c_ablate) return cmd_ablate(ablate);
    if (*c_sweep) return cmd_sweep(sweep);
    if (*c_theory) return cmd_theory(theory);
    if (*c_synth) return cmd_synth(synth);
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const DomainError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const CheckFailure& e) {
    std::cerr << "check failed: " << e.what() << "\n";
    return kCheck;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
