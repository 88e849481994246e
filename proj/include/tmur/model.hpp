#pragma once

// Multi-view evidential classifier with a unified router.
//
// Each view is projected to a shared width and layer-normalized (h_v). V
// private experts see only their own h_v; one collaborative expert sees the
// concatenation H = [h_1 .. h_V]. Every expert ends in a linear evidence head
// followed by softplus. A router MLP reads the cross-view attention context
// g = [attn(h_1; h) .. attn(h_V; h)] and produces softmax weights over the
// experts; the fused evidence is the weighted sum of expert evidence.
// Attention output only feeds the router, never the experts.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tmur/array.hpp"
#include "tmur/autodiff.hpp"

namespace tmur {

enum class RouterMode {
  // Router over V private + 1 collaborative expert, fed by the joint context.
  kUnified,
  // Branch-local self-weighting baseline: only the V private experts, weighted
  // from their own (gradient-detached) total evidence.
  kMarginalEvidence,
};

std::string_view router_mode_name(RouterMode m);
RouterMode parse_router_mode(std::string_view name);

struct ModelConfig {
  std::vector<std::size_t> view_dims;
  std::size_t aligned_dim = 64;
  std::vector<std::size_t> hidden_dims{256};
  std::size_t num_classes = 2;
  double temperature = 1.0;
  bool use_attention = true;
  RouterMode router_mode = RouterMode::kUnified;

  std::size_t num_views() const noexcept { return view_dims.size(); }
  bool has_collaborative() const noexcept { return router_mode == RouterMode::kUnified; }
  std::size_t num_experts() const noexcept { return num_views() + (has_collaborative() ? 1 : 0); }
  // Throws ConfigError.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// Vars produced by one forward pass on a Tape.
struct ForwardOutput {
  std::vector<Var> aligned;            // h_v, B x d each
  Var context;                         // router input g
  std::vector<Var> hidden;             // z_i for every expert, B x d
  std::vector<Var> normalized_hidden;  // unit-row z_v for the private experts
  std::vector<Var> evidence;           // e_i, B x K, private experts then collaborative
  Var routing;                         // pi, B x E
  Var fused_evidence;                  // B x K
};

struct Predictions {
  std::vector<int> labels;          // argmax of fused probabilities, ties -> lowest index
  DenseArray probabilities;         // B x K
  std::vector<double> uncertainty;  // K / S_fused
  DenseArray routing;               // B x E
  std::vector<DenseArray> expert_evidence;
  DenseArray fused_evidence;
};

// Differentiable weighted evidence fusion: out[b, k] = sum_i pi[b, i] e_i[b, k].
Var fuse_evidence(Tape& t, Var pi, std::span<const Var> evidence);
DenseArray fuse_evidence(const DenseArray& pi, std::span<const DenseArray> evidence);

// Per-view standardization statistics, estimated on training data.
struct Standardizer {
  std::vector<DenseArray> mean;   // 1 x d_v
  std::vector<DenseArray> scale;  // 1 x d_v, std with zeros replaced by 1

  static Standardizer identity(std::span<const std::size_t> dims);
  static Standardizer fit(std::span<const DenseArray> views);
  std::vector<DenseArray> apply(std::span<const DenseArray> views) const;
};

class Model {
 public:
  // Xavier-uniform weights seeded from (seed, parameter name); zero biases;
  // unit layer-norm gains.
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  std::vector<Parameter>& parameters() noexcept { return params_; }
  const std::vector<Parameter>& parameters() const noexcept { return params_; }
  Parameter& parameter(std::string_view name);
  const Parameter& parameter(std::string_view name) const;
  void zero_grad();
  std::size_t parameter_count() const;

  Standardizer& standardizer() noexcept { return standardizer_; }
  const Standardizer& standardizer() const noexcept { return standardizer_; }

  // The steps below take standardized views (one B x d_v block per view).
  std::vector<Var> align_views(Tape& t, std::span<const DenseArray> views);
  Var router_context(Tape& t, std::span<const Var> aligned);
  // Fills hidden / normalized_hidden / evidence of `out` from out.aligned.
  void expert_forward(Tape& t, ForwardOutput& out);
  Var route(Tape& t, Var router_input);
  ForwardOutput forward(Tape& t, std::span<const DenseArray> views);

  Predictions predict(std::span<const DenseArray> views);

  // Text model file: config line plus every parameter / statistic with its
  // shape and row-major values at 17 significant digits.
  void save(const std::filesystem::path& path) const;
  static Model load(const std::filesystem::path& path);

 private:
  struct Dense {
    std::size_t weight, bias;
  };
  struct Mlp {
    std::vector<Dense> layers;
  };
  struct Projector {
    Dense linear;
    std::size_t gain, shift;
  };

  std::size_t add_param(std::string name, std::size_t rows, std::size_t cols, std::uint64_t seed, bool xavier,
                        double fill = 0.0);
  Dense add_dense(const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed);
  Mlp add_mlp(const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed);
  Var apply_dense(Tape& t, const Dense& layer, Var x);
  Var apply_mlp(Tape& t, const Mlp& mlp, Var x);

  ModelConfig config_;
  std::vector<Parameter> params_;
  std::vector<Projector> projectors_;
  std::vector<Mlp> experts_;  // private experts, then collaborative
  std::vector<Dense> heads_;
  std::size_t attn_q_ = 0, attn_k_ = 0, attn_v_ = 0, attn_o_ = 0;
  Mlp router_;
  Standardizer standardizer_;
};

}  // namespace tmur
