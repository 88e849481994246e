#include "tmur/model.hpp"

#include <algorithm>
#include <cmath>

#include "tmur/errors.hpp"
#include "tmur/evidential.hpp"
#include "tmur/rng.hpp"

namespace tmur {

std::string_view router_mode_name(RouterMode m) {
  return m == RouterMode::kUnified ? "unified" : "marginal-evidence";
}

RouterMode parse_router_mode(std::string_view name) {
  if (name == "unified") return RouterMode::kUnified;
  if (name == "marginal-evidence") return RouterMode::kMarginalEvidence;
  throw ConfigError("unknown router mode '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  if (view_dims.empty()) throw ConfigError("model needs at least one view");
  for (std::size_t d : view_dims) {
    if (d == 0) throw ConfigError("view dimensions must be positive");
  }
  if (aligned_dim == 0) throw ConfigError("aligned_dim must be positive");
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw ConfigError("hidden widths must be positive");
  }
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw ConfigError("routing temperature must be positive");
}

// ---------------------------------------------------------------------------
// Fusion

DenseArray fuse_evidence(const DenseArray& pi, std::span<const DenseArray> evidence) {
  if (evidence.empty()) throw ShapeError("fuse_evidence: no experts");
  if (pi.cols() != evidence.size()) throw ShapeError("fuse_evidence: routing width != expert count");
  const std::size_t batch = pi.rows(), k = evidence[0].cols();
  DenseArray out(batch, k);
  for (std::size_t i = 0; i < evidence.size(); ++i) {
    require_shape(evidence[i], batch, k, "fuse_evidence evidence");
    for (std::size_t b = 0; b < batch; ++b) {
      const double w = pi(b, i);
      for (std::size_t c = 0; c < k; ++c) out(b, c) += w * evidence[i](b, c);
    }
  }
  return out;
}

Var fuse_evidence(Tape& t, Var pi, std::span<const Var> evidence) {
  std::vector<DenseArray> values;
  values.reserve(evidence.size());
  for (Var e : evidence) values.push_back(t.value(e));
  DenseArray out = fuse_evidence(t.value(pi), values);
  std::vector<Var> inputs{pi};
  inputs.insert(inputs.end(), evidence.begin(), evidence.end());
  std::vector<Var> ev(evidence.begin(), evidence.end());
  return t.record(std::move(out), inputs, [pi, ev](Tape& tp, std::size_t self) {
    const DenseArray& g = tp.grad(self);
    const DenseArray& p = tp.value(pi);
    DenseArray* dpi = tp.grad_buffer(pi);
    for (std::size_t i = 0; i < ev.size(); ++i) {
      const DenseArray& e = tp.value(ev[i]);
      DenseArray* de = tp.grad_buffer(ev[i]);
      for (std::size_t b = 0; b < g.rows(); ++b) {
        double acc = 0.0;
        for (std::size_t c = 0; c < g.cols(); ++c) {
          acc += g(b, c) * e(b, c);
          if (de) (*de)(b, c) += p(b, i) * g(b, c);
        }
        if (dpi) (*dpi)(b, i) += acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Standardizer

Standardizer Standardizer::identity(std::span<const std::size_t> dims) {
  Standardizer s;
  for (std::size_t d : dims) {
    s.mean.emplace_back(1, d, 0.0);
    s.scale.emplace_back(1, d, 1.0);
  }
  return s;
}

Standardizer Standardizer::fit(std::span<const DenseArray> views) {
  Standardizer s;
  for (const DenseArray& v : views) {
    if (v.rows() == 0) throw DataError("cannot standardize an empty view");
    DenseArray mean(1, v.cols()), scale(1, v.cols());
    const double n = static_cast<double>(v.rows());
    for (std::size_t r = 0; r < v.rows(); ++r) {
      for (std::size_t c = 0; c < v.cols(); ++c) mean(0, c) += v(r, c);
    }
    for (std::size_t c = 0; c < v.cols(); ++c) mean(0, c) /= n;
    for (std::size_t r = 0; r < v.rows(); ++r) {
      for (std::size_t c = 0; c < v.cols(); ++c) {
        const double d = v(r, c) - mean(0, c);
        scale(0, c) += d * d;
      }
    }
    for (std::size_t c = 0; c < v.cols(); ++c) {
      const double sd = std::sqrt(scale(0, c) / n);
      scale(0, c) = sd > 1e-12 ? sd : 1.0;
    }
    s.mean.push_back(std::move(mean));
    s.scale.push_back(std::move(scale));
  }
  return s;
}

std::vector<DenseArray> Standardizer::apply(std::span<const DenseArray> views) const {
  if (views.size() != mean.size()) throw ShapeError("standardizer: view count mismatch");
  std::vector<DenseArray> out;
  out.reserve(views.size());
  for (std::size_t v = 0; v < views.size(); ++v) {
    const DenseArray& x = views[v];
    if (x.cols() != mean[v].cols()) {
      throw ShapeError("view " + std::to_string(v) + ": width " + std::to_string(x.cols()) + " != expected " +
                       std::to_string(mean[v].cols()));
    }
    DenseArray y(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) = (x(r, c) - mean[v](0, c)) / scale[v](0, c);
    }
    out.push_back(std::move(y));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model construction

std::size_t Model::add_param(std::string name, std::size_t rows, std::size_t cols, std::uint64_t seed, bool xavier,
                             double fill) {
  DenseArray value(rows, cols, fill);
  if (xavier) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Rng rng(mix_seed(seed, stable_hash(name)));
    for (double& v : value.values()) v = rng.uniform(-a, a);
  }
  params_.emplace_back(std::move(name), std::move(value));
  return params_.size() - 1;
}

Model::Dense Model::add_dense(const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed) {
  Dense d;
  d.weight = add_param(prefix + ".weight", in, out, seed, true);
  d.bias = add_param(prefix + ".bias", 1, out, seed, false);
  return d;
}

Model::Mlp Model::add_mlp(const std::string& prefix, std::size_t in, std::size_t out, std::uint64_t seed) {
  Mlp mlp;
  std::size_t width = in;
  std::size_t index = 1;
  for (std::size_t h : config_.hidden_dims) {
    mlp.layers.push_back(add_dense(prefix + ".layer" + std::to_string(index++), width, h, seed));
    width = h;
  }
  mlp.layers.push_back(add_dense(prefix + ".layer" + std::to_string(index), width, out, seed));
  return mlp;
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const std::size_t v = config_.num_views();
  const std::size_t d = config_.aligned_dim;
  const std::size_t k = config_.num_classes;

  for (std::size_t i = 0; i < v; ++i) {
    const std::string p = "projectors." + std::to_string(i);
    Projector proj;
    proj.linear = add_dense(p + ".linear", config_.view_dims[i], d, seed);
    proj.gain = add_param(p + ".norm.gain", 1, d, seed, false, 1.0);
    proj.shift = add_param(p + ".norm.shift", 1, d, seed, false, 0.0);
    projectors_.push_back(proj);
  }
  for (std::size_t i = 0; i < v; ++i) experts_.push_back(add_mlp("experts." + std::to_string(i), d, d, seed));
  if (config_.has_collaborative()) experts_.push_back(add_mlp("collaborative", v * d, d, seed));
  for (std::size_t i = 0; i < experts_.size(); ++i) heads_.push_back(add_dense("heads." + std::to_string(i), d, k, seed));

  if (config_.has_collaborative() && config_.use_attention) {
    attn_q_ = add_param("attention.query", d, d, seed, true);
    attn_k_ = add_param("attention.key", d, d, seed, true);
    attn_v_ = add_param("attention.value", d, d, seed, true);
    attn_o_ = add_param("attention.output", d, d, seed, true);
  }
  const std::size_t router_in = config_.has_collaborative() ? v * d : v;
  router_ = add_mlp("router", router_in, config_.num_experts(), seed);
  standardizer_ = Standardizer::identity(config_.view_dims);
}

Parameter& Model::parameter(std::string_view name) {
  for (Parameter& p : params_) {
    if (p.name == name) return p;
  }
  throw ConfigError("no parameter named '" + std::string(name) + "'");
}

const Parameter& Model::parameter(std::string_view name) const {
  return const_cast<Model*>(this)->parameter(name);
}

void Model::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

// ---------------------------------------------------------------------------
// Forward

Var Model::apply_dense(Tape& t, const Dense& layer, Var x) {
  return linear(t, x, t.parameter(params_[layer.weight]), t.parameter(params_[layer.bias]));
}

Var Model::apply_mlp(Tape& t, const Mlp& mlp, Var x) {
  Var h = x;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    h = apply_dense(t, mlp.layers[i], h);
    if (i + 1 < mlp.layers.size()) h = softplus(t, h);
  }
  return h;
}

std::vector<Var> Model::align_views(Tape& t, std::span<const DenseArray> views) {
  if (views.size() != config_.num_views()) {
    throw ShapeError("expected " + std::to_string(config_.num_views()) + " views, got " + std::to_string(views.size()));
  }
  const std::size_t batch = views.empty() ? 0 : views[0].rows();
  std::vector<Var> aligned;
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (views[v].rows() != batch) throw ShapeError("views disagree on batch size");
    if (views[v].cols() != config_.view_dims[v]) {
      throw ShapeError("view " + std::to_string(v) + ": width " + std::to_string(views[v].cols()) + " != " +
                       std::to_string(config_.view_dims[v]));
    }
    const Projector& p = projectors_[v];
    Var x = t.constant(views[v]);
    Var proj = apply_dense(t, p.linear, x);
    aligned.push_back(layer_norm(t, proj, t.parameter(params_[p.gain]), t.parameter(params_[p.shift])));
  }
  return aligned;
}

Var Model::router_context(Tape& t, std::span<const Var> aligned) {
  Var stacked = concat_cols(t, aligned);
  if (!config_.use_attention) return stacked;
  const AttentionVars proj{t.parameter(params_[attn_q_]), t.parameter(params_[attn_k_]), t.parameter(params_[attn_v_]),
                           t.parameter(params_[attn_o_])};
  const std::size_t v = aligned.size();
  return cross_attention(t, stacked, stacked, stacked, proj, v, v, config_.aligned_dim);
}

void Model::expert_forward(Tape& t, ForwardOutput& out) {
  const std::size_t v = config_.num_views();
  out.hidden.clear();
  out.normalized_hidden.clear();
  out.evidence.clear();
  for (std::size_t i = 0; i < v; ++i) {
    Var z = apply_mlp(t, experts_[i], out.aligned[i]);
    out.hidden.push_back(z);
    out.normalized_hidden.push_back(l2_normalize_rows(t, z));
  }
  if (config_.has_collaborative()) out.hidden.push_back(apply_mlp(t, experts_[v], concat_cols(t, out.aligned)));
  for (std::size_t i = 0; i < out.hidden.size(); ++i) {
    out.evidence.push_back(softplus(t, apply_dense(t, heads_[i], out.hidden[i])));
  }
}

Var Model::route(Tape& t, Var router_input) {
  return softmax_temperature(t, apply_mlp(t, router_, router_input), config_.temperature);
}

ForwardOutput Model::forward(Tape& t, std::span<const DenseArray> views) {
  ForwardOutput out;
  out.aligned = align_views(t, views);
  expert_forward(t, out);
  if (config_.has_collaborative()) {
    out.context = router_context(t, out.aligned);
  } else {
    std::vector<Var> totals;
    for (std::size_t i = 0; i < config_.num_views(); ++i) totals.push_back(row_sum(t, stop_gradient(t, out.evidence[i])));
    out.context = concat_cols(t, totals);
  }
  out.routing = route(t, out.context);
  out.fused_evidence = fuse_evidence(t, out.routing, out.evidence);
  return out;
}

Predictions Model::predict(std::span<const DenseArray> views) {
  Tape t(false);
  const ForwardOutput out = forward(t, views);
  Predictions p;
  p.fused_evidence = t.value(out.fused_evidence);
  p.routing = t.value(out.routing);
  for (Var e : out.evidence) p.expert_evidence.push_back(t.value(e));
  const std::size_t batch = p.fused_evidence.rows(), k = p.fused_evidence.cols();
  p.probabilities = DenseArray(batch, k);
  p.labels.resize(batch);
  p.uncertainty.resize(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const DirichletOpinion op = evidence_to_opinion(p.fused_evidence.row(b));
    std::copy(op.probabilities.begin(), op.probabilities.end(), p.probabilities.row(b).begin());
    p.uncertainty[b] = op.uncertainty;
    // max_element returns the first maximum: ties go to the lowest class index.
    p.labels[b] = static_cast<int>(std::max_element(op.probabilities.begin(), op.probabilities.end()) -
                                   op.probabilities.begin());
  }
  return p;
}

}  // namespace tmur
