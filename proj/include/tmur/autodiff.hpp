#pragma once

// Minimal reverse-mode differentiation.
//
// A Tape records every primitive applied during one forward pass together
// with the activations its backward rule needs. backward() walks the records
// in exact reverse order, accumulates gradients into every Parameter that took
// part, and consumes the tape; a second call throws StateError.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "tmur/array.hpp"

namespace tmur {

struct Parameter {
  std::string name;
  DenseArray value;
  DenseArray gradient;

  Parameter() = default;
  Parameter(std::string n, DenseArray v) : name(std::move(n)), value(std::move(v)), gradient(value.rows(), value.cols()) {}

  void zero_grad() { gradient.fill(0.0); }
};

struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const noexcept { return id != kNone; }
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  // With record_gradients == false no backward closures are kept (inference).
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(DenseArray value);
  Var parameter(Parameter& p);

  const DenseArray& value(Var v) const;
  bool requires_grad(Var v) const;
  bool recording() const noexcept { return recording_; }
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  // Seeds d(out) with `seed` and propagates to every parameter.
  void backward(Var out, const DenseArray& seed);
  // Scalar output (1x1), seed 1.
  void backward(Var out);

  // --- primitive implementer API ---
  // Appends a record. `fn` runs during backward only if some input requires
  // a gradient.
  Var record(DenseArray value, std::initializer_list<Var> inputs, Backprop fn);
  Var record(DenseArray value, std::span<const Var> inputs, Backprop fn);
  // Gradient of a node's output (valid inside its backward rule).
  const DenseArray& grad(std::size_t node) const { return nodes_[node].grad; }
  // Accumulation buffer for an input, or nullptr when it needs no gradient.
  DenseArray* grad_buffer(Var v);

 private:
  struct Node {
    DenseArray value;
    DenseArray grad;
    Parameter* param = nullptr;
    Backprop backprop;
    bool needs_grad = false;
  };

  const Node& node(Var v) const;

  std::vector<Node> nodes_;
  bool recording_;
  bool consumed_ = false;
};

// out = x W + bias (bias broadcast per row; pass an invalid Var for none).
Var linear(Tape& t, Var x, Var weight, Var bias);
// Per-row LayerNorm with biased variance, then affine gain/shift.
Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps = 1e-5);
// log(1 + exp(x)), computed as max(x, 0) + log1p(exp(-|x|)).
Var softplus(Tape& t, Var x);
Var add_constant(Tape& t, Var x, double c);
// Row-wise softmax(x / tau). Throws DomainError for tau <= 0.
Var softmax_temperature(Tape& t, Var x, double tau);
// Horizontal concatenation of equally tall blocks.
Var concat_cols(Tape& t, std::span<const Var> blocks);
// Row sums, B x 1.
Var row_sum(Tape& t, Var x);
// Identity forward, blocks gradient flow.
Var stop_gradient(Tape& t, Var x);
// Each row divided by its L2 norm; rows with norm < 1e-12 become zero.
Var l2_normalize_rows(Tape& t, Var x);
// sum_i w_i * s_i over 1x1 inputs.
Var weighted_sum(Tape& t, std::span<const Var> scalars, std::span<const double> weights);

struct AttentionVars {
  Var query;  // d x d
  Var key;    // d x d
  Var value;  // d x d
  Var output; // d x d
};

// Single-head scaled dot-product attention applied per sample. `queries` is
// B x (num_queries * d) and `keys` / `values` are B x (num_keys * d), each
// row holding its tokens side by side. For every sample and query token q:
//   scores_j = (q Wq) . (k_j Wk) / sqrt(d),  a = softmax(scores),
//   out = (sum_j a_j v_j Wv) Wo.
// Returns B x (num_queries * d).
Var cross_attention(Tape& t, Var queries, Var keys, Var values, const AttentionVars& proj, std::size_t num_queries,
                    std::size_t num_keys, std::size_t dim);

// Elementwise helpers shared with non-tape code.
double softplus_value(double x);
double sigmoid_value(double x);

}  // namespace tmur
