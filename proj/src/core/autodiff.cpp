#include "tmur/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>

#include "tmur/errors.hpp"
#include "tmur/kernels.hpp"

namespace tmur {

// ---------------------------------------------------------------------------
// Tape

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw StateError("Var does not belong to this tape");
  return nodes_[v.id];
}

Var Tape::constant(DenseArray value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::parameter(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = recording_;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const DenseArray& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).needs_grad; }

Var Tape::record(DenseArray value, std::initializer_list<Var> inputs, Backprop fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(DenseArray value, std::span<const Var> inputs, Backprop fn) {
  if (consumed_) throw StateError("tape already consumed by backward");
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (Var in : inputs) {
      if (in.valid() && node(in).needs_grad) {
        n.needs_grad = true;
        break;
      }
    }
    if (n.needs_grad) n.backprop = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

DenseArray* Tape::grad_buffer(Var v) {
  if (!v.valid()) return nullptr;
  Node& n = nodes_.at(v.id);
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty() && !n.value.empty()) n.grad = DenseArray(n.value.rows(), n.value.cols());
  return &n.grad;
}

void Tape::backward(Var out, const DenseArray& seed) {
  if (consumed_) throw StateError("backward called twice on the same tape");
  if (!recording_) throw StateError("backward on a non-recording tape");
  const Node& o = node(out);
  if (!seed.same_shape(o.value)) {
    throw ShapeError("backward seed shape " + seed.shape_string() + " != output shape " + o.value.shape_string());
  }
  consumed_ = true;
  if (!o.needs_grad) return;
  nodes_[out.id].grad = seed;
  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backprop) n.backprop(*this, i);
  }
  for (Node& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    kernels::axpy(1.0, n.grad.values(), n.param->gradient.values());
  }
}

void Tape::backward(Var out) {
  const DenseArray& v = value(out);
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar backward needs a 1x1 output, got " + v.shape_string());
  backward(out, DenseArray(1, 1, 1.0));
}

// ---------------------------------------------------------------------------
// Elementwise helpers

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Primitives

Var linear(Tape& t, Var x, Var weight, Var bias) {
  const DenseArray& xv = t.value(x);
  const DenseArray& wv = t.value(weight);
  if (xv.cols() != wv.rows()) {
    throw ShapeError("linear: input " + xv.shape_string() + " incompatible with weight " + wv.shape_string());
  }
  const std::size_t batch = xv.rows(), in = wv.rows(), out = wv.cols();
  DenseArray y(batch, out);
  if (bias.valid()) {
    const DenseArray& bv = t.value(bias);
    require_shape(bv, 1, out, "linear bias");
    for (std::size_t r = 0; r < batch; ++r) std::copy(bv.data(), bv.data() + out, y.row(r).begin());
  }
  kernels::gemm_nn(batch, in, out, xv.data(), wv.data(), y.data());

  return t.record(std::move(y), {x, weight, bias}, [x, weight, bias, batch, in, out](Tape& tp, std::size_t self) {
    const DenseArray& g = tp.grad(self);
    if (DenseArray* dx = tp.grad_buffer(x)) kernels::gemm_nt(batch, out, in, g.data(), tp.value(weight).data(), dx->data());
    if (DenseArray* dw = tp.grad_buffer(weight)) kernels::gemm_tn(batch, in, out, tp.value(x).data(), g.data(), dw->data());
    if (DenseArray* db = tp.grad_buffer(bias)) {
      for (std::size_t r = 0; r < batch; ++r) kernels::axpy(1.0, g.row(r), db->row(0));
    }
  });
}

Var layer_norm(Tape& t, Var x, Var gain, Var shift, double eps) {
  if (!(eps > 0.0)) throw DomainError("layer_norm: eps must be positive");
  const DenseArray& xv = t.value(x);
  const std::size_t batch = xv.rows(), d = xv.cols();
  if (d == 0) throw ShapeError("layer_norm: zero-width input");
  const DenseArray& gv = t.value(gain);
  const DenseArray& sv = t.value(shift);
  require_shape(gv, 1, d, "layer_norm gain");
  require_shape(sv, 1, d, "layer_norm shift");

  auto xhat = std::make_shared<DenseArray>(batch, d);
  auto inv_std = std::make_shared<std::vector<double>>(batch);
  DenseArray y(batch, d);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto row = xv.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mean) * is;
      (*xhat)(r, c) = h;
      y(r, c) = h * gv(0, c) + sv(0, c);
    }
  }

  return t.record(std::move(y), {x, gain, shift}, [x, gain, shift, xhat, inv_std, batch, d](Tape& tp, std::size_t self) {
    const DenseArray& g = tp.grad(self);
    const DenseArray& gv = tp.value(gain);
    DenseArray* dx = tp.grad_buffer(x);
    DenseArray* dg = tp.grad_buffer(gain);
    DenseArray* ds = tp.grad_buffer(shift);
    const double inv_d = 1.0 / static_cast<double>(d);
    std::vector<double> dh(d);
    for (std::size_t r = 0; r < batch; ++r) {
      double mean_dh = 0.0, mean_dh_h = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double gc = g(r, c);
        if (dg) (*dg)(0, c) += gc * (*xhat)(r, c);
        if (ds) (*ds)(0, c) += gc;
        dh[c] = gc * gv(0, c);
        mean_dh += dh[c];
        mean_dh_h += dh[c] * (*xhat)(r, c);
      }
      if (!dx) continue;
      mean_dh *= inv_d;
      mean_dh_h *= inv_d;
      const double is = (*inv_std)[r];
      for (std::size_t c = 0; c < d; ++c) {
        (*dx)(r, c) += is * (dh[c] - mean_dh - (*xhat)(r, c) * mean_dh_h);
      }
    }
  });
}

Var softplus(Tape& t, Var x) {
  const DenseArray& xv = t.value(x);
  DenseArray y(xv.rows(), xv.cols());
  for (std::size_t i = 0; i < xv.size(); ++i) y.data()[i] = softplus_value(xv.data()[i]);
  return t.record(std::move(y), {x}, [x](Tape& tp, std::size_t self) {
    DenseArray* dx = tp.grad_buffer(x);
    if (!dx) return;
    const DenseArray& g = tp.grad(self);
    const DenseArray& xv = tp.value(x);
    for (std::size_t i = 0; i < xv.size(); ++i) dx->data()[i] += g.data()[i] * sigmoid_value(xv.data()[i]);
  });
}

Var add_constant(Tape& t, Var x, double c) {
  DenseArray y = t.value(x);
  for (double& v : y.values()) v += c;
  return t.record(std::move(y), {x}, [x](Tape& tp, std::size_t self) {
    if (DenseArray* dx = tp.grad_buffer(x)) kernels::axpy(1.0, tp.grad(self).values(), dx->values());
  });
}

Var softmax_temperature(Tape& t, Var x, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("softmax temperature must be positive");
  const DenseArray& xv = t.value(x);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  auto y = std::make_shared<DenseArray>(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = xv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double e = std::exp((row[c] - mx) / tau);
      (*y)(r, c) = e;
      z += e;
    }
    for (std::size_t c = 0; c < cols; ++c) (*y)(r, c) /= z;
  }
  DenseArray out = *y;
  return t.record(std::move(out), {x}, [x, y, tau, rows, cols](Tape& tp, std::size_t self) {
    DenseArray* dx = tp.grad_buffer(x);
    if (!dx) return;
    const DenseArray& g = tp.grad(self);
    for (std::size_t r = 0; r < rows; ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c < cols; ++c) inner += g(r, c) * (*y)(r, c);
      for (std::size_t c = 0; c < cols; ++c) (*dx)(r, c) += (*y)(r, c) * (g(r, c) - inner) / tau;
    }
  });
}

Var concat_cols(Tape& t, std::span<const Var> blocks) {
  if (blocks.empty()) throw ShapeError("concat_cols: no blocks");
  const std::size_t rows = t.value(blocks[0]).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var b : blocks) {
    const DenseArray& v = t.value(b);
    if (v.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    widths.push_back(v.cols());
    total += v.cols();
  }
  DenseArray y(rows, total);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const DenseArray& v = t.value(blocks[i]);
    for (std::size_t r = 0; r < rows; ++r) std::copy(v.row(r).begin(), v.row(r).end(), y.row(r).begin() + offset);
    offset += widths[i];
  }
  std::vector<Var> ins(blocks.begin(), blocks.end());
  return t.record(std::move(y), blocks, [ins, widths, rows](Tape& tp, std::size_t self) {
    const DenseArray& g = tp.grad(self);
    std::size_t off = 0;
    for (std::size_t i = 0; i < ins.size(); ++i) {
      if (DenseArray* d = tp.grad_buffer(ins[i])) {
        for (std::size_t r = 0; r < rows; ++r) {
          kernels::axpy(1.0, g.row(r).subspan(off, widths[i]), d->row(r));
        }
      }
      off += widths[i];
    }
  });
}

Var row_sum(Tape& t, Var x) {
  const DenseArray& xv = t.value(x);
  DenseArray y(xv.rows(), 1);
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double s = 0.0;
    for (double v : xv.row(r)) s += v;
    y(r, 0) = s;
  }
  return t.record(std::move(y), {x}, [x](Tape& tp, std::size_t self) {
    DenseArray* dx = tp.grad_buffer(x);
    if (!dx) return;
    const DenseArray& g = tp.grad(self);
    for (std::size_t r = 0; r < dx->rows(); ++r) {
      for (double& v : dx->row(r)) v += g(r, 0);
    }
  });
}

Var stop_gradient(Tape& t, Var x) { return t.constant(t.value(x)); }

Var l2_normalize_rows(Tape& t, Var x) {
  const DenseArray& xv = t.value(x);
  const std::size_t rows = xv.rows(), cols = xv.cols();
  auto y = std::make_shared<DenseArray>(rows, cols);
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double n = std::sqrt(kernels::dot(xv.row(r), xv.row(r)));
    (*norms)[r] = n;
    if (n < 1e-12) continue;
    for (std::size_t c = 0; c < cols; ++c) (*y)(r, c) = xv(r, c) / n;
  }
  DenseArray out = *y;
  return t.record(std::move(out), {x}, [x, y, norms, rows, cols](Tape& tp, std::size_t self) {
    DenseArray* dx = tp.grad_buffer(x);
    if (!dx) return;
    const DenseArray& g = tp.grad(self);
    for (std::size_t r = 0; r < rows; ++r) {
      const double n = (*norms)[r];
      if (n < 1e-12) continue;
      const double proj = kernels::dot(y->row(r), g.row(r));
      for (std::size_t c = 0; c < cols; ++c) (*dx)(r, c) += (g(r, c) - (*y)(r, c) * proj) / n;
    }
  });
}

Var weighted_sum(Tape& t, std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.size() != weights.size()) throw ShapeError("weighted_sum: weight count mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    require_shape(t.value(scalars[i]), 1, 1, "weighted_sum term");
    total += weights[i] * t.value(scalars[i])(0, 0);
  }
  std::vector<Var> ins(scalars.begin(), scalars.end());
  std::vector<double> w(weights.begin(), weights.end());
  return t.record(DenseArray(1, 1, total), scalars, [ins, w](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)(0, 0);
    for (std::size_t i = 0; i < ins.size(); ++i) {
      if (DenseArray* d = tp.grad_buffer(ins[i])) (*d)(0, 0) += w[i] * g;
    }
  });
}

namespace {

struct AttentionCache {
  DenseArray qp, kp, vp;  // projected tokens, (B*n) x d
  DenseArray weights;     // B*nq x nk
  DenseArray mixed;       // B*nq x d, before the output projection
};

}  // namespace

Var cross_attention(Tape& t, Var queries, Var keys, Var values, const AttentionVars& proj, std::size_t num_queries,
                    std::size_t num_keys, std::size_t dim) {
  const DenseArray& qv = t.value(queries);
  const DenseArray& kv = t.value(keys);
  const DenseArray& vv = t.value(values);
  const std::size_t batch = qv.rows();
  if (num_queries == 0 || num_keys == 0 || dim == 0) throw ShapeError("cross_attention: empty token set");
  require_shape(qv, batch, num_queries * dim, "cross_attention queries");
  require_shape(kv, batch, num_keys * dim, "cross_attention keys");
  require_shape(vv, batch, num_keys * dim, "cross_attention values");
  for (Var w : {proj.query, proj.key, proj.value, proj.output}) require_shape(t.value(w), dim, dim, "attention projection");

  const std::size_t nq = batch * num_queries, nk = batch * num_keys;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  auto cache = std::make_shared<AttentionCache>();
  cache->qp = DenseArray(nq, dim);
  cache->kp = DenseArray(nk, dim);
  cache->vp = DenseArray(nk, dim);
  // Row-major B x (n*d) is bitwise the same buffer as (B*n) x d.
  kernels::gemm_nn(nq, dim, dim, qv.data(), t.value(proj.query).data(), cache->qp.data());
  kernels::gemm_nn(nk, dim, dim, kv.data(), t.value(proj.key).data(), cache->kp.data());
  kernels::gemm_nn(nk, dim, dim, vv.data(), t.value(proj.value).data(), cache->vp.data());

  cache->weights = DenseArray(nq, num_keys);
  cache->mixed = DenseArray(nq, dim);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t q = 0; q < num_queries; ++q) {
      const std::size_t qi = b * num_queries + q;
      auto a = cache->weights.row(qi);
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < num_keys; ++j) {
        a[j] = scale * kernels::dot(cache->qp.row(qi), cache->kp.row(b * num_keys + j));
        mx = std::max(mx, a[j]);
      }
      double z = 0.0;
      for (double& s : a) {
        s = std::exp(s - mx);
        z += s;
      }
      for (double& s : a) s /= z;
      for (std::size_t j = 0; j < num_keys; ++j) kernels::axpy(a[j], cache->vp.row(b * num_keys + j), cache->mixed.row(qi));
    }
  }
  DenseArray out(batch, num_queries * dim);
  kernels::gemm_nn(nq, dim, dim, cache->mixed.data(), t.value(proj.output).data(), out.data());

  const std::array<Var, 7> inputs{queries, keys, values, proj.query, proj.key, proj.value, proj.output};
  return t.record(std::move(out), inputs,
                  [queries, keys, values, proj, cache, batch, num_queries, num_keys, dim, nq, nk, scale](Tape& tp,
                                                                                                          std::size_t self) {
    const DenseArray& g = tp.grad(self);
    if (DenseArray* dwo = tp.grad_buffer(proj.output)) kernels::gemm_tn(nq, dim, dim, cache->mixed.data(), g.data(), dwo->data());
    DenseArray dmixed(nq, dim);
    kernels::gemm_nt(nq, dim, dim, g.data(), tp.value(proj.output).data(), dmixed.data());

    DenseArray dqp(nq, dim), dkp(nk, dim), dvp(nk, dim);
    std::vector<double> da(num_keys);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t q = 0; q < num_queries; ++q) {
        const std::size_t qi = b * num_queries + q;
        const auto a = cache->weights.row(qi);
        double inner = 0.0;
        for (std::size_t j = 0; j < num_keys; ++j) {
          const std::size_t kj = b * num_keys + j;
          da[j] = kernels::dot(dmixed.row(qi), cache->vp.row(kj));
          inner += a[j] * da[j];
          kernels::axpy(a[j], dmixed.row(qi), dvp.row(kj));
        }
        for (std::size_t j = 0; j < num_keys; ++j) {
          const std::size_t kj = b * num_keys + j;
          const double ds = a[j] * (da[j] - inner) * scale;
          kernels::axpy(ds, cache->kp.row(kj), dqp.row(qi));
          kernels::axpy(ds, cache->qp.row(qi), dkp.row(kj));
        }
      }
    }

    auto back = [&tp, dim](Var input, Var weight, const DenseArray& dproj, std::size_t n) {
      if (DenseArray* dw = tp.grad_buffer(weight)) kernels::gemm_tn(n, dim, dim, tp.value(input).data(), dproj.data(), dw->data());
      if (DenseArray* dx = tp.grad_buffer(input)) kernels::gemm_nt(n, dim, dim, dproj.data(), tp.value(weight).data(), dx->data());
    };
    back(queries, proj.query, dqp, nq);
    back(keys, proj.key, dkp, nk);
    back(values, proj.value, dvp, nk);
  });
}

}  // namespace tmur
