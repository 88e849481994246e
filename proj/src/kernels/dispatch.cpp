#include <atomic>
#include <cstdlib>
#include <string>

#include "tmur/errors.hpp"
#include "tmur/kernels.hpp"

namespace tmur::kernels {

namespace {

using DotFn = double (*)(const double*, const double*, std::size_t);
using AxpyFn = void (*)(double, const double*, double*, std::size_t);

struct Table {
  DotFn dot;
  AxpyFn axpy;
};

Table table_for(Backend b) {
  switch (b) {
#if defined(__x86_64__) || defined(_M_X64)
    case Backend::kAvx2:
      return {&avx2::dot, &avx2::axpy};
#endif
#if defined(__aarch64__)
    case Backend::kNeon:
      return {&neon::dot, &neon::axpy};
#endif
    default:
      return {&scalar::dot, &scalar::axpy};
  }
}

Backend parse_env(Backend fallback) {
  const char* env = std::getenv("TMUR_KERNELS");
  if (env == nullptr) return fallback;
  const std::string v(env);
  Backend wanted = fallback;
  if (v == "scalar") wanted = Backend::kScalar;
  else if (v == "avx2") wanted = Backend::kAvx2;
  else if (v == "neon") wanted = Backend::kNeon;
  return backend_supported(wanted) ? wanted : fallback;
}

struct State {
  std::atomic<Backend> backend;
  std::atomic<DotFn> dot;
  std::atomic<AxpyFn> axpy;

  State() {
    const Backend b = parse_env(best_backend());
    const Table t = table_for(b);
    backend.store(b);
    dot.store(t.dot);
    axpy.store(t.axpy);
  }
};

State& state() {
  static State s;
  return s;
}

}  // namespace

std::string_view backend_name(Backend b) {
  switch (b) {
    case Backend::kScalar:
      return "scalar";
    case Backend::kAvx2:
      return "avx2";
    case Backend::kNeon:
      return "neon";
  }
  return "unknown";
}

bool backend_supported(Backend b) {
  switch (b) {
    case Backend::kScalar:
      return true;
    case Backend::kAvx2:
#if (defined(__x86_64__) || defined(_M_X64)) && defined(__GNUC__)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::kNeon:
#if defined(__aarch64__)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Backend best_backend() {
  if (backend_supported(Backend::kAvx2)) return Backend::kAvx2;
  if (backend_supported(Backend::kNeon)) return Backend::kNeon;
  return Backend::kScalar;
}

Backend active_backend() { return state().backend.load(); }

void set_active_backend(Backend b) {
  if (!backend_supported(b)) {
    throw ConfigError("kernel backend '" + std::string(backend_name(b)) + "' is not supported here");
  }
  State& s = state();
  const Table t = table_for(b);
  s.dot.store(t.dot);
  s.axpy.store(t.axpy);
  s.backend.store(b);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  return state().dot.load(std::memory_order_relaxed)(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
  state().axpy.load(std::memory_order_relaxed)(alpha, x.data(), y.data(), x.size());
}

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  const AxpyFn ax = state().axpy.load(std::memory_order_relaxed);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) ax(arow[p], b + p * n, crow, n);
  }
}

void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  const AxpyFn ax = state().axpy.load(std::memory_order_relaxed);
  for (std::size_t r = 0; r < m; ++r) {
    const double* arow = a + r * k;
    const double* brow = b + r * n;
    for (std::size_t p = 0; p < k; ++p) ax(arow[p], brow, c + p * n, n);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  const DotFn dt = state().dot.load(std::memory_order_relaxed);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::size_t j = 0; j < k; ++j) crow[j] += dt(arow, b + j * n, n);
  }
}

}  // namespace tmur::kernels
