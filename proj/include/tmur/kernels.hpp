#pragma once

// Dense double-precision inner loops with a scalar reference implementation
// and SIMD variants (AVX2+FMA on x86-64, NEON on aarch64). The best variant the
// CPU supports is chosen at first use; TMUR_KERNELS=scalar|avx2|neon in the
// environment overrides the choice. Every variant must agree with the scalar
// reference up to floating-point reassociation.

#include <cstddef>
#include <span>
#include <string_view>

namespace tmur::kernels {

enum class Backend { kScalar, kAvx2, kNeon };

std::string_view backend_name(Backend b);
bool backend_supported(Backend b);
Backend best_backend();

// Currently dispatched backend.
Backend active_backend();
// Throws ConfigError if `b` is not supported on this CPU/build.
void set_active_backend(Backend b);

// Restores the previous backend on scope exit.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : previous_(active_backend()) { set_active_backend(b); }
  ~ScopedBackend() { set_active_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

double dot(std::span<const double> a, std::span<const double> b);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// Row-major matrix products that accumulate into C.
//   gemm_nn: C[m x n] += A[m x k]   * B[k x n]
//   gemm_tn: C[k x n] += A[m x k]^T * B[m x n]
//   gemm_nt: C[m x k] += A[m x n]   * B[k x n]^T
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

// Backend-specific entry points, exposed for equivalence tests.
namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace neon
#endif

}  // namespace tmur::kernels
