#pragma once

#include <cstddef>

// Data-parallel inner loops used by every numeric module. Each kernel has a
// scalar reference implementation and, on x86-64, an AVX2+FMA variant.
// Dispatch is resolved once per process: the AVX2 path is used when the CPU
// supports it, unless overridden by force_isa() or the KFE_KERNELS
// environment variable (values: "scalar", "avx2", "auto").
//
// All matrices are row-major. gemm_* follow BLAS semantics:
//   C = alpha * op(A) * op(B) + beta * C, with beta == 0 meaning C is
//   overwritten without being read.

namespace kfe::kernels {

enum class Isa { scalar, avx2 };

bool avx2_available() noexcept;
Isa active_isa() noexcept;
void force_isa(Isa isa);  // throws ConfigError if unavailable

struct Table {
  double (*dot)(const double*, const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  void (*scal)(double, double*, std::size_t);
  double (*sum_sq)(const double*, std::size_t);
  void (*square)(const double*, double*, std::size_t);
  void (*hadamard)(const double*, const double*, double*, std::size_t);
  void (*div_shift)(const double*, const double*, double, double*, std::size_t);
  void (*ema)(double*, const double*, double, std::size_t);
  void (*ema_sq)(double*, const double*, double, std::size_t);
  void (*rot)(double*, double*, double, double, std::size_t);
  void (*gemm_nn)(std::size_t, std::size_t, std::size_t, double, const double*, std::size_t,
                  const double*, std::size_t, double, double*, std::size_t);
  void (*gemm_tn)(std::size_t, std::size_t, std::size_t, double, const double*, std::size_t,
                  const double*, std::size_t, double, double*, std::size_t);
  void (*gemm_nt)(std::size_t, std::size_t, std::size_t, double, const double*, std::size_t,
                  const double*, std::size_t, double, double*, std::size_t);
};

const Table& table() noexcept;

// Dispatched entry points.
inline double dot(const double* x, const double* y, std::size_t n) { return table().dot(x, y, n); }
inline void axpy(double a, const double* x, double* y, std::size_t n) { table().axpy(a, x, y, n); }
inline void scal(double a, double* x, std::size_t n) { table().scal(a, x, n); }
inline double sum_sq(const double* x, std::size_t n) { return table().sum_sq(x, n); }
inline void square(const double* x, double* out, std::size_t n) { table().square(x, out, n); }
inline void hadamard(const double* a, const double* b, double* out, std::size_t n) {
  table().hadamard(a, b, out, n);
}
// out[i] = num[i] / (den[i] + eps)
inline void div_shift(const double* num, const double* den, double eps, double* out,
                      std::size_t n) {
  table().div_shift(num, den, eps, out, n);
}
// acc = decay * acc + (1 - decay) * x
inline void ema(double* acc, const double* x, double decay, std::size_t n) {
  table().ema(acc, x, decay, n);
}
// acc = decay * acc + (1 - decay) * x^2
inline void ema_sq(double* acc, const double* x, double decay, std::size_t n) {
  table().ema_sq(acc, x, decay, n);
}
// Plane rotation: (x, y) <- (c*x + s*y, c*y - s*x)
inline void rot(double* x, double* y, double c, double s, std::size_t n) {
  table().rot(x, y, c, s, n);
}

// C(M,N) = alpha * A(M,K) * B(K,N) + beta * C
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                    std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
                    std::size_t ldc) {
  table().gemm_nn(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
// C(M,N) = alpha * A^T * B + beta * C, with A stored K x M
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                    std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
                    std::size_t ldc) {
  table().gemm_tn(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
// C(M,N) = alpha * A * B^T + beta * C, with B stored N x K
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                    std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
                    std::size_t ldc) {
  table().gemm_nt(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

namespace scalar {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scal(double a, double* x, std::size_t n);
double sum_sq(const double* x, std::size_t n);
void square(const double* x, double* out, std::size_t n);
void hadamard(const double* a, const double* b, double* out, std::size_t n);
void div_shift(const double* num, const double* den, double eps, double* out, std::size_t n);
void ema(double* acc, const double* x, double decay, std::size_t n);
void ema_sq(double* acc, const double* x, double decay, std::size_t n);
void rot(double* x, double* y, double c, double s, std::size_t n);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
             std::size_t ldc);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
             std::size_t ldc);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
             std::size_t ldc);
}  // namespace scalar

#if defined(KFE_HAVE_AVX2)
namespace avx2 {
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scal(double a, double* x, std::size_t n);
double sum_sq(const double* x, std::size_t n);
void square(const double* x, double* out, std::size_t n);
void hadamard(const double* a, const double* b, double* out, std::size_t n);
void div_shift(const double* num, const double* den, double eps, double* out, std::size_t n);
void ema(double* acc, const double* x, double decay, std::size_t n);
void ema_sq(double* acc, const double* x, double decay, std::size_t n);
void rot(double* x, double* y, double c, double s, std::size_t n);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
             std::size_t ldc);
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
             std::size_t ldc);
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
             std::size_t ldc);
}  // namespace avx2
#endif

}  // namespace kfe::kernels
