#include "kfe/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>

#include "kfe/error.hpp"

namespace kfe::kernels {

namespace scalar {

double dot(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scal(double a, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

double sum_sq(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
  return s;
}

void square(const double* x, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * x[i];
}

void hadamard(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void div_shift(const double* num, const double* den, double eps, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = num[i] / (den[i] + eps);
}

void ema(double* acc, const double* x, double decay, std::size_t n) {
  const double w = 1.0 - decay;
  for (std::size_t i = 0; i < n; ++i) acc[i] = decay * acc[i] + w * x[i];
}

void ema_sq(double* acc, const double* x, double decay, std::size_t n) {
  const double w = 1.0 - decay;
  for (std::size_t i = 0; i < n; ++i) acc[i] = decay * acc[i] + w * x[i] * x[i];
}

void rot(double* x, double* y, double c, double s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi + s * yi;
    y[i] = c * yi - s * xi;
  }
}

namespace {

void apply_beta(std::size_t m, std::size_t n, double beta, double* c, std::size_t ldc) {
  if (beta == 1.0) return;
  for (std::size_t i = 0; i < m; ++i) {
    double* row = c + i * ldc;
    if (beta == 0.0) {
      std::memset(row, 0, n * sizeof(double));
    } else {
      scal(beta, row, n);
    }
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
             std::size_t ldc) {
  apply_beta(m, n, beta, c, ldc);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = alpha * a[i * lda + p];
      if (av == 0.0) continue;
      axpy(av, b + p * ldb, crow, n);
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
             std::size_t ldc) {
  apply_beta(m, n, beta, c, ldc);
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = alpha * a[p * lda + i];
      if (av == 0.0) continue;
      axpy(av, brow, c + i * ldc, n);
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
             std::size_t ldc) {
  apply_beta(m, n, beta, c, ldc);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    double* crow = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) {
      crow[j] += alpha * dot(arow, b + j * ldb, k);
    }
  }
}

}  // namespace scalar

namespace {

Table make_table(Isa isa) {
#if defined(KFE_HAVE_AVX2)
  if (isa == Isa::avx2) {
    return Table{avx2::dot,      avx2::axpy,    avx2::scal,   avx2::sum_sq,  avx2::square,
                 avx2::hadamard, avx2::div_shift, avx2::ema,  avx2::ema_sq,  avx2::rot,
                 avx2::gemm_nn,  avx2::gemm_tn, avx2::gemm_nt};
  }
#else
  (void)isa;
#endif
  return Table{scalar::dot,      scalar::axpy,    scalar::scal,   scalar::sum_sq,  scalar::square,
               scalar::hadamard, scalar::div_shift, scalar::ema,  scalar::ema_sq,  scalar::rot,
               scalar::gemm_nn,  scalar::gemm_tn, scalar::gemm_nt};
}

Isa detect_isa() {
  if (const char* env = std::getenv("KFE_KERNELS")) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2") {
      if (!avx2_available()) throw ConfigError("KFE_KERNELS=avx2 but AVX2 is not available");
      return Isa::avx2;
    }
    if (!v.empty() && v != "auto") throw ConfigError("unknown KFE_KERNELS value: " + v);
  }
  return avx2_available() ? Isa::avx2 : Isa::scalar;
}

struct Dispatch {
  Isa isa;
  Table tab;
  Dispatch() : isa(detect_isa()), tab(make_table(isa)) {}
};

Dispatch& dispatch() {
  static Dispatch d;
  return d;
}

}  // namespace

bool avx2_available() noexcept {
#if defined(KFE_HAVE_AVX2)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa active_isa() noexcept { return dispatch().isa; }

void force_isa(Isa isa) {
  if (isa == Isa::avx2 && !avx2_available()) {
    throw ConfigError("cannot force AVX2 kernels: not available on this CPU/build");
  }
  dispatch().isa = isa;
  dispatch().tab = make_table(isa);
}

const Table& table() noexcept { return dispatch().tab; }

}  // namespace kfe::kernels
