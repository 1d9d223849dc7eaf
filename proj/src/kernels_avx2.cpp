#include <immintrin.h>

#include <cstring>

#include "kfe/kernels.hpp"

// AVX2+FMA kernel variants. This translation unit is the only one compiled
// with -mavx2 -mfma; callers go through the dispatch table in kernels.cpp.

namespace kfe::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline void apply_beta(std::size_t m, std::size_t n, double beta, double* c, std::size_t ldc) {
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

// Cache block sizes for the gemm loops.
constexpr std::size_t kBlockK = 256;
constexpr std::size_t kBlockJ = 1024;

}  // namespace

double dot(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4,
                     _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void scal(double a, double* x, std::size_t n) {
  const __m256d av = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(x + i, _mm256_mul_pd(av, _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) x[i] *= a;
}

double sum_sq(const double* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d v0 = _mm256_loadu_pd(x + i);
    const __m256d v1 = _mm256_loadu_pd(x + i + 4);
    acc0 = _mm256_fmadd_pd(v0, v0, acc0);
    acc1 = _mm256_fmadd_pd(v1, v1, acc1);
  }
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    acc0 = _mm256_fmadd_pd(v, v, acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * x[i];
  return s;
}

void square(const double* x, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(out + i, _mm256_mul_pd(v, v));
  }
  for (; i < n; ++i) out[i] = x[i] * x[i];
}

void hadamard(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void div_shift(const double* num, const double* den, double eps, double* out, std::size_t n) {
  const __m256d ev = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d d = _mm256_add_pd(_mm256_loadu_pd(den + i), ev);
    _mm256_storeu_pd(out + i, _mm256_div_pd(_mm256_loadu_pd(num + i), d));
  }
  for (; i < n; ++i) out[i] = num[i] / (den[i] + eps);
}

void ema(double* acc, const double* x, double decay, std::size_t n) {
  const __m256d dv = _mm256_set1_pd(decay);
  const __m256d wv = _mm256_set1_pd(1.0 - decay);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d a = _mm256_mul_pd(dv, _mm256_loadu_pd(acc + i));
    _mm256_storeu_pd(acc + i, _mm256_fmadd_pd(wv, _mm256_loadu_pd(x + i), a));
  }
  const double w = 1.0 - decay;
  for (; i < n; ++i) acc[i] = decay * acc[i] + w * x[i];
}

void ema_sq(double* acc, const double* x, double decay, std::size_t n) {
  const __m256d dv = _mm256_set1_pd(decay);
  const __m256d wv = _mm256_set1_pd(1.0 - decay);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    const __m256d a = _mm256_mul_pd(dv, _mm256_loadu_pd(acc + i));
    _mm256_storeu_pd(acc + i, _mm256_fmadd_pd(wv, _mm256_mul_pd(xv, xv), a));
  }
  const double w = 1.0 - decay;
  for (; i < n; ++i) acc[i] = decay * acc[i] + w * x[i] * x[i];
}

void rot(double* x, double* y, double c, double s, std::size_t n) {
  const __m256d cv = _mm256_set1_pd(c);
  const __m256d sv = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d xv = _mm256_loadu_pd(x + i);
    const __m256d yv = _mm256_loadu_pd(y + i);
    _mm256_storeu_pd(x + i, _mm256_fmadd_pd(cv, xv, _mm256_mul_pd(sv, yv)));
    _mm256_storeu_pd(y + i, _mm256_fmsub_pd(cv, yv, _mm256_mul_pd(sv, xv)));
  }
  for (; i < n; ++i) {
    const double xi = x[i];
    const double yi = y[i];
    x[i] = c * xi + s * yi;
    y[i] = c * yi - s * xi;
  }
}

namespace {

// 4x8 register tile accumulating C[i0..i0+4, j0..j0+8) over k in [k0, k1).
// `broadcast_tn` selects A indexing: false -> A[i,k] (nn), true -> A[k,i] (tn).
template <bool kTransA>
inline void tile_4x8(const double* a, std::size_t lda, const double* b, std::size_t ldb,
                     double alpha, double* c, std::size_t ldc, std::size_t i0, std::size_t j0,
                     std::size_t k0, std::size_t k1) {
  __m256d acc00 = _mm256_setzero_pd(), acc01 = _mm256_setzero_pd();
  __m256d acc10 = _mm256_setzero_pd(), acc11 = _mm256_setzero_pd();
  __m256d acc20 = _mm256_setzero_pd(), acc21 = _mm256_setzero_pd();
  __m256d acc30 = _mm256_setzero_pd(), acc31 = _mm256_setzero_pd();
  for (std::size_t k = k0; k < k1; ++k) {
    const __m256d b0 = _mm256_loadu_pd(b + k * ldb + j0);
    const __m256d b1 = _mm256_loadu_pd(b + k * ldb + j0 + 4);
    const __m256d a0 = _mm256_set1_pd(kTransA ? a[k * lda + i0] : a[i0 * lda + k]);
    const __m256d a1 = _mm256_set1_pd(kTransA ? a[k * lda + i0 + 1] : a[(i0 + 1) * lda + k]);
    const __m256d a2 = _mm256_set1_pd(kTransA ? a[k * lda + i0 + 2] : a[(i0 + 2) * lda + k]);
    const __m256d a3 = _mm256_set1_pd(kTransA ? a[k * lda + i0 + 3] : a[(i0 + 3) * lda + k]);
    acc00 = _mm256_fmadd_pd(a0, b0, acc00);
    acc01 = _mm256_fmadd_pd(a0, b1, acc01);
    acc10 = _mm256_fmadd_pd(a1, b0, acc10);
    acc11 = _mm256_fmadd_pd(a1, b1, acc11);
    acc20 = _mm256_fmadd_pd(a2, b0, acc20);
    acc21 = _mm256_fmadd_pd(a2, b1, acc21);
    acc30 = _mm256_fmadd_pd(a3, b0, acc30);
    acc31 = _mm256_fmadd_pd(a3, b1, acc31);
  }
  const __m256d al = _mm256_set1_pd(alpha);
  double* c0 = c + i0 * ldc + j0;
  double* c1 = c0 + ldc;
  double* c2 = c1 + ldc;
  double* c3 = c2 + ldc;
  _mm256_storeu_pd(c0, _mm256_fmadd_pd(al, acc00, _mm256_loadu_pd(c0)));
  _mm256_storeu_pd(c0 + 4, _mm256_fmadd_pd(al, acc01, _mm256_loadu_pd(c0 + 4)));
  _mm256_storeu_pd(c1, _mm256_fmadd_pd(al, acc10, _mm256_loadu_pd(c1)));
  _mm256_storeu_pd(c1 + 4, _mm256_fmadd_pd(al, acc11, _mm256_loadu_pd(c1 + 4)));
  _mm256_storeu_pd(c2, _mm256_fmadd_pd(al, acc20, _mm256_loadu_pd(c2)));
  _mm256_storeu_pd(c2 + 4, _mm256_fmadd_pd(al, acc21, _mm256_loadu_pd(c2 + 4)));
  _mm256_storeu_pd(c3, _mm256_fmadd_pd(al, acc30, _mm256_loadu_pd(c3)));
  _mm256_storeu_pd(c3 + 4, _mm256_fmadd_pd(al, acc31, _mm256_loadu_pd(c3 + 4)));
}

// Scalar edge for rows/cols that do not fill a 4x8 tile.
template <bool kTransA>
inline void edge(const double* a, std::size_t lda, const double* b, std::size_t ldb, double alpha,
                 double* c, std::size_t ldc, std::size_t i0, std::size_t i1, std::size_t j0,
                 std::size_t j1, std::size_t k0, std::size_t k1) {
  for (std::size_t i = i0; i < i1; ++i) {
    double* crow = c + i * ldc;
    for (std::size_t k = k0; k < k1; ++k) {
      const double av = alpha * (kTransA ? a[k * lda + i] : a[i * lda + k]);
      if (av == 0.0) continue;
      const double* brow = b + k * ldb;
      for (std::size_t j = j0; j < j1; ++j) crow[j] += av * brow[j];
    }
  }
}

template <bool kTransA>
void gemm_broadcast(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
                    std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
                    std::size_t ldc) {
  apply_beta(m, n, beta, c, ldc);
  if (alpha == 0.0 || k == 0) return;
  const std::size_t m4 = m - m % 4;
  for (std::size_t k0 = 0; k0 < k; k0 += kBlockK) {
    const std::size_t k1 = k0 + kBlockK < k ? k0 + kBlockK : k;
    for (std::size_t j0 = 0; j0 < n; j0 += kBlockJ) {
      const std::size_t j1 = j0 + kBlockJ < n ? j0 + kBlockJ : n;
      const std::size_t j8 = j0 + (j1 - j0) / 8 * 8;
      for (std::size_t i = 0; i < m4; i += 4) {
        for (std::size_t j = j0; j < j8; j += 8) {
          tile_4x8<kTransA>(a, lda, b, ldb, alpha, c, ldc, i, j, k0, k1);
        }
        if (j8 < j1) edge<kTransA>(a, lda, b, ldb, alpha, c, ldc, i, i + 4, j8, j1, k0, k1);
      }
      if (m4 < m) edge<kTransA>(a, lda, b, ldb, alpha, c, ldc, m4, m, j0, j1, k0, k1);
    }
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
             std::size_t ldc) {
  gemm_broadcast<false>(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
             std::size_t ldc) {
  gemm_broadcast<true>(m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
             std::size_t ldc) {
  apply_beta(m, n, beta, c, ldc);
  if (alpha == 0.0 || k == 0) return;
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * lda;
    double* crow = c + i * ldc;
    for (std::size_t j = 0; j < n4; j += 4) {
      __m256d s0 = _mm256_setzero_pd();
      __m256d s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd();
      __m256d s3 = _mm256_setzero_pd();
      const double* b0 = b + j * ldb;
      const double* b1 = b0 + ldb;
      const double* b2 = b1 + ldb;
      const double* b3 = b2 + ldb;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d av = _mm256_loadu_pd(arow + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      double d0 = hsum(s0), d1 = hsum(s1), d2 = hsum(s2), d3 = hsum(s3);
      for (; p < k; ++p) {
        const double av = arow[p];
        d0 += av * b0[p];
        d1 += av * b1[p];
        d2 += av * b2[p];
        d3 += av * b3[p];
      }
      crow[j] += alpha * d0;
      crow[j + 1] += alpha * d1;
      crow[j + 2] += alpha * d2;
      crow[j + 3] += alpha * d3;
    }
    for (std::size_t j = n4; j < n; ++j) {
      crow[j] += alpha * dot(arow, b + j * ldb, k);
    }
  }
}

}  // namespace kfe::kernels::avx2
