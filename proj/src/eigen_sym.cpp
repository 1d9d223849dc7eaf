#include "kfe/eigen_sym.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "kfe/error.hpp"
#include "kfe/kernels.hpp"

namespace kfe {

namespace {

constexpr double kRoundoffClamp = 1e-10;  // relative to max |eigenvalue|
constexpr long kMaxQlIterations = 50;     // per eigenvalue

void check_symmetric(const DenseMatrix& m, double tol) {
  if (m.empty()) throw ContractViolation("sym_eigendecompose: empty matrix");
  if (m.rows() != m.cols()) {
    throw ContractViolation("sym_eigendecompose: matrix is not square (" +
                            std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")");
  }
  const double asym = max_asymmetry(m);
  if (asym > tol) {
    throw ContractViolation("sym_eigendecompose: matrix asymmetry " + std::to_string(asym) +
                            " exceeds tolerance " + std::to_string(tol));
  }
  if (!m.all_finite()) throw ContractViolation("sym_eigendecompose: non-finite entries");
}

// Householder reduction of the full symmetric matrix `a` (destroyed) to
// tridiagonal form. On return d holds the diagonal, e the subdiagonal
// (e[i] couples i-1 and i, e[0] = 0), h[i] the Householder norms, and row i
// of `a` (first i entries) the scaled Householder vector of step i.
// Working on full symmetric storage keeps every inner loop a contiguous
// dot/axpy.
void householder_tridiag(DenseMatrix& a, Vector& d, Vector& e, Vector& h_store) {
  const std::size_t n = a.rows();
  Vector p(n), w(n);
  for (std::size_t i = n - 1; i >= 1; --i) {
    double* u = a.data() + i * n;  // row i, active entries [0, i)
    const std::size_t l = i;
    double h = 0.0;
    if (l > 1) {
      double scale = 0.0;
      for (std::size_t k = 0; k < l; ++k) scale += std::fabs(u[k]);
      if (scale == 0.0) {
        e[i] = u[l - 1];
      } else {
        kernels::scal(1.0 / scale, u, l);
        h = kernels::sum_sq(u, l);
        const double f = u[l - 1];
        const double g = f >= 0.0 ? -std::sqrt(h) : std::sqrt(h);
        e[i] = scale * g;
        h -= f * g;
        u[l - 1] = f - g;
        for (std::size_t j = 0; j < l; ++j) {
          p[j] = kernels::dot(a.data() + j * n, u, l) / h;
        }
        const double kcoef = kernels::dot(p.data(), u, l) / (2.0 * h);
        for (std::size_t j = 0; j < l; ++j) w[j] = p[j] - kcoef * u[j];
        for (std::size_t j = 0; j < l; ++j) {
          double* row = a.data() + j * n;
          kernels::axpy(-u[j], w.data(), row, l);
          kernels::axpy(-w[j], u, row, l);
        }
      }
    } else {
      e[i] = u[l - 1];
    }
    h_store[i] = h;
  }
  e[0] = 0.0;
  h_store[0] = 0.0;
  for (std::size_t i = 0; i < n; ++i) d[i] = a(i, i);
}

// Accumulates the tridiagonalizing transformation into qt (row r of qt is
// the r-th basis vector, i.e. qt = Q^T).
void accumulate_transform(const DenseMatrix& a, const Vector& h_store, DenseMatrix& qt) {
  const std::size_t n = a.rows();
  for (std::size_t i = 0; i < n; ++i) qt(i, i) = 1.0;
  for (std::size_t i = 1; i < n; ++i) {
    if (h_store[i] == 0.0) continue;
    const double* u = a.data() + i * n;
    for (std::size_t j = 0; j < i; ++j) {
      double* qrow = qt.data() + j * n;
      const double g = kernels::dot(u, qrow, i) / h_store[i];
      kernels::axpy(-g, u, qrow, i);
    }
  }
}

// Implicit-shift QL on the tridiagonal (d, e). When qt is non-null the
// rotations are applied to its rows (contiguous memory).
void ql_implicit(Vector& d, Vector& e, DenseMatrix* qt, std::size_t n) {
  for (std::size_t i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    long iter = 0;
    std::size_t m;
    do {
      for (m = l; m + 1 < n; ++m) {
        const double dd = std::fabs(d[m]) + std::fabs(d[m + 1]);
        if (std::fabs(e[m]) + dd == dd) break;
      }
      if (m != l) {
        if (iter++ == kMaxQlIterations) {
          throw NumericError("symmetric eigensolver: QL iteration did not converge", iter);
        }
        double g = (d[l + 1] - d[l]) / (2.0 * e[l]);
        double r = std::hypot(g, 1.0);
        g = d[m] - d[l] + e[l] / (g + std::copysign(r, g));
        double s = 1.0, c = 1.0, p = 0.0;
        bool underflow = false;
        for (std::size_t i = m; i-- > l;) {
          double f = s * e[i];
          const double b = c * e[i];
          r = std::hypot(f, g);
          e[i + 1] = r;
          if (r == 0.0) {
            d[i + 1] -= p;
            e[m] = 0.0;
            underflow = true;
            break;
          }
          s = f / r;
          c = g / r;
          g = d[i + 1] - p;
          r = (d[i] - g) * s + 2.0 * c * b;
          p = s * r;
          d[i + 1] = g + p;
          g = c * r - b;
          if (qt) {
            kernels::rot(qt->data() + (i + 1) * n, qt->data() + i * n, c, s, n);
          }
        }
        if (underflow) continue;
        d[l] -= p;
        e[l] = g;
        e[m] = 0.0;
      }
    } while (m != l);
  }
}

void clamp_roundoff_negatives(Vector& d) {
  double amax = 0.0;
  for (double v : d) amax = std::max(amax, std::fabs(v));
  const double floor = kRoundoffClamp * amax;
  for (double& v : d) {
    if (v < 0.0 && -v <= floor) v = 0.0;
  }
}

std::vector<std::size_t> descending_order(const Vector& d) {
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&d](std::size_t a, std::size_t b) { return d[a] > d[b]; });
  return idx;
}

}  // namespace

SymEigen sym_eigendecompose(const DenseMatrix& m, double symmetry_tol) {
  check_symmetric(m, symmetry_tol);
  const std::size_t n = m.rows();
  if (n == 1) {
    return SymEigen{DenseMatrix::identity(1), Vector{m(0, 0)}};
  }
  DenseMatrix a = m;
  Vector d(n), e(n), h_store(n);
  householder_tridiag(a, d, e, h_store);
  DenseMatrix qt(n, n);
  accumulate_transform(a, h_store, qt);
  ql_implicit(d, e, &qt, n);
  clamp_roundoff_negatives(d);

  const auto order = descending_order(d);
  SymEigen out;
  out.eigenvalues.resize(n);
  out.basis = DenseMatrix(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    out.eigenvalues[r] = d[order[r]];
    const double* src = qt.data() + order[r] * n;
    // qt row -> basis column
    for (std::size_t i = 0; i < n; ++i) out.basis(i, r) = src[i];
  }
  return out;
}

Vector sym_eigenvalues(const DenseMatrix& m, double symmetry_tol) {
  check_symmetric(m, symmetry_tol);
  const std::size_t n = m.rows();
  if (n == 1) return Vector{m(0, 0)};
  DenseMatrix a = m;
  Vector d(n), e(n), h_store(n);
  householder_tridiag(a, d, e, h_store);
  ql_implicit(d, e, nullptr, n);
  clamp_roundoff_negatives(d);
  std::sort(d.begin(), d.end(), std::greater<double>());
  return d;
}

Vector chol_solve_spd(const DenseMatrix& a, std::span<const double> b) {
  if (a.rows() != a.cols()) throw ContractViolation("chol_solve_spd: matrix not square");
  if (b.size() != a.rows()) throw ContractViolation("chol_solve_spd: rhs length mismatch");
  const std::size_t n = a.rows();
  DenseMatrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double s =
          a(i, j) - kernels::dot(l.data() + i * n, l.data() + j * n, j);
      if (i == j) {
        if (s <= 0.0) {
          throw NumericError("chol_solve_spd: matrix not positive definite at pivot " +
                             std::to_string(i));
        }
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  // forward then back substitution
  Vector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = (b[i] - kernels::dot(l.data() + i * n, y.data(), i)) / l(i, i);
  }
  Vector x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = y[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
    x[i] = s / l(i, i);
  }
  return x;
}

}  // namespace kfe
