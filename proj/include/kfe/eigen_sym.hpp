#pragma once

#include <span>

#include "kfe/matrix.hpp"

namespace kfe {

// Result of a symmetric eigendecomposition: m = basis * diag(eigenvalues) * basis^T.
// Columns of `basis` are eigenvectors; eigenvalues are sorted descending.
struct SymEigen {
  DenseMatrix basis;
  Vector eigenvalues;
};

// Full symmetric eigendecomposition via Householder tridiagonalization and
// implicit-shift QL. Input must be square and symmetric within
// `symmetry_tol` (max absolute asymmetry). Eigenvalues that are negative by
// no more than a round-off margin are clamped to zero, so PSD inputs come
// out PSD.
SymEigen sym_eigendecompose(const DenseMatrix& m, double symmetry_tol = 1e-10);

// Eigenvalues only (sorted descending). Much cheaper: skips the
// transformation accumulation entirely.
Vector sym_eigenvalues(const DenseMatrix& m, double symmetry_tol = 1e-10);

// Solves a * x = b for symmetric positive definite a (Cholesky).
Vector chol_solve_spd(const DenseMatrix& a, std::span<const double> b);

}  // namespace kfe
