#pragma once

#include <span>

#include "kfe/matrix.hpp"

namespace kfe {

// Kronecker utilities. The project-wide vec convention is row-major
// flattening: vec(M)[i * cols + j] = M(i, j). Under this convention
//   (A (x) B) vec(C) = vec(A C B^T)   with C of shape a.cols x b.cols,
// and the coordinate (i, k) of the product space maps to index
// i * b.rows + k. A dedicated test pins this convention against the
// materialized product.

inline constexpr std::size_t kDefaultMaxKroneckerDim = 4096;

// Materialized Kronecker product; entry ((i*b.rows+k), (j*b.cols+l)) =
// a(i,j) * b(k,l). Throws ResourceError when either product dimension
// exceeds max_dim.
DenseMatrix kronecker_product(const DenseMatrix& a, const DenseMatrix& b,
                              std::size_t max_dim = kDefaultMaxKroneckerDim);

Vector vec(const DenseMatrix& m);
DenseMatrix unvec(std::span<const double> v, std::size_t rows, std::size_t cols);

// y = (a (x) b) v without materializing the product.
Vector kron_matvec(const DenseMatrix& a, const DenseMatrix& b, std::span<const double> v);

}  // namespace kfe
