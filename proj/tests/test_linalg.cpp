#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "kfe/eigen_sym.hpp"
#include "kfe/error.hpp"
#include "kfe/kronecker.hpp"
#include "kfe/matrix.hpp"
#include "kfe/rng.hpp"
#include "test_support.hpp"

using namespace kfe;
namespace kt = kfe::testing;

namespace {

double orthogonality_residual(const DenseMatrix& u) {
  DenseMatrix utu = matmul_tn(u, u);
  for (std::size_t i = 0; i < utu.rows(); ++i) utu(i, i) -= 1.0;
  return frobenius_norm(utu);
}

double reconstruction_rel_error(const SymEigen& eig, const DenseMatrix& m) {
  DenseMatrix usut =
      matmul(eig.basis, matmul_nt(DenseMatrix::diagonal(eig.eigenvalues), eig.basis));
  return frobenius_norm(subtract(usut, m)) / std::max(frobenius_norm(m), 1e-300);
}

}  // namespace

TEST_CASE("DenseMatrix construction and invariants") {
  CHECK_THROWS_AS(DenseMatrix(0, 3), ContractViolation);
  CHECK_THROWS_AS(DenseMatrix(2, 2, {1.0, 2.0}), ContractViolation);
  DenseMatrix m(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(m(1, 2) == 6.0);
  CHECK(m.all_finite());
  m(0, 0) = std::nan("");
  CHECK_FALSE(m.all_finite());
}

TEST_CASE("matmul wrappers agree with the naive loop") {
  Rng rng(31);
  DenseMatrix a = kt::random_matrix(6, 4, rng);
  DenseMatrix b = kt::random_matrix(4, 5, rng);
  CHECK(kt::max_abs_diff(matmul(a, b), kt::naive_matmul(a, b)) < 1e-13);
  CHECK(kt::max_abs_diff(matmul_tn(transpose(a), b), kt::naive_matmul(a, b)) < 1e-13);
  CHECK(kt::max_abs_diff(matmul_nt(a, transpose(b)), kt::naive_matmul(a, b)) < 1e-13);
  CHECK_THROWS_AS(matmul(a, a), ContractViolation);
}

// --- symmetric eigendecomposition ---

TEST_CASE("eigendecomposition of diag(2,3) sorts descending") {
  DenseMatrix m(2, 2, {2, 0, 0, 3});
  SymEigen eig = sym_eigendecompose(m);
  CHECK(eig.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(eig.eigenvalues[1] == doctest::Approx(2.0).epsilon(1e-12));
  // permutation of identity columns
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t r = 0; r < 2; ++r) {
      CHECK(std::fabs(std::fabs(eig.basis(r, c)) - (r == (c == 0 ? 1u : 0u) ? 1.0 : 0.0)) <
            1e-12);
    }
  }
}

TEST_CASE("eigendecomposition of the identity") {
  SymEigen eig = sym_eigendecompose(DenseMatrix::identity(3));
  for (double v : eig.eigenvalues) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(orthogonality_residual(eig.basis) < 1e-10);
}

TEST_CASE("2x2 hand-solved characteristic polynomial") {
  // [[2,1],[1,2]]: lambda^2 - 4 lambda + 3 = 0 -> 3, 1 with eigenvectors
  // [1,1]/sqrt(2) and [1,-1]/sqrt(2)
  DenseMatrix m(2, 2, {2, 1, 1, 2});
  SymEigen eig = sym_eigendecompose(m);
  CHECK(eig.eigenvalues[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(eig.eigenvalues[1] == doctest::Approx(1.0).epsilon(1e-12));
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  // eigenvector sign is arbitrary; compare |components|
  CHECK(std::fabs(eig.basis(0, 0) * eig.basis(1, 0) - 0.5) < 1e-12);  // same sign pair
  CHECK(std::fabs(std::fabs(eig.basis(0, 0)) - inv_sqrt2) < 1e-12);
  CHECK(eig.basis(0, 1) * eig.basis(1, 1) < 0.0);  // opposite signs
  CHECK(std::fabs(std::fabs(eig.basis(0, 1)) - inv_sqrt2) < 1e-12);
}

TEST_CASE("eigendecomposition invariants on random symmetric matrices") {
  Rng rng(33);
  for (std::size_t n : {2u, 3u, 5u, 8u, 13u, 21u, 40u, 77u}) {
    DenseMatrix m = kt::random_symmetric(n, rng);
    SymEigen eig = sym_eigendecompose(m);
    CHECK(orthogonality_residual(eig.basis) < 1e-10);
    CHECK(reconstruction_rel_error(eig, m) < 1e-8);
    CHECK(std::is_sorted(eig.eigenvalues.begin(), eig.eigenvalues.end(), std::greater<double>()));
  }
}

TEST_CASE("PSD inputs come out with non-negative eigenvalues") {
  Rng rng(34);
  for (int trial = 0; trial < 10; ++trial) {
    // rank-deficient PSD: Gram matrix of fewer vectors than dimensions
    const std::size_t n = 12;
    DenseMatrix r = kt::random_matrix(4, n, rng);
    DenseMatrix m = matmul_tn(r, r);
    SymEigen eig = sym_eigendecompose(m);
    for (double v : eig.eigenvalues) CHECK(v >= 0.0);
    CHECK(reconstruction_rel_error(eig, m) < 1e-8);
  }
}

TEST_CASE("eigenvalues-only path matches the full decomposition") {
  Rng rng(35);
  DenseMatrix m = kt::random_symmetric(31, rng);
  SymEigen eig = sym_eigendecompose(m);
  Vector vals = sym_eigenvalues(m);
  CHECK(kt::max_abs_diff(vals, eig.eigenvalues) < 1e-10);
}

TEST_CASE("eigendecomposition contract violations") {
  Rng rng(36);
  CHECK_THROWS_AS(sym_eigendecompose(kt::random_matrix(3, 4, rng)), ContractViolation);
  DenseMatrix m(2, 2, {1.0, 0.5, 0.25, 1.0});
  CHECK_THROWS_AS(sym_eigendecompose(m), ContractViolation);
  // larger tolerance admits the same matrix
  CHECK_NOTHROW(sym_eigendecompose(m, 1.0));
}

TEST_CASE("a moderately large spectrum is reproduced") {
  // known spectrum under a random rotation
  Rng rng(37);
  const std::size_t n = 120;
  DenseMatrix q = kt::random_orthogonal(n, rng);
  Vector spectrum(n);
  for (std::size_t i = 0; i < n; ++i) spectrum[i] = std::exp(-0.1 * static_cast<double>(i));
  DenseMatrix m = matmul(q, matmul_nt(DenseMatrix::diagonal(spectrum), q));
  // symmetrize round-off
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double v = 0.5 * (m(i, j) + m(j, i));
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  Vector vals = sym_eigenvalues(m);
  std::sort(spectrum.begin(), spectrum.end(), std::greater<double>());
  CHECK(kt::max_abs_diff(vals, spectrum) < 1e-9);
}

TEST_CASE("chol_solve_spd against the gauss oracle") {
  Rng rng(38);
  for (std::size_t n : {1u, 2u, 5u, 17u}) {
    DenseMatrix a = kt::random_spd(n, rng, 0.1);
    Vector b = kt::random_vector(n, rng);
    Vector x = chol_solve_spd(a, b);
    Vector expected = kt::gauss_solve(a, b);
    CHECK(kt::max_abs_diff(x, expected) < 1e-9);
  }
  DenseMatrix indefinite(2, 2, {1.0, 2.0, 2.0, 1.0});
  Vector b{1.0, 1.0};
  CHECK_THROWS_AS(chol_solve_spd(indefinite, b), NumericError);
}

// --- Kronecker utilities and the vec convention ---

TEST_CASE("kronecker product with identity left factor is block diagonal") {
  Rng rng(41);
  DenseMatrix b = kt::random_matrix(3, 3, rng);
  DenseMatrix out = kronecker_product(DenseMatrix::identity(2), b);
  CHECK(out.rows() == 6);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(out(i, j) == b(i, j));
      CHECK(out(3 + i, 3 + j) == b(i, j));
      CHECK(out(i, 3 + j) == 0.0);
      CHECK(out(3 + i, j) == 0.0);
    }
  }
}

TEST_CASE("kronecker product by direct definition expansion") {
  DenseMatrix a(2, 2, {1, 2, 3, 4});
  DenseMatrix b(2, 2, {0, 1, 1, 0});
  DenseMatrix out = kronecker_product(a, b);
  DenseMatrix expected(4, 4,
                       {0, 1, 0, 2,
                        1, 0, 2, 0,
                        0, 3, 0, 4,
                        3, 0, 4, 0});
  CHECK(kt::max_abs_diff(out, expected) == 0.0);
  CHECK(kt::max_abs_diff(out, kt::naive_kron(a, b)) == 0.0);
}

TEST_CASE("inverse of a kronecker product is the product of inverses") {
  Rng rng(42);
  DenseMatrix a = kt::random_spd(3, rng, 0.2);
  DenseMatrix b = kt::random_spd(3, rng, 0.2);
  DenseMatrix product = kronecker_product(a, b);
  DenseMatrix inv_product = kt::gauss_inverse(product);  // explicit 9x9 inversion
  DenseMatrix kron_of_inverses = kronecker_product(kt::gauss_inverse(a), kt::gauss_inverse(b));
  CHECK(kt::rel_frob_diff(inv_product, kron_of_inverses) < 1e-8);
}

TEST_CASE("kronecker product dimension guard") {
  DenseMatrix a(100, 100);
  DenseMatrix b(100, 100);
  CHECK_THROWS_AS(kronecker_product(a, b), ResourceError);
  CHECK_NOTHROW(kronecker_product(a, b, 10000));
}

TEST_CASE("vec flattening and round trip") {
  DenseMatrix m(2, 2, {1, 2, 3, 4});
  Vector v = vec(m);
  CHECK(v == Vector{1, 2, 3, 4});  // row-major convention
  CHECK(vec(DenseMatrix(3, 4)).size() == 12);
  for (double x : vec(DenseMatrix(3, 4))) CHECK(x == 0.0);

  Rng rng(43);
  DenseMatrix r = kt::random_matrix(5, 7, rng);
  DenseMatrix back = unvec(vec(r), 5, 7);
  CHECK(kt::max_abs_diff(back, r) == 0.0);
}

TEST_CASE("kron_matvec equals the materialized product") {
  Rng rng(44);
  SUBCASE("identity factors") {
    Vector v = kt::random_vector(12, rng);
    Vector out = kron_matvec(DenseMatrix::identity(3), DenseMatrix::identity(4), v);
    CHECK(kt::max_abs_diff(out, v) == 0.0);
  }
  SUBCASE("scalar case") {
    DenseMatrix a(1, 1, {2.0});
    DenseMatrix b(1, 1, {3.0});
    Vector v{1.0};
    CHECK(kron_matvec(a, b, v)[0] == doctest::Approx(6.0));
  }
  SUBCASE("random 3x3 factors against the explicit 9x9 product") {
    DenseMatrix a = kt::random_matrix(3, 3, rng);
    DenseMatrix b = kt::random_matrix(3, 3, rng);
    Vector v = kt::random_vector(9, rng);
    Vector expected = kt::naive_matvec(kt::naive_kron(a, b), v);
    Vector out = kron_matvec(a, b, v);
    CHECK(kt::max_abs_diff(out, expected) < 1e-12);
  }
  SUBCASE("rectangular factors, exhaustive small sizes") {
    for (int trial = 0; trial < 30; ++trial) {
      const std::size_t ar = 1 + rng.next_below(8), ac = 1 + rng.next_below(8);
      const std::size_t br = 1 + rng.next_below(8), bc = 1 + rng.next_below(8);
      DenseMatrix a = kt::random_matrix(ar, ac, rng);
      DenseMatrix b = kt::random_matrix(br, bc, rng);
      Vector v = kt::random_vector(ac * bc, rng);
      Vector expected = kt::naive_matvec(kt::naive_kron(a, b), v);
      Vector out = kron_matvec(a, b, v);
      double rel = kt::max_abs_diff(out, expected);
      CHECK(rel < 1e-10);
    }
  }
  SUBCASE("length mismatch") {
    Vector v(5);
    CHECK_THROWS_AS(kron_matvec(DenseMatrix::identity(2), DenseMatrix::identity(2), v),
                    ContractViolation);
  }
}

TEST_CASE("kronecker product of orthogonal factors is orthogonal") {
  Rng rng(45);
  DenseMatrix ua = kt::random_orthogonal(4, rng);
  DenseMatrix ub = kt::random_orthogonal(3, rng);
  DenseMatrix q = kronecker_product(ua, ub);
  CHECK(orthogonality_residual(q) < 1e-10);
}
