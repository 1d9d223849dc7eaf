#include "kfe/matrix.hpp"

#include <cmath>
#include <string>

#include "kfe/error.hpp"
#include "kfe/kernels.hpp"

namespace kfe {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

std::string shape_str(const DenseMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), entries_(rows * cols, 0.0) {
  require(rows >= 1 && cols >= 1, "DenseMatrix: rows and cols must be >= 1");
}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), entries_(std::move(entries)) {
  require(rows >= 1 && cols >= 1, "DenseMatrix: rows and cols must be >= 1");
  require(entries_.size() == rows * cols, "DenseMatrix: entry count != rows * cols");
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::diagonal(std::span<const double> d) {
  DenseMatrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

bool DenseMatrix::all_finite() const noexcept {
  for (double v : entries_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

DenseMatrix transpose(const DenseMatrix& m) {
  DenseMatrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  }
  return t;
}

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ (" + shape_str(a) + " * " +
                                    shape_str(b) + ")");
  DenseMatrix c(a.rows(), b.cols());
  kernels::gemm_nn(a.rows(), b.cols(), a.cols(), 1.0, a.data(), a.cols(), b.data(), b.cols(), 0.0,
                   c.data(), c.cols());
  return c;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows(), "matmul_tn: row counts differ (" + shape_str(a) + "^T * " +
                                    shape_str(b) + ")");
  DenseMatrix c(a.cols(), b.cols());
  kernels::gemm_tn(a.cols(), b.cols(), a.rows(), 1.0, a.data(), a.cols(), b.data(), b.cols(), 0.0,
                   c.data(), c.cols());
  return c;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.cols() == b.cols(), "matmul_nt: column counts differ (" + shape_str(a) + " * " +
                                    shape_str(b) + "^T)");
  DenseMatrix c(a.rows(), b.rows());
  kernels::gemm_nt(a.rows(), b.rows(), a.cols(), 1.0, a.data(), a.cols(), b.data(), b.cols(), 0.0,
                   c.data(), c.cols());
  return c;
}

Vector matvec(const DenseMatrix& a, std::span<const double> x) {
  require(x.size() == a.cols(), "matvec: vector length != cols");
  Vector y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    y[i] = kernels::dot(a.data() + i * a.cols(), x.data(), a.cols());
  }
  return y;
}

Vector matvec_t(const DenseMatrix& a, std::span<const double> x) {
  require(x.size() == a.rows(), "matvec_t: vector length != rows");
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    kernels::axpy(x[i], a.data() + i * a.cols(), y.data(), a.cols());
  }
  return y;
}

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shapes differ");
  DenseMatrix c = a;
  kernels::axpy(1.0, b.data(), c.data(), c.size());
  return c;
}

DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "subtract: shapes differ");
  DenseMatrix c = a;
  kernels::axpy(-1.0, b.data(), c.data(), c.size());
  return c;
}

void scale_in_place(DenseMatrix& m, double alpha) { kernels::scal(alpha, m.data(), m.size()); }

void add_to_diagonal(DenseMatrix& m, double alpha) {
  require(m.rows() == m.cols(), "add_to_diagonal: matrix not square");
  for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) += alpha;
}

double frobenius_norm(const DenseMatrix& m) {
  return std::sqrt(kernels::sum_sq(m.data(), m.size()));
}

double max_abs(const DenseMatrix& m) {
  double v = 0.0;
  for (double e : m.entries()) v = std::max(v, std::fabs(e));
  return v;
}

double max_asymmetry(const DenseMatrix& m) {
  require(m.rows() == m.cols(), "max_asymmetry: matrix not square");
  double v = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = i + 1; j < m.cols(); ++j) {
      v = std::max(v, std::fabs(m(i, j) - m(j, i)));
    }
  }
  return v;
}

double norm2(std::span<const double> v) { return std::sqrt(kernels::sum_sq(v.data(), v.size())); }

}  // namespace kfe
