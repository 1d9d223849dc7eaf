#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace kfe {

// Dense real matrix, row-major storage. Operations are defined index-wise;
// a default-constructed matrix is an empty placeholder and invalid as an
// operand.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols);  // zero-filled
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  static DenseMatrix identity(std::size_t n);
  static DenseMatrix diagonal(std::span<const double> d);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }

  double operator()(std::size_t i, std::size_t j) const { return entries_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return entries_[i * cols_ + j]; }

  const double* data() const noexcept { return entries_.data(); }
  double* data() noexcept { return entries_.data(); }
  std::span<const double> row(std::size_t i) const { return {data() + i * cols_, cols_}; }
  std::span<double> row(std::size_t i) { return {data() + i * cols_, cols_}; }
  const std::vector<double>& entries() const noexcept { return entries_; }

  bool all_finite() const noexcept;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> entries_;
};

using Vector = std::vector<double>;

DenseMatrix transpose(const DenseMatrix& m);

// c = a * b, c = a^T * b, c = a * b^T
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);

Vector matvec(const DenseMatrix& a, std::span<const double> x);
Vector matvec_t(const DenseMatrix& a, std::span<const double> x);  // a^T x

DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix subtract(const DenseMatrix& a, const DenseMatrix& b);
void scale_in_place(DenseMatrix& m, double alpha);
void add_to_diagonal(DenseMatrix& m, double alpha);

double frobenius_norm(const DenseMatrix& m);
double max_abs(const DenseMatrix& m);
double max_asymmetry(const DenseMatrix& m);  // max_ij |m(i,j) - m(j,i)|, square input

double norm2(std::span<const double> v);

}  // namespace kfe
