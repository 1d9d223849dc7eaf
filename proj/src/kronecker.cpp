#include "kfe/kronecker.hpp"

#include <string>

#include "kfe/error.hpp"
#include "kfe/kernels.hpp"

namespace kfe {

DenseMatrix kronecker_product(const DenseMatrix& a, const DenseMatrix& b, std::size_t max_dim) {
  if (a.empty() || b.empty()) throw ContractViolation("kronecker_product: empty operand");
  const std::size_t out_rows = a.rows() * b.rows();
  const std::size_t out_cols = a.cols() * b.cols();
  if (out_rows > max_dim || out_cols > max_dim) {
    throw ResourceError("kronecker_product: result " + std::to_string(out_rows) + "x" +
                        std::to_string(out_cols) + " exceeds max dimension " +
                        std::to_string(max_dim) + "; use kron_matvec instead");
  }
  DenseMatrix out(out_rows, out_cols);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double av = a(i, j);
      if (av == 0.0) continue;
      for (std::size_t k = 0; k < b.rows(); ++k) {
        double* dst = out.data() + (i * b.rows() + k) * out_cols + j * b.cols();
        kernels::axpy(av, b.data() + k * b.cols(), dst, b.cols());
      }
    }
  }
  return out;
}

Vector vec(const DenseMatrix& m) {
  if (m.empty()) throw ContractViolation("vec: empty matrix");
  return m.entries();
}

DenseMatrix unvec(std::span<const double> v, std::size_t rows, std::size_t cols) {
  if (v.size() != rows * cols) {
    throw ContractViolation("unvec: length " + std::to_string(v.size()) + " != " +
                            std::to_string(rows) + "*" + std::to_string(cols));
  }
  return DenseMatrix(rows, cols, Vector(v.begin(), v.end()));
}

Vector kron_matvec(const DenseMatrix& a, const DenseMatrix& b, std::span<const double> v) {
  if (a.empty() || b.empty()) throw ContractViolation("kron_matvec: empty operand");
  if (v.size() != a.cols() * b.cols()) {
    throw ContractViolation("kron_matvec: vector length " + std::to_string(v.size()) +
                            " != a.cols*b.cols = " + std::to_string(a.cols() * b.cols()));
  }
  // (a (x) b) vec(C) = vec(a C b^T) with C = unvec(v) of shape a.cols x b.cols.
  DenseMatrix c = unvec(v, a.cols(), b.cols());
  DenseMatrix cbt = matmul_nt(c, b);  // a.cols x b.rows
  DenseMatrix acbt = matmul(a, cbt);  // a.rows x b.rows
  return vec(acbt);
}

}  // namespace kfe
