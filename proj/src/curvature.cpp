#include "kfe/curvature.hpp"

#include <cmath>
#include <string>

#include "kfe/error.hpp"
#include "kfe/kernels.hpp"

namespace kfe {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

void require_basis(const KfeState& state) {
  if (!state.has_basis()) throw StateError("KFE basis has not been computed");
}

// Kernel paths may round (i,j) and (j,i) differently; factors must be
// exactly symmetric for the eigensolver contract.
void symmetrize(DenseMatrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      const double v = 0.5 * (m(i, j) + m(j, i));
      m(i, j) = v;
      m(j, i) = v;
    }
  }
}

}  // namespace

KroneckerFactors estimate_factors(const LayerBatchRecord& record) {
  check(record.batch_size >= 1, "estimate_factors: empty batch");
  const double inv_n = 1.0 / static_cast<double>(record.batch_size);
  const auto& h = record.inputs_h;
  const auto& d = record.deltas;
  KroneckerFactors f;
  f.a = DenseMatrix(h.cols(), h.cols());
  kernels::gemm_tn(h.cols(), h.cols(), h.rows(), inv_n, h.data(), h.cols(), h.data(), h.cols(),
                   0.0, f.a.data(), f.a.cols());
  f.b = DenseMatrix(d.cols(), d.cols());
  kernels::gemm_tn(d.cols(), d.cols(), d.rows(), inv_n, d.data(), d.cols(), d.data(), d.cols(),
                   0.0, f.b.data(), f.b.cols());
  symmetrize(f.a);
  symmetrize(f.b);
  return f;
}

void blend_factors(KroneckerFactors& acc, const KroneckerFactors& fresh, double decay) {
  check(decay > 0.0 && decay < 1.0, "blend_factors: decay must be in (0,1)");
  if (acc.a.empty()) {
    acc = fresh;
    return;
  }
  check(acc.a.rows() == fresh.a.rows() && acc.b.rows() == fresh.b.rows(),
        "blend_factors: shape mismatch");
  kernels::ema(acc.a.data(), fresh.a.data(), decay, acc.a.size());
  kernels::ema(acc.b.data(), fresh.b.data(), decay, acc.b.size());
}

KfeEigen compute_kfe(const KroneckerFactors& factors) {
  SymEigen ea = sym_eigendecompose(factors.a);
  SymEigen eb = sym_eigendecompose(factors.b);
  // factors are PSD by construction; any residual negative is round-off
  for (double& v : ea.eigenvalues) v = std::max(v, 0.0);
  for (double& v : eb.eigenvalues) v = std::max(v, 0.0);
  return KfeEigen{std::move(ea.basis), std::move(ea.eigenvalues), std::move(eb.basis),
                  std::move(eb.eigenvalues)};
}

void refresh_basis(KfeState& state, const KroneckerFactors& factors, long iteration) {
  KfeEigen eig = compute_kfe(factors);
  state.u_a = std::move(eig.u_a);
  state.s_a = std::move(eig.s_a);
  state.u_b = std::move(eig.u_b);
  state.s_b = std::move(eig.s_b);
  state.last_basis_refresh = iteration;
  // running s* refers to the old coordinates; force re-initialization
  state.s_star_initialized = false;
}

DenseMatrix kfe_project_mat(const KfeState& state, const DenseMatrix& g) {
  require_basis(state);
  check(g.rows() == state.u_a.rows() && g.cols() == state.u_b.rows(),
        "kfe_project: gradient shape mismatch");
  return matmul(matmul_tn(state.u_a, g), state.u_b);  // u_a^T g u_b
}

DenseMatrix kfe_unproject_mat(const KfeState& state, const DenseMatrix& g) {
  require_basis(state);
  check(g.rows() == state.u_a.rows() && g.cols() == state.u_b.rows(),
        "kfe_unproject: gradient shape mismatch");
  return matmul(state.u_a, matmul_nt(g, state.u_b));  // u_a g u_b^T
}

Vector kfe_project(const KfeState& state, std::span<const double> grad) {
  require_basis(state);
  check(grad.size() == state.dim(), "kfe_project: gradient length " +
                                        std::to_string(grad.size()) + " != basis dimension " +
                                        std::to_string(state.dim()));
  DenseMatrix g(state.u_a.rows(), state.u_b.rows(), Vector(grad.begin(), grad.end()));
  return kfe_project_mat(state, g).entries();
}

Vector kfe_unproject(const KfeState& state, std::span<const double> tilde_grad) {
  require_basis(state);
  check(tilde_grad.size() == state.dim(), "kfe_unproject: gradient length mismatch");
  DenseMatrix g(state.u_a.rows(), state.u_b.rows(), Vector(tilde_grad.begin(), tilde_grad.end()));
  return kfe_unproject_mat(state, g).entries();
}

Vector compute_s_star_intrabatch(const KfeState& state,
                                 std::span<const Vector> per_example_grads) {
  require_basis(state);
  check(!per_example_grads.empty(), "compute_s_star_intrabatch: empty batch");
  const std::size_t p = state.dim();
  Vector acc(p, 0.0);
  Vector sq(p);
  for (const Vector& g : per_example_grads) {
    check(g.size() == p, "compute_s_star_intrabatch: gradient length mismatch");
    Vector proj = kfe_project(state, g);
    kernels::square(proj.data(), sq.data(), p);
    kernels::axpy(1.0, sq.data(), acc.data(), p);
  }
  kernels::scal(1.0 / static_cast<double>(per_example_grads.size()), acc.data(), p);
  for (double& v : acc) v = std::max(v, 0.0);
  return acc;
}

Vector compute_s_star_from_record(const KfeState& state, const LayerBatchRecord& record) {
  require_basis(state);
  check(record.batch_size >= 1, "compute_s_star_from_record: empty batch");
  check(record.inputs_h.cols() == state.u_a.rows() && record.deltas.cols() == state.u_b.rows(),
        "compute_s_star_from_record: record shape mismatch");
  const std::size_t n = record.batch_size;
  const std::size_t da = state.u_a.rows();
  const std::size_t db = state.u_b.rows();
  // P = H u_a, Q = D u_b: row e holds the projected input / delta of example
  // e. The projected per-example gradient is the rank-1 outer product
  // p_e q_e^T, so the mean of its square is (1/n) (P o P)^T (Q o Q).
  DenseMatrix p(n, da);
  kernels::gemm_nn(n, da, da, 1.0, record.inputs_h.data(), da, state.u_a.data(), da, 0.0, p.data(),
                   da);
  DenseMatrix q(n, db);
  kernels::gemm_nn(n, db, db, 1.0, record.deltas.data(), db, state.u_b.data(), db, 0.0, q.data(),
                   db);
  kernels::square(p.data(), p.data(), p.size());
  kernels::square(q.data(), q.data(), q.size());
  DenseMatrix s(da, db);
  kernels::gemm_tn(da, db, n, 1.0 / static_cast<double>(n), p.data(), da, q.data(), db, 0.0,
                   s.data(), db);
  Vector out = s.entries();
  for (double& v : out) v = std::max(v, 0.0);
  return out;
}

void update_s_star_running(KfeState& state, std::span<const double> minibatch_mean_grad,
                           double decay) {
  require_basis(state);
  check(decay > 0.0 && decay < 1.0, "update_s_star_running: decay must be in (0,1)");
  Vector proj = kfe_project(state, minibatch_mean_grad);
  if (!state.s_star_initialized || state.s_star.size() != proj.size()) {
    state.s_star.resize(proj.size());
    kernels::square(proj.data(), state.s_star.data(), proj.size());
    state.s_star_initialized = true;
  } else {
    kernels::ema_sq(state.s_star.data(), proj.data(), decay, proj.size());
  }
  for (double& v : state.s_star) v = std::max(v, 0.0);
}

Vector kfac_scalings(const KfeState& state) {
  require_basis(state);
  const std::size_t da = state.s_a.size();
  const std::size_t db = state.s_b.size();
  Vector out(da * db);
  for (std::size_t j = 0; j < da; ++j) {
    for (std::size_t k = 0; k < db; ++k) out[j * db + k] = state.s_a[j] * state.s_b[k];
  }
  return out;
}

ExactFisherBlock exact_fisher_block(std::span<const Vector> per_example_grads,
                                    std::size_t limit) {
  check(!per_example_grads.empty(), "exact_fisher_block: empty batch");
  const std::size_t p = per_example_grads.front().size();
  if (p > limit) {
    throw ResourceError("exact_fisher_block: dimension " + std::to_string(p) +
                        " exceeds oracle limit " + std::to_string(limit));
  }
  const std::size_t n = per_example_grads.size();
  DenseMatrix stacked(n, p);
  for (std::size_t e = 0; e < n; ++e) {
    check(per_example_grads[e].size() == p, "exact_fisher_block: ragged gradient list");
    std::copy(per_example_grads[e].begin(), per_example_grads[e].end(),
              stacked.data() + e * p);
  }
  ExactFisherBlock block;
  block.g = DenseMatrix(p, p);
  kernels::gemm_tn(p, p, n, 1.0 / static_cast<double>(n), stacked.data(), p, stacked.data(), p,
                   0.0, block.g.data(), p);
  symmetrize(block.g);
  return block;
}

}  // namespace kfe
