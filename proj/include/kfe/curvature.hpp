#pragma once

#include <span>

#include "kfe/eigen_sym.hpp"
#include "kfe/matrix.hpp"
#include "kfe/net.hpp"

namespace kfe {

// Second-moment factors of one layer: a = E[h h^T] over augmented inputs,
// b = E[delta delta^T] over backpropagated gradients. Both symmetric PSD.
struct KroneckerFactors {
  DenseMatrix a;  // (d_in + 1) x (d_in + 1)
  DenseMatrix b;  // d_out x d_out
};

// Eigenbasis state of one layer: the factor eigenbases span the
// Kronecker-factored eigenbasis u_a (x) u_b, s_a/s_b are the factor
// eigenvalues, and s_star the diagonal second-moment scaling measured in
// that basis (length (d_in+1)*d_out).
struct KfeState {
  DenseMatrix u_a;
  DenseMatrix u_b;
  Vector s_a;
  Vector s_b;
  Vector s_star;
  long last_basis_refresh = -1;
  bool s_star_initialized = false;

  bool has_basis() const { return !u_a.empty() && !u_b.empty(); }
  std::size_t dim() const { return u_a.rows() * u_b.rows(); }
};

struct ExactFisherBlock {
  DenseMatrix g;  // p x p, p = (d_in+1)*d_out
};

inline constexpr std::size_t kDefaultExactFisherLimit = 1024;

KroneckerFactors estimate_factors(const LayerBatchRecord& record);

// acc = decay * acc + (1 - decay) * fresh, for the optional factor EMA.
void blend_factors(KroneckerFactors& acc, const KroneckerFactors& fresh, double decay);

struct KfeEigen {
  DenseMatrix u_a;
  Vector s_a;
  DenseMatrix u_b;
  Vector s_b;
};

// Eigendecompositions of both factors; eigenvalues clamped at zero.
KfeEigen compute_kfe(const KroneckerFactors& factors);

// Installs a fresh basis in `state` and invalidates the running s_star.
void refresh_basis(KfeState& state, const KroneckerFactors& factors, long iteration);

// Gradient in KFE coordinates: (u_a (x) u_b)^T grad, computed in matrix
// form without materializing the product basis. Norm-preserving.
Vector kfe_project(const KfeState& state, std::span<const double> grad);
Vector kfe_unproject(const KfeState& state, std::span<const double> tilde_grad);

// Matrix-shaped core used by both the vector ops and the training loop;
// g has shape u_a.rows() x u_b.rows().
DenseMatrix kfe_project_mat(const KfeState& state, const DenseMatrix& g);
DenseMatrix kfe_unproject_mat(const KfeState& state, const DenseMatrix& g);

// s*_i = mean over examples of the squared projected gradient coordinate.
Vector compute_s_star_intrabatch(const KfeState& state, std::span<const Vector> per_example_grads);

// Same quantity computed from a layer record, exploiting the rank-1
// structure of per-example gradients: projecting h delta^T reduces to the
// outer product of the projected vectors, so the whole batch collapses to
// two GEMMs.
Vector compute_s_star_from_record(const KfeState& state, const LayerBatchRecord& record);

// EKFAC-ra update: s* <- decay * s* + (1-decay) * (projected grad)^2.
// The first call after a basis refresh initializes s* directly.
void update_s_star_running(KfeState& state, std::span<const double> minibatch_mean_grad,
                           double decay);

// Eigenvalues of the KFAC approximation in KFE coordinate order:
// value at index j*d_out+k is s_a[j]*s_b[k].
Vector kfac_scalings(const KfeState& state);

ExactFisherBlock exact_fisher_block(std::span<const Vector> per_example_grads,
                                    std::size_t limit = kDefaultExactFisherLimit);

}  // namespace kfe
