#pragma once

#include <span>
#include <string>
#include <vector>

#include "kfe/curvature.hpp"
#include "kfe/net.hpp"

namespace kfe {

enum class PrecondKind {
  sgd,
  sgd_momentum,
  adam,
  diagonal,
  kfac,
  ekfac,
  ekfac_ra,
  exact_fisher,
};

PrecondKind precond_kind_from_string(const std::string& s);
std::string to_string(PrecondKind kind);

struct PrecondHyper {
  double lr = 0.1;
  double damping = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double running_decay = 0.75;
  long refresh_every = 1;  // recompute factors + eigenbasis every n steps
  bool factored_damping = false;  // KFAC: (A + sqrt(eps) I) (x) (B + sqrt(eps) I)
  bool ra_per_example = false;    // EKFAC-ra: average squared per-example grads
  double factor_decay = 0.0;      // EMA over factor matrices, 0 = off
  std::size_t exact_limit = kDefaultExactFisherLimit;
};

struct PrecondConfig {
  PrecondKind kind = PrecondKind::sgd;
  PrecondHyper hyper;

  void validate() const;  // throws ContractViolation
  bool uses_kfe() const {
    return kind == PrecondKind::kfac || kind == PrecondKind::ekfac ||
           kind == PrecondKind::ekfac_ra;
  }
};

struct LayerPrecondState {
  KfeState kfe;
  KroneckerFactors factors;
  Vector sigma_sq;  // diagonal method second moments
  bool sigma_initialized = false;
  Vector velocity;      // momentum
  Vector moment1;       // adam
  Vector moment2;       // adam
  DenseMatrix fisher;   // exact-fisher block of the current batch
};

struct PrecondState {
  PrecondConfig config;
  std::vector<LayerPrecondState> layers;
  long iteration = 0;
  long adam_steps = 0;
  double current_lr = 0.0;

  static PrecondState make(const PrecondConfig& config, const Network& net);
};

// Phase timings (seconds) and loss of one optimization step.
struct StepMetrics {
  long iteration = 0;
  double loss = 0.0;
  double t_forward = 0.0;
  double t_backward = 0.0;
  double t_refresh = 0.0;
  double t_scaling = 0.0;
  double t_precondition = 0.0;
  bool basis_refreshed = false;
};

// --- preconditioner applications (pure given the state) ---

// KFAC: rescale in the KFE by the Kronecker eigenvalue products.
// Eigenvalue-space damping divides by (s_a s_b + eps); the factored
// alternative divides by (s_a + sqrt(eps))(s_b + sqrt(eps)).
Vector precondition_kfac(const KfeState& state, std::span<const double> mean_grad, double eps,
                         bool factored_damping = false);

// EKFAC: rescale in the KFE by s* + eps.
Vector precondition_ekfac(const KfeState& state, std::span<const double> mean_grad, double eps);

// Diagonal: per-coordinate division by sigma^2 + eps in the parameter basis.
Vector precondition_diagonal(std::span<const double> sigma_sq, std::span<const double> mean_grad,
                             double eps);

// Exact block Fisher: solves (g_block + eps I) x = mean_grad.
Vector precondition_exact(const DenseMatrix& g_block, std::span<const double> mean_grad,
                          double eps);

// One full optimization step: forward/backward, scheduled basis refresh,
// scaling update, preconditioning, and the parameter update
// theta <- theta - lr * preconditioned gradient. When back_out is non-null
// the backward results (records, mean gradients) are moved into it after
// the update, for observers such as the diagnostics hooks.
StepMetrics step(Network& net, PrecondState& state, const DenseMatrix& inputs,
                 const DenseMatrix& targets, BackwardResult* back_out = nullptr);

}  // namespace kfe
