#include "kfe/precond.hpp"

#include <chrono>
#include <cmath>

#include "kfe/error.hpp"
#include "kfe/kernels.hpp"

namespace kfe {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

Vector rescale_in_kfe(const KfeState& state, std::span<const double> mean_grad,
                      std::span<const double> denom_base, double eps) {
  Vector proj = kfe_project(state, mean_grad);
  Vector scaled(proj.size());
  kernels::div_shift(proj.data(), denom_base.data(), eps, scaled.data(), proj.size());
  return kfe_unproject(state, scaled);
}

}  // namespace

PrecondKind precond_kind_from_string(const std::string& s) {
  if (s == "sgd") return PrecondKind::sgd;
  if (s == "sgd-momentum") return PrecondKind::sgd_momentum;
  if (s == "adam") return PrecondKind::adam;
  if (s == "diagonal") return PrecondKind::diagonal;
  if (s == "kfac") return PrecondKind::kfac;
  if (s == "ekfac") return PrecondKind::ekfac;
  if (s == "ekfac-ra") return PrecondKind::ekfac_ra;
  if (s == "exact-fisher") return PrecondKind::exact_fisher;
  throw ConfigError("unknown optimizer: " + s);
}

std::string to_string(PrecondKind kind) {
  switch (kind) {
    case PrecondKind::sgd: return "sgd";
    case PrecondKind::sgd_momentum: return "sgd-momentum";
    case PrecondKind::adam: return "adam";
    case PrecondKind::diagonal: return "diagonal";
    case PrecondKind::kfac: return "kfac";
    case PrecondKind::ekfac: return "ekfac";
    case PrecondKind::ekfac_ra: return "ekfac-ra";
    case PrecondKind::exact_fisher: return "exact-fisher";
  }
  return "?";
}

void PrecondConfig::validate() const {
  check(hyper.lr > 0.0, "learning rate must be > 0");
  check(hyper.damping >= 0.0, "damping must be >= 0");
  check(hyper.refresh_every >= 1, "refresh period must be >= 1");
  check(hyper.momentum >= 0.0 && hyper.momentum < 1.0, "momentum must be in [0,1)");
  check(hyper.beta1 > 0.0 && hyper.beta1 < 1.0 && hyper.beta2 > 0.0 && hyper.beta2 < 1.0,
        "adam betas must be in (0,1)");
  check(hyper.running_decay > 0.0 && hyper.running_decay < 1.0,
        "running-average decay must be in (0,1)");
  check(hyper.factor_decay == 0.0 || (hyper.factor_decay > 0.0 && hyper.factor_decay < 1.0),
        "factor decay must be 0 (off) or in (0,1)");
}

PrecondState PrecondState::make(const PrecondConfig& config, const Network& net) {
  config.validate();
  PrecondState state;
  state.config = config;
  state.current_lr = config.hyper.lr;
  state.layers.resize(net.layer_count());
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const std::size_t p = net.params()[l].folded.size();
    auto& ls = state.layers[l];
    switch (config.kind) {
      case PrecondKind::sgd_momentum:
        ls.velocity.assign(p, 0.0);
        break;
      case PrecondKind::adam:
        ls.moment1.assign(p, 0.0);
        ls.moment2.assign(p, 0.0);
        break;
      case PrecondKind::diagonal:
        ls.sigma_sq.assign(p, 0.0);
        break;
      case PrecondKind::exact_fisher:
        if (p > config.hyper.exact_limit) {
          throw ResourceError("exact-fisher: layer " + std::to_string(l) + " has " +
                              std::to_string(p) + " parameters, over the oracle limit " +
                              std::to_string(config.hyper.exact_limit));
        }
        break;
      default:
        break;
    }
  }
  return state;
}

Vector precondition_kfac(const KfeState& state, std::span<const double> mean_grad, double eps,
                         bool factored_damping) {
  if (!state.has_basis()) throw StateError("precondition_kfac: basis not computed");
  const std::size_t da = state.s_a.size();
  const std::size_t db = state.s_b.size();
  Vector denom(da * db);
  if (factored_damping) {
    const double shift = std::sqrt(eps);
    for (std::size_t j = 0; j < da; ++j) {
      for (std::size_t k = 0; k < db; ++k) {
        denom[j * db + k] = (state.s_a[j] + shift) * (state.s_b[k] + shift);
      }
    }
    eps = 0.0;
  } else {
    denom = kfac_scalings(state);
  }
  for (double v : denom) {
    if (v + eps <= 0.0) {
      throw NumericError("precondition_kfac: non-positive damped eigenvalue");
    }
  }
  return rescale_in_kfe(state, mean_grad, denom, eps);
}

Vector precondition_ekfac(const KfeState& state, std::span<const double> mean_grad, double eps) {
  if (!state.has_basis()) throw StateError("precondition_ekfac: basis not computed");
  if (state.s_star.size() != state.dim()) {
    throw StateError("precondition_ekfac: s* not computed for this basis");
  }
  for (double v : state.s_star) {
    if (v + eps <= 0.0) {
      throw NumericError("precondition_ekfac: non-positive damped scaling s*+eps");
    }
  }
  return rescale_in_kfe(state, mean_grad, state.s_star, eps);
}

Vector precondition_diagonal(std::span<const double> sigma_sq, std::span<const double> mean_grad,
                             double eps) {
  check(sigma_sq.size() == mean_grad.size(), "precondition_diagonal: length mismatch");
  Vector out(mean_grad.size());
  kernels::div_shift(mean_grad.data(), sigma_sq.data(), eps, out.data(), out.size());
  return out;
}

Vector precondition_exact(const DenseMatrix& g_block, std::span<const double> mean_grad,
                          double eps) {
  check(g_block.rows() == g_block.cols() && g_block.rows() == mean_grad.size(),
        "precondition_exact: shape mismatch");
  DenseMatrix damped = g_block;
  add_to_diagonal(damped, eps);
  return chol_solve_spd(damped, mean_grad);
}

StepMetrics step(Network& net, PrecondState& state, const DenseMatrix& inputs,
                 const DenseMatrix& targets, BackwardResult* back_out) {
  const PrecondConfig& cfg = state.config;
  const PrecondHyper& hp = cfg.hyper;
  StepMetrics metrics;
  metrics.iteration = state.iteration;

  auto t0 = Clock::now();
  ForwardCache cache = forward(net, inputs);
  metrics.t_forward = seconds_since(t0);

  t0 = Clock::now();
  BackwardResult back = backward(net, cache, targets);
  metrics.t_backward = seconds_since(t0);
  metrics.loss = back.loss;

  const bool refresh_due = cfg.uses_kfe() && state.iteration % hp.refresh_every == 0;

  if (refresh_due) {
    t0 = Clock::now();
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      auto& ls = state.layers[l];
      KroneckerFactors fresh = estimate_factors(back.records[l]);
      if (hp.factor_decay > 0.0 && !ls.factors.a.empty()) {
        blend_factors(ls.factors, fresh, hp.factor_decay);
      } else {
        ls.factors = std::move(fresh);
      }
      refresh_basis(ls.kfe, ls.factors, state.iteration);
    }
    metrics.t_refresh = seconds_since(t0);
    metrics.basis_refreshed = true;
  }

  // scaling phase: cheap per-iteration statistics updates
  t0 = Clock::now();
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    auto& ls = state.layers[l];
    switch (cfg.kind) {
      case PrecondKind::ekfac:
        ls.kfe.s_star = compute_s_star_from_record(ls.kfe, back.records[l]);
        ls.kfe.s_star_initialized = true;
        break;
      case PrecondKind::ekfac_ra:
        if (hp.ra_per_example) {
          Vector intra = compute_s_star_from_record(ls.kfe, back.records[l]);
          if (!ls.kfe.s_star_initialized || ls.kfe.s_star.size() != intra.size()) {
            ls.kfe.s_star = std::move(intra);
            ls.kfe.s_star_initialized = true;
          } else {
            kernels::ema(ls.kfe.s_star.data(), intra.data(), hp.running_decay, intra.size());
          }
        } else {
          update_s_star_running(ls.kfe, back.mean_grads[l].entries(), hp.running_decay);
        }
        break;
      case PrecondKind::diagonal: {
        const Vector& g = back.mean_grads[l].entries();
        if (!ls.sigma_initialized) {
          kernels::square(g.data(), ls.sigma_sq.data(), g.size());
          ls.sigma_initialized = true;
        } else {
          kernels::ema_sq(ls.sigma_sq.data(), g.data(), hp.running_decay, g.size());
        }
        break;
      }
      case PrecondKind::exact_fisher: {
        auto grads = per_example_gradients(back.records[l]);
        ls.fisher = exact_fisher_block(grads, hp.exact_limit).g;
        break;
      }
      default:
        break;
    }
  }
  metrics.t_scaling = seconds_since(t0);

  // precondition and apply the update
  t0 = Clock::now();
  if (cfg.kind == PrecondKind::adam) ++state.adam_steps;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    auto& ls = state.layers[l];
    const Vector& g = back.mean_grads[l].entries();
    Vector update;
    switch (cfg.kind) {
      case PrecondKind::sgd:
        update = g;
        break;
      case PrecondKind::sgd_momentum: {
        kernels::scal(hp.momentum, ls.velocity.data(), ls.velocity.size());
        kernels::axpy(1.0, g.data(), ls.velocity.data(), g.size());
        update = ls.velocity;
        break;
      }
      case PrecondKind::adam: {
        kernels::ema(ls.moment1.data(), g.data(), hp.beta1, g.size());
        kernels::ema_sq(ls.moment2.data(), g.data(), hp.beta2, g.size());
        const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.adam_steps));
        const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.adam_steps));
        update.resize(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double mhat = ls.moment1[i] / c1;
          const double vhat = ls.moment2[i] / c2;
          update[i] = mhat / (std::sqrt(vhat) + hp.damping);
        }
        break;
      }
      case PrecondKind::diagonal:
        update = precondition_diagonal(ls.sigma_sq, g, hp.damping);
        break;
      case PrecondKind::kfac:
        update = precondition_kfac(ls.kfe, g, hp.damping, hp.factored_damping);
        break;
      case PrecondKind::ekfac:
      case PrecondKind::ekfac_ra:
        update = precondition_ekfac(ls.kfe, g, hp.damping);
        break;
      case PrecondKind::exact_fisher:
        update = precondition_exact(ls.fisher, g, hp.damping);
        break;
    }
    kernels::axpy(-state.current_lr, update.data(), net.params()[l].folded.data(),
                  update.size());
  }
  metrics.t_precondition = seconds_since(t0);

  ++state.iteration;
  if (back_out) *back_out = std::move(back);
  return metrics;
}

}  // namespace kfe
