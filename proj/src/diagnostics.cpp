#include "kfe/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "kfe/error.hpp"
#include "kfe/kernels.hpp"
#include "kfe/kronecker.hpp"
#include "kfe/rng.hpp"

namespace kfe {

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

}  // namespace

FrobeniusErrors frobenius_errors(std::span<const Vector> per_example_grads,
                                 const KroneckerFactors& factors, const KfeState& state,
                                 std::size_t limit) {
  const DenseMatrix g = exact_fisher_block(per_example_grads, limit).g;
  const std::size_t p = g.rows();
  check(state.has_basis() && state.dim() == p, "frobenius_errors: state does not match block");
  check(state.s_star.size() == p, "frobenius_errors: s* not computed");

  FrobeniusErrors out;
  out.err_kfac = frobenius_norm(subtract(g, kronecker_product(factors.a, factors.b, limit)));
  // ||G - Q diag(s*) Q^T||_F = ||Q^T G Q - diag(s*)||_F for orthogonal Q
  const DenseMatrix q = kronecker_product(state.u_a, state.u_b, limit);
  DenseMatrix m = matmul_tn(q, matmul(g, q));
  for (std::size_t i = 0; i < p; ++i) m(i, i) -= state.s_star[i];
  out.err_ekfac = frobenius_norm(m);
  return out;
}

double spectrum_distance(std::span<const double> a, std::span<const double> b) {
  check(a.size() == b.size(), "spectrum_distance: length mismatch");
  Vector sa(a.begin(), a.end());
  Vector sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end(), std::greater<double>());
  std::sort(sb.begin(), sb.end(), std::greater<double>());
  double s = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    const double d = sa[i] - sb[i];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {

// Observer implementing the fixed-basis tracking protocol.
class SpectrumTraceObserver : public TrainObserver {
 public:
  SpectrumTraceObserver(const TrainConfig& config, const SpectrumTraceConfig& trace,
                        const Dataset& pool)
      : config_(config),
        trace_(trace),
        pool_(pool),
        trace_rng_(config.seed ^ 0xA5A5A5A55A5A5A5AULL) {}

  std::vector<SpectrumPoint> take_points() { return std::move(points_); }

  void on_step(long iteration, long /*epoch*/, const Network& net, const PrecondState& /*state*/,
               const BackwardResult& back, const StepMetrics& /*metrics*/) override {
    const LayerBatchRecord& record = back.records[trace_.layer_index];
    if (iteration == 0) {
      KroneckerFactors f0 = estimate_factors(record);
      refresh_basis(fixed_, f0, 0);
      kfac_scalings_ = kfac_scalings(fixed_);
    } else if (iteration % config_.precond.hyper.refresh_every == 0) {
      // KFAC re-estimates factors and eigenvalues on its schedule; the
      // tracking basis itself stays fixed.
      KroneckerFactors f = estimate_factors(record);
      KfeState refreshed;
      refresh_basis(refreshed, f, iteration);
      kfac_scalings_ = kfac_scalings(refreshed);
    }
    // running-average s* updates every iteration in the fixed basis
    update_s_star_running(fixed_, back.mean_grads[trace_.layer_index].entries(),
                          config_.precond.hyper.running_decay);

    if (iteration % trace_.stride == 0) {
      points_.push_back(checkpoint(iteration, net, record));
    }
  }

 private:
  SpectrumPoint checkpoint(long iteration, const Network& net, const LayerBatchRecord& record) {
    // exact G from a fresh trace batch at the current parameters
    const std::size_t n = std::min(trace_.trace_batch, pool_.size());
    DenseMatrix batch(n, pool_.dim());
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t src = static_cast<std::size_t>(trace_rng_.next_below(pool_.size()));
      std::copy(pool_.examples.data() + src * pool_.dim(),
                pool_.examples.data() + (src + 1) * pool_.dim(),
                batch.data() + r * pool_.dim());
    }
    ForwardCache cache = forward(net, batch);
    BackwardResult back = backward(net, cache, batch);
    const auto grads = per_example_gradients(back.records[trace_.layer_index]);
    const DenseMatrix g = exact_fisher_block(grads, trace_.exact_limit).g;
    Vector exact = sym_eigenvalues(g);

    Vector intra = compute_s_star_from_record(fixed_, record);
    SpectrumPoint pt;
    pt.iteration = iteration;
    pt.dist_kfac = spectrum_distance(exact, kfac_scalings_);
    pt.dist_ekfac_intrabatch = spectrum_distance(exact, intra);
    pt.dist_ekfac_ra = spectrum_distance(exact, fixed_.s_star);
    return pt;
  }

  const TrainConfig& config_;
  const SpectrumTraceConfig& trace_;
  const Dataset& pool_;
  Rng trace_rng_;
  KfeState fixed_;          // basis computed once at the start
  Vector kfac_scalings_;    // eigenvalue products, refreshed on schedule
  std::vector<SpectrumPoint> points_;
};

}  // namespace

std::vector<SpectrumPoint> run_spectrum_trace(const TrainConfig& config,
                                              const SpectrumTraceConfig& trace) {
  config.check();
  check(trace.layer_index + 1 < config.architecture.size(),
        "run_spectrum_trace: layer index out of range");
  const std::size_t p = (config.architecture[trace.layer_index] + 1) *
                        config.architecture[trace.layer_index + 1];
  if (p > trace.exact_limit) {
    throw ResourceError("run_spectrum_trace: tracked block has " + std::to_string(p) +
                        " parameters, over the limit " + std::to_string(trace.exact_limit));
  }
  check(trace.stride >= 1, "run_spectrum_trace: stride must be >= 1");
  Dataset pool = load_dataset(config);
  SpectrumTraceObserver observer(config, trace, pool);
  run_training(config, &observer);
  auto points = observer.take_points();
  if (!trace.out_csv.empty()) write_spectrum_csv(trace.out_csv, points, trace);
  return points;
}

void write_spectrum_csv(const std::string& path, std::span<const SpectrumPoint> points,
                        const SpectrumTraceConfig& trace) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot open spectrum csv: " + path);
  out << "# spectra=raw_sorted_descending trace_batch=" << trace.trace_batch
      << " stride=" << trace.stride << " layer=" << trace.layer_index << "\n";
  out << "iteration,dist_kfac,dist_ekfac_intrabatch,dist_ekfac_ra\n";
  for (const auto& pt : points) {
    out << pt.iteration << "," << pt.dist_kfac << "," << pt.dist_ekfac_intrabatch << ","
        << pt.dist_ekfac_ra << "\n";
  }
}

namespace {

// Correlation of the columns of x (one row per example). Zero-variance
// columns get unit diagonal and zero off-diagonals.
DenseMatrix column_correlation(const DenseMatrix& x) {
  const std::size_t n = x.rows();
  const std::size_t k = x.cols();
  DenseMatrix centered = x;
  Vector mean(k, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    kernels::axpy(1.0, x.data() + r * k, mean.data(), k);
  }
  kernels::scal(1.0 / static_cast<double>(n), mean.data(), k);
  for (std::size_t r = 0; r < n; ++r) {
    kernels::axpy(-1.0, mean.data(), centered.data() + r * k, k);
  }
  DenseMatrix cov(k, k);
  kernels::gemm_tn(k, k, n, 1.0 / static_cast<double>(n), centered.data(), k, centered.data(), k,
                   0.0, cov.data(), k);
  double max_var = 0.0;
  for (std::size_t i = 0; i < k; ++i) max_var = std::max(max_var, cov(i, i));
  const double var_floor = std::max(1e-30, 1e-24 * max_var);
  DenseMatrix corr(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    const bool zi = cov(i, i) <= var_floor;
    corr(i, i) = 1.0;
    for (std::size_t j = i + 1; j < k; ++j) {
      const bool zj = cov(j, j) <= var_floor;
      double c = 0.0;
      if (!zi && !zj) {
        c = cov(i, j) / std::sqrt(cov(i, i) * cov(j, j));
        c = std::clamp(c, -1.0, 1.0);
      }
      corr(i, j) = c;
      corr(j, i) = c;
    }
  }
  return corr;
}

double offdiag_mean_abs(const DenseMatrix& m) {
  const std::size_t k = m.rows();
  if (k < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i != j) s += std::fabs(m(i, j));
    }
  }
  return s / static_cast<double>(k * k - k);
}

}  // namespace

CorrelationReport correlation_report(std::span<const Vector> per_example_grads,
                                     const KfeState& state,
                                     std::span<const std::size_t> subset) {
  check(per_example_grads.size() >= 2, "correlation_report: need at least 2 examples");
  check(!subset.empty() && subset.size() <= kMaxCorrelationSubset,
        "correlation_report: subset size must be in [1, " +
            std::to_string(kMaxCorrelationSubset) + "]");
  const std::size_t p = per_example_grads.front().size();
  check(state.has_basis() && state.dim() == p, "correlation_report: state does not match block");
  for (std::size_t idx : subset) {
    check(idx < p, "correlation_report: subset index out of range");
  }
  const std::size_t n = per_example_grads.size();
  const std::size_t k = subset.size();
  DenseMatrix raw(n, k);
  DenseMatrix projected(n, k);
  for (std::size_t e = 0; e < n; ++e) {
    const Vector& g = per_example_grads[e];
    check(g.size() == p, "correlation_report: ragged gradient list");
    const Vector proj = kfe_project(state, g);
    for (std::size_t c = 0; c < k; ++c) {
      raw(e, c) = g[subset[c]];
      projected(e, c) = proj[subset[c]];
    }
  }
  CorrelationReport report;
  report.param_corr = column_correlation(raw);
  report.kfe_corr = column_correlation(projected);
  report.offdiag_mean_param = offdiag_mean_abs(report.param_corr);
  report.offdiag_mean_kfe = offdiag_mean_abs(report.kfe_corr);
  return report;
}

std::vector<std::size_t> evenly_spaced_subset(std::size_t dim, std::size_t count) {
  check(count >= 1 && count <= dim, "evenly_spaced_subset: bad count");
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) {
    idx[i] = i * dim / count;
  }
  return idx;
}

}  // namespace kfe
