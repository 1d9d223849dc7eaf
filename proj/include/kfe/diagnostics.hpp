#pragma once

#include <span>
#include <string>
#include <vector>

#include "kfe/curvature.hpp"
#include "kfe/matrix.hpp"
#include "kfe/trainer.hpp"

namespace kfe {

// Frobenius-norm approximation errors of one layer block:
//   err_kfac  = ||G - a (x) b||_F
//   err_ekfac = ||G - (u_a (x) u_b) diag(s*) (u_a (x) u_b)^T||_F
// with G the empirical Fisher of the given gradients and s* taken from the
// state. When s* is the intrabatch estimate over the same gradients,
// err_ekfac <= err_kfac.
struct FrobeniusErrors {
  double err_kfac = 0.0;
  double err_ekfac = 0.0;
};

FrobeniusErrors frobenius_errors(std::span<const Vector> per_example_grads,
                                 const KroneckerFactors& factors, const KfeState& state,
                                 std::size_t limit = kDefaultExactFisherLimit);

// l2 distance between descending-sorted spectra.
double spectrum_distance(std::span<const double> a, std::span<const double> b);

// One tracked checkpoint: distances between the exact block spectrum and
// the diagonal scalings of the approximations.
struct SpectrumPoint {
  long iteration = 0;
  double dist_kfac = 0.0;
  double dist_ekfac_intrabatch = 0.0;
  double dist_ekfac_ra = 0.0;
};

struct SpectrumTraceConfig {
  std::size_t layer_index = 2;   // tracked layer (0-based)
  long stride = 25;              // checkpoint every `stride` iterations
  std::size_t trace_batch = 500; // batch used to estimate the exact G
  std::size_t exact_limit = 16384;
  std::string out_csv;           // empty = no file output
};

// Trains per `config` while tracking the given layer: the KFE is computed
// once on the first batch and kept fixed; the KFAC eigenvalue products
// refresh on the optimizer's schedule, the intrabatch s* is evaluated at
// checkpoints, and the running-average s* updates every iteration in the
// fixed basis. At each checkpoint the exact block Fisher of a fresh trace
// batch is eigendecomposed and the sorted-spectrum distances are emitted.
std::vector<SpectrumPoint> run_spectrum_trace(const TrainConfig& config,
                                              const SpectrumTraceConfig& trace);

void write_spectrum_csv(const std::string& path, std::span<const SpectrumPoint> points,
                        const SpectrumTraceConfig& trace);

// Gradient-coordinate correlation matrices over a batch, in the parameter
// basis and in the KFE, restricted to a coordinate subset.
struct CorrelationReport {
  DenseMatrix param_corr;
  DenseMatrix kfe_corr;
  double offdiag_mean_param = 0.0;
  double offdiag_mean_kfe = 0.0;
};

inline constexpr std::size_t kMaxCorrelationSubset = 512;

CorrelationReport correlation_report(std::span<const Vector> per_example_grads,
                                     const KfeState& state,
                                     std::span<const std::size_t> subset);

std::vector<std::size_t> evenly_spaced_subset(std::size_t dim, std::size_t count);

}  // namespace kfe
