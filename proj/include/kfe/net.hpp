#pragma once

#include <cstdint>
#include <vector>

#include "kfe/matrix.hpp"

namespace kfe {

enum class Activation { sigmoid, relu, identity };
enum class LossKind { mse, bce };

struct LayerSpec {
  std::size_t d_in = 0;
  std::size_t d_out = 0;
  Activation activation = Activation::sigmoid;
};

// Layer parameters with the bias folded into the weight matrix through a
// homogeneous input coordinate: `folded` has d_in + 1 rows, the last row is
// the bias. Curvature statistics then cover weights and bias uniformly.
struct LayerParams {
  DenseMatrix folded;  // (d_in + 1) x d_out

  double weight(std::size_t i, std::size_t j) const { return folded(i, j); }
  double bias(std::size_t j) const { return folded(folded.rows() - 1, j); }
};

// Per-layer capture of one minibatch: layer inputs (with homogeneous 1
// appended) and backpropagated pre-activation gradients, one row per
// example. Immutable snapshot once produced by backward().
struct LayerBatchRecord {
  DenseMatrix inputs_h;  // batch_size x (d_in + 1)
  DenseMatrix deltas;    // batch_size x d_out
  std::size_t batch_size = 0;
};

class Network {
 public:
  Network(std::vector<LayerSpec> specs, std::vector<LayerParams> params, LossKind loss);

  // Fresh network with weights uniform in +-1/sqrt(d_in) and zero biases,
  // deterministic per seed.
  static Network make(const std::vector<LayerSpec>& specs, LossKind loss, std::uint64_t seed);

  const std::vector<LayerSpec>& specs() const { return specs_; }
  std::vector<LayerParams>& params() { return params_; }
  const std::vector<LayerParams>& params() const { return params_; }
  LossKind loss() const { return loss_; }
  std::size_t layer_count() const { return specs_.size(); }
  std::size_t input_dim() const { return specs_.front().d_in; }
  std::size_t output_dim() const { return specs_.back().d_out; }
  std::size_t parameter_count() const;

 private:
  std::vector<LayerSpec> specs_;
  std::vector<LayerParams> params_;
  LossKind loss_;
};

struct ForwardCache {
  std::vector<DenseMatrix> inputs_aug;  // per layer: batch x (d_in + 1)
  std::vector<DenseMatrix> preacts;     // per layer: batch x d_out
  DenseMatrix output;                   // batch x d_out of last layer
};

struct BackwardResult {
  std::vector<LayerBatchRecord> records;
  std::vector<DenseMatrix> mean_grads;  // per layer: (d_in + 1) x d_out
  double loss = 0.0;
};

// Forward pass over a batch (one example per row), caching every layer's
// augmented input and pre-activation.
ForwardCache forward(const Network& net, const DenseMatrix& batch);

// Backprop from a cache produced by forward() on the same parameters.
// Per-example parameter gradients are the outer products inputs_h^T deltas;
// mean_grads averages them over the batch.
BackwardResult backward(const Network& net, const ForwardCache& cache,
                        const DenseMatrix& targets);

// Loss only (no capture).
double compute_loss(const Network& net, const DenseMatrix& batch, const DenseMatrix& targets);

// Flattened per-example parameter gradients vec(h delta^T), one vector of
// length (d_in+1)*d_out per example, under the project vec convention.
std::vector<Vector> per_example_gradients(const LayerBatchRecord& record);

double activation_apply(Activation a, double x);

}  // namespace kfe
