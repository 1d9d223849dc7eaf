#include "kfe/net.hpp"

#include <cmath>
#include <string>

#include "kfe/error.hpp"
#include "kfe/kernels.hpp"
#include "kfe/rng.hpp"

namespace kfe {

namespace {

constexpr double kBceClamp = 1e-12;

void check(bool cond, const std::string& msg) {
  if (!cond) throw ContractViolation(msg);
}

double activation_derivative(Activation a, double pre, double post) {
  switch (a) {
    case Activation::sigmoid:
      return post * (1.0 - post);
    case Activation::relu:
      return pre > 0.0 ? 1.0 : 0.0;  // subgradient at 0 is 0
    case Activation::identity:
      return 1.0;
  }
  return 0.0;
}

// batch x d_in -> batch x (d_in + 1) with trailing 1s.
DenseMatrix augment(const DenseMatrix& h) {
  DenseMatrix out(h.rows(), h.cols() + 1);
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double* dst = out.data() + i * out.cols();
    const double* src = h.data() + i * h.cols();
    for (std::size_t j = 0; j < h.cols(); ++j) dst[j] = src[j];
    dst[h.cols()] = 1.0;
  }
  return out;
}

}  // namespace

double activation_apply(Activation a, double x) {
  switch (a) {
    case Activation::sigmoid:
      return 1.0 / (1.0 + std::exp(-x));
    case Activation::relu:
      return x > 0.0 ? x : 0.0;
    case Activation::identity:
      return x;
  }
  return x;
}

Network::Network(std::vector<LayerSpec> specs, std::vector<LayerParams> params, LossKind loss)
    : specs_(std::move(specs)), params_(std::move(params)), loss_(loss) {
  check(!specs_.empty(), "Network: at least one layer required");
  check(specs_.size() == params_.size(), "Network: specs/params count mismatch");
  for (std::size_t l = 0; l < specs_.size(); ++l) {
    const auto& s = specs_[l];
    check(s.d_in >= 1 && s.d_out >= 1, "Network: layer dims must be >= 1");
    check(params_[l].folded.rows() == s.d_in + 1 && params_[l].folded.cols() == s.d_out,
          "Network: parameter shape mismatch at layer " + std::to_string(l));
    if (l + 1 < specs_.size()) {
      check(specs_[l + 1].d_in == s.d_out,
            "Network: dimension chain broken between layers " + std::to_string(l) + " and " +
                std::to_string(l + 1));
    }
  }
}

Network Network::make(const std::vector<LayerSpec>& specs, LossKind loss, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LayerParams> params;
  params.reserve(specs.size());
  for (const auto& s : specs) {
    DenseMatrix folded(s.d_in + 1, s.d_out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(s.d_in));
    for (std::size_t i = 0; i < s.d_in; ++i) {
      for (std::size_t j = 0; j < s.d_out; ++j) folded(i, j) = rng.next_uniform(-bound, bound);
    }
    // bias row stays zero
    params.push_back(LayerParams{std::move(folded)});
  }
  return Network(specs, std::move(params), loss);
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.folded.size();
  return n;
}

ForwardCache forward(const Network& net, const DenseMatrix& batch) {
  check(!batch.empty(), "forward: empty batch");
  check(batch.cols() == net.input_dim(),
        "forward: batch feature dim " + std::to_string(batch.cols()) + " != first layer d_in " +
            std::to_string(net.input_dim()));
  const std::size_t n = batch.rows();
  ForwardCache cache;
  cache.inputs_aug.reserve(net.layer_count());
  cache.preacts.reserve(net.layer_count());
  DenseMatrix h = batch;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto& spec = net.specs()[l];
    const auto& w = net.params()[l].folded;
    DenseMatrix haug = augment(h);
    DenseMatrix pre(n, spec.d_out);
    kernels::gemm_nn(n, spec.d_out, spec.d_in + 1, 1.0, haug.data(), haug.cols(), w.data(),
                     w.cols(), 0.0, pre.data(), pre.cols());
    DenseMatrix post(n, spec.d_out);
    for (std::size_t i = 0; i < pre.size(); ++i) {
      post.data()[i] = activation_apply(spec.activation, pre.data()[i]);
    }
    cache.inputs_aug.push_back(std::move(haug));
    cache.preacts.push_back(std::move(pre));
    h = std::move(post);
  }
  if (!h.all_finite()) throw NumericError("forward: non-finite activations");
  cache.output = std::move(h);
  return cache;
}

BackwardResult backward(const Network& net, const ForwardCache& cache,
                        const DenseMatrix& targets) {
  const std::size_t layers = net.layer_count();
  check(cache.inputs_aug.size() == layers, "backward: cache does not match network");
  const std::size_t n = cache.output.rows();
  check(targets.rows() == n && targets.cols() == net.output_dim(),
        "backward: target shape mismatch");

  const LossKind loss = net.loss();
  const DenseMatrix& y = cache.output;
  double loss_sum = 0.0;
  // delta of the last layer: dloss/dy times activation derivative
  DenseMatrix delta(n, net.output_dim());
  const Activation out_act = net.specs().back().activation;
  const DenseMatrix& out_pre = cache.preacts.back();
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double yi = y.data()[i];
    const double ti = targets.data()[i];
    if (loss == LossKind::mse) {
      const double d = yi - ti;
      loss_sum += 0.5 * d * d;
      delta.data()[i] = d * activation_derivative(out_act, out_pre.data()[i], yi);
    } else {
      const double yc = std::min(std::max(yi, kBceClamp), 1.0 - kBceClamp);
      loss_sum += -(ti * std::log(yc) + (1.0 - ti) * std::log(1.0 - yc));
      if (out_act == Activation::sigmoid) {
        delta.data()[i] = yi - ti;  // canonical sigmoid/BCE pairing
      } else {
        const double dldy = (yc - ti) / (yc * (1.0 - yc));
        delta.data()[i] = dldy * activation_derivative(out_act, out_pre.data()[i], yi);
      }
    }
  }

  BackwardResult result;
  result.loss = loss_sum / static_cast<double>(n);
  result.records.resize(layers);
  result.mean_grads.resize(layers);
  const double inv_n = 1.0 / static_cast<double>(n);

  for (std::size_t li = layers; li-- > 0;) {
    const auto& spec = net.specs()[li];
    const DenseMatrix& haug = cache.inputs_aug[li];
    DenseMatrix grad(spec.d_in + 1, spec.d_out);
    kernels::gemm_tn(spec.d_in + 1, spec.d_out, n, inv_n, haug.data(), haug.cols(), delta.data(),
                     delta.cols(), 0.0, grad.data(), grad.cols());
    result.mean_grads[li] = std::move(grad);
    DenseMatrix next_delta;
    if (li > 0) {
      // dloss/dh = delta * W^T, excluding the bias row of the folded matrix
      const auto& w = net.params()[li].folded;
      next_delta = DenseMatrix(n, spec.d_in);
      kernels::gemm_nt(n, spec.d_in, spec.d_out, 1.0, delta.data(), delta.cols(), w.data(),
                       w.cols(), 0.0, next_delta.data(), next_delta.cols());
      const auto& prev_spec = net.specs()[li - 1];
      const DenseMatrix& prev_pre = cache.preacts[li - 1];
      const DenseMatrix& prev_post_aug = cache.inputs_aug[li];  // activations of layer li-1
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < spec.d_in; ++c) {
          const double post = prev_post_aug(r, c);
          next_delta(r, c) *=
              activation_derivative(prev_spec.activation, prev_pre(r, c), post);
        }
      }
    }
    result.records[li] = LayerBatchRecord{haug, std::move(delta), n};
    if (li > 0) delta = std::move(next_delta);
  }
  return result;
}

double compute_loss(const Network& net, const DenseMatrix& batch, const DenseMatrix& targets) {
  ForwardCache cache = forward(net, batch);
  check(targets.rows() == cache.output.rows() && targets.cols() == cache.output.cols(),
        "compute_loss: target shape mismatch");
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < cache.output.size(); ++i) {
    const double yi = cache.output.data()[i];
    const double ti = targets.data()[i];
    if (net.loss() == LossKind::mse) {
      loss_sum += 0.5 * (yi - ti) * (yi - ti);
    } else {
      const double yc = std::min(std::max(yi, kBceClamp), 1.0 - kBceClamp);
      loss_sum += -(ti * std::log(yc) + (1.0 - ti) * std::log(1.0 - yc));
    }
  }
  return loss_sum / static_cast<double>(cache.output.rows());
}

std::vector<Vector> per_example_gradients(const LayerBatchRecord& record) {
  check(record.batch_size >= 1 && record.inputs_h.rows() == record.batch_size &&
            record.deltas.rows() == record.batch_size,
        "per_example_gradients: invalid record");
  const std::size_t din1 = record.inputs_h.cols();
  const std::size_t dout = record.deltas.cols();
  std::vector<Vector> grads(record.batch_size);
  for (std::size_t e = 0; e < record.batch_size; ++e) {
    Vector g(din1 * dout);
    const double* h = record.inputs_h.data() + e * din1;
    const double* d = record.deltas.data() + e * dout;
    for (std::size_t i = 0; i < din1; ++i) {
      double* dst = g.data() + i * dout;
      for (std::size_t j = 0; j < dout; ++j) dst[j] = h[i] * d[j];
    }
    grads[e] = std::move(g);
  }
  return grads;
}

}  // namespace kfe
