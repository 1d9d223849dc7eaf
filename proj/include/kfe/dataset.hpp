#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kfe/matrix.hpp"

namespace kfe {

struct Dataset {
  DenseMatrix examples;               // n x dim, values in [0, 1]
  std::vector<std::uint8_t> labels;   // may be empty when unavailable

  std::size_t size() const { return examples.rows(); }
  std::size_t dim() const { return examples.cols(); }
};

// IDX-format MNIST reader (big-endian headers; magic 0x803 for images,
// 0x801 for labels). Pixels are scaled to [0, 1]. labels_path may be empty.
Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path);

struct SyntheticSpec {
  std::size_t n = 5000;
  std::size_t dim = 784;
  std::size_t latent_dim = 16;
  std::uint64_t seed = 1;
};

// Deterministic low-rank dataset: examples = sigmoid(latent * mixing).
// Latents are uniform in [-1, 1]; the mixing matrix is scaled by
// 1/sqrt(latent_dim) so pre-activations stay in sigmoid's near-linear
// range and the example matrix keeps an effective rank close to latent_dim.
Dataset generate_synthetic(const SyntheticSpec& spec);

// Building block of generate_synthetic: sigmoid(latents * mixing).
DenseMatrix synthetic_examples(const DenseMatrix& latents, const DenseMatrix& mixing);

}  // namespace kfe
