#include "kfe/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "kfe/error.hpp"
#include "kfe/rng.hpp"

namespace kfe {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be_u32(std::ifstream& in, std::size_t& offset, const std::string& what) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (in.gcount() != 4) throw FormatError("truncated while reading " + what, offset);
  offset += 4;
  return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
         (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

}  // namespace

Dataset load_mnist_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream in(images_path, std::ios::binary);
  if (!in) throw FormatError("cannot open images file: " + images_path, 0);
  std::size_t offset = 0;
  const std::uint32_t magic = read_be_u32(in, offset, "images magic");
  if (magic != kImagesMagic) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "0x%08x", magic);
    throw FormatError(std::string("bad images magic ") + buf, 0);
  }
  const std::uint32_t count = read_be_u32(in, offset, "image count");
  const std::uint32_t rows = read_be_u32(in, offset, "image rows");
  const std::uint32_t cols = read_be_u32(in, offset, "image cols");
  if (count == 0 || rows == 0 || cols == 0) {
    throw FormatError("image header has zero dimension", 4);
  }
  const std::size_t dim = std::size_t(rows) * cols;
  Dataset ds;
  ds.examples = DenseMatrix(count, dim);
  std::vector<unsigned char> pixel_row(dim);
  for (std::uint32_t i = 0; i < count; ++i) {
    in.read(reinterpret_cast<char*>(pixel_row.data()), static_cast<std::streamsize>(dim));
    if (in.gcount() != static_cast<std::streamsize>(dim)) {
      throw FormatError("image payload shorter than header count", offset);
    }
    double* dst = ds.examples.data() + std::size_t(i) * dim;
    for (std::size_t j = 0; j < dim; ++j) dst[j] = pixel_row[j] / 255.0;
    offset += dim;
  }
  if (in.peek() != std::ifstream::traits_type::eof()) {
    throw FormatError("image payload longer than header count", offset);
  }

  if (!labels_path.empty()) {
    std::ifstream lin(labels_path, std::ios::binary);
    if (!lin) throw FormatError("cannot open labels file: " + labels_path, 0);
    std::size_t loffset = 0;
    const std::uint32_t lmagic = read_be_u32(lin, loffset, "labels magic");
    if (lmagic != kLabelsMagic) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "0x%08x", lmagic);
      throw FormatError(std::string("bad labels magic ") + buf, 0);
    }
    const std::uint32_t lcount = read_be_u32(lin, loffset, "label count");
    if (lcount != count) {
      throw FormatError("label count " + std::to_string(lcount) + " != image count " +
                            std::to_string(count),
                        4);
    }
    ds.labels.resize(lcount);
    lin.read(reinterpret_cast<char*>(ds.labels.data()), lcount);
    if (lin.gcount() != static_cast<std::streamsize>(lcount)) {
      throw FormatError("label payload shorter than header count", loffset);
    }
  }
  return ds;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.latent_dim > spec.dim) {
    throw ContractViolation("generate_synthetic: latent_dim > dim");
  }
  if (spec.n == 0 || spec.dim == 0 || spec.latent_dim == 0) {
    throw ContractViolation("generate_synthetic: n, dim, latent_dim must be >= 1");
  }
  Rng rng(spec.seed);
  DenseMatrix latents(spec.n, spec.latent_dim);
  for (std::size_t i = 0; i < latents.size(); ++i) {
    latents.data()[i] = rng.next_uniform(-1.0, 1.0);
  }
  DenseMatrix mixing(spec.latent_dim, spec.dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
  for (std::size_t i = 0; i < mixing.size(); ++i) {
    mixing.data()[i] = scale * rng.next_uniform(-1.0, 1.0);
  }
  Dataset ds;
  ds.examples = synthetic_examples(latents, mixing);
  return ds;
}

DenseMatrix synthetic_examples(const DenseMatrix& latents, const DenseMatrix& mixing) {
  DenseMatrix z = matmul(latents, mixing);
  for (std::size_t i = 0; i < z.size(); ++i) {
    z.data()[i] = 1.0 / (1.0 + std::exp(-z.data()[i]));
  }
  return z;
}

}  // namespace kfe
