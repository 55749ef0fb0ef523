#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pipetrain/tensor.hpp"

namespace pipetrain {

struct Dataset {
  Tensor train_x, test_x;  // rows = samples
  std::vector<int> train_y, test_y;
  int num_classes = 0;

  std::size_t feature_dim() const { return train_x.cols(); }
};

/// Deterministic 2-D spiral classification set, shuffled and split 80/20.
Dataset generate_spiral(int classes, int samples, double noise, std::uint64_t seed);

/// Gaussian blobs around class centers on a circle; linearly separable for
/// small noise.
Dataset generate_blobs(int classes, int samples, double noise, std::uint64_t seed);

struct IdxError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// IDX image/label pair (magic 0x803 / 0x801, big-endian dims). Pixel values
/// are scaled to [0,1] and returned unsplit in the train slot. Throws IdxError
/// on a bad magic number, a truncated file (reporting the byte offset) or an
/// image/label count mismatch.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace pipetrain
