#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pipetrain/tensor.hpp"

namespace pipetrain {

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Activation : std::uint8_t { Identity, Relu };

/// Dense layer: y = act(x W^T + b) over a row-major batch.
struct Layer {
  Tensor weight;  // out x in
  Tensor bias;    // out
  Activation activation = Activation::Relu;

  // momentum buffers, allocated on first use
  Tensor vel_w, vel_b;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
  std::size_t param_count() const { return weight.numel() + bias.numel(); }
  std::size_t param_bytes() const { return param_count() * sizeof(double); }
};

struct ForwardCache {
  Tensor input;  // x
  Tensor pre;    // x W^T + b
  std::size_t in_dim = 0, out_dim = 0;
};

struct LayerGrads {
  Tensor d_weight;
  Tensor d_bias;
  Tensor d_input;
};

/// Parameter delta actually applied by one optimizer step (needed to replay
/// weight trajectories).
struct AppliedUpdate {
  Tensor d_weight;
  Tensor d_bias;
};

enum class LrSchedule : std::uint8_t { Constant, Cosine };

struct SgdConfig {
  double lr = 0.1;
  double momentum = 0.0;      // in [0,1)
  double weight_decay = 0.0;  // >= 0
  LrSchedule schedule = LrSchedule::Constant;
  int t_max = 1;  // cosine horizon

  double alpha_at(int t) const;
  void check() const;
};

Tensor forward(const Layer& layer, const Tensor& x, ForwardCache* cache);
LayerGrads backward(const Layer& layer, const ForwardCache& cache, const Tensor& d_out);

/// Numerically stabilized softmax cross entropy, mean over the batch.
/// d_logits = (softmax - onehot) / batch.
std::pair<double, Tensor> softmax_ce(const Tensor& logits, const std::vector<int>& labels);

/// One SGD step with optional momentum and weight decay; plain SGD reduces to
/// W <- W - alpha(t) * G. Returns the applied parameter delta. Throws
/// TrainingDiverged on non-finite updates.
AppliedUpdate sgd_step(Layer& layer, const LayerGrads& grads, SgdConfig& cfg, int t);

// ---------------------------------------------------------------------------

struct Model {
  std::vector<Layer> layers;

  int num_layers() const { return static_cast<int>(layers.size()); }
  std::size_t param_bytes() const;
};

/// MLP with the given layer sizes (sizes.size()-1 dense layers, ReLU hidden,
/// identity output). Deterministic init from the seed.
Model make_mlp(const std::vector<std::size_t>& sizes, std::uint64_t seed);

Tensor model_forward(const Model& m, const Tensor& x, std::vector<ForwardCache>* caches);

/// Flat little-endian parameter blob plus a JSON shape manifest; round-trips
/// bit-exactly.
void save_checkpoint(const Model& m, const std::string& data_path, const std::string& manifest_path);
Model load_checkpoint(const std::string& data_path, const std::string& manifest_path);

/// Raw parameter bytes in layer order, for bit-level trajectory comparison.
std::vector<std::uint8_t> model_param_bytes(const Model& m);

}  // namespace pipetrain
