#include "pipetrain/nn.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace pipetrain {

double SgdConfig::alpha_at(int t) const {
  if (schedule == LrSchedule::Constant) return lr;
  if (t >= t_max) return 0.0;
  return lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(t_max)));
}

void SgdConfig::check() const {
  if (!(lr >= 0.0)) throw std::invalid_argument("SgdConfig: lr must be nonnegative");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("SgdConfig: momentum must be in [0,1)");
  if (weight_decay < 0.0) throw std::invalid_argument("SgdConfig: weight_decay must be nonnegative");
  if (schedule == LrSchedule::Cosine && t_max < 1) throw std::invalid_argument("SgdConfig: cosine needs t_max >= 1");
}

Tensor forward(const Layer& layer, const Tensor& x, ForwardCache* cache) {
  const std::size_t batch = x.rows(), in = x.cols(), out = layer.out_dim();
  if (in != layer.in_dim())
    throw std::invalid_argument("forward: input width " + std::to_string(in) + " vs layer in_dim " +
                                std::to_string(layer.in_dim()));
  Tensor pre({batch, out});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < out; ++o) {
      double acc = layer.bias.data[o];
      for (std::size_t i = 0; i < in; ++i) acc += layer.weight.at(o, i) * x.at(b, i);
      pre.at(b, o) = acc;
    }
  Tensor y = pre;
  if (layer.activation == Activation::Relu)
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  if (cache) {
    cache->input = x;
    cache->pre = pre;
    cache->in_dim = in;
    cache->out_dim = out;
  }
  return y;
}

LayerGrads backward(const Layer& layer, const ForwardCache& cache, const Tensor& d_out) {
  if (cache.in_dim != layer.in_dim() || cache.out_dim != layer.out_dim())
    throw std::invalid_argument("backward: cache does not match layer shape");
  const std::size_t batch = cache.input.rows(), in = cache.in_dim, out = cache.out_dim;
  if (d_out.rows() != batch || d_out.cols() != out)
    throw std::invalid_argument("backward: gradient shape mismatch");

  Tensor dz = d_out;
  if (layer.activation == Activation::Relu)
    for (std::size_t i = 0; i < dz.data.size(); ++i)
      if (cache.pre.data[i] <= 0.0) dz.data[i] = 0.0;

  LayerGrads g;
  g.d_weight = Tensor({out, in});
  g.d_bias = Tensor({out});
  g.d_input = Tensor({batch, in});
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i) {
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) acc += dz.at(b, o) * cache.input.at(b, i);
      g.d_weight.at(o, i) = acc;
    }
  for (std::size_t o = 0; o < out; ++o) {
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) acc += dz.at(b, o);
    g.d_bias.data[o] = acc;
  }
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < in; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) acc += dz.at(b, o) * layer.weight.at(o, i);
      g.d_input.at(b, i) = acc;
    }
  return g;
}

std::pair<double, Tensor> softmax_ce(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t batch = logits.rows(), k = logits.cols();
  if (labels.size() != batch) throw std::invalid_argument("softmax_ce: label count mismatch");
  Tensor d({batch, k});
  double loss = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= k)
      throw std::out_of_range("softmax_ce: label " + std::to_string(y) + " out of range");
    double mx = logits.at(b, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits.at(b, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(logits.at(b, j) - mx);
    double log_sum = std::log(sum) + mx;
    loss += (log_sum - logits.at(b, static_cast<std::size_t>(y))) / static_cast<double>(batch);
    for (std::size_t j = 0; j < k; ++j) {
      double p = std::exp(logits.at(b, j) - log_sum);
      d.at(b, j) = (p - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0)) / static_cast<double>(batch);
    }
  }
  return {loss, std::move(d)};
}

AppliedUpdate sgd_step(Layer& layer, const LayerGrads& grads, SgdConfig& cfg, int t) {
  if (!grads.d_weight.same_shape(layer.weight) || !grads.d_bias.same_shape(layer.bias))
    throw std::invalid_argument("sgd_step: gradient shape mismatch");
  const double alpha = cfg.alpha_at(t);

  auto step_one = [&](Tensor& param, Tensor& vel, const Tensor& grad) {
    Tensor delta = Tensor::zeros_like(param);
    if (cfg.momentum > 0.0 && vel.data.empty()) vel = Tensor::zeros_like(param);
    for (std::size_t i = 0; i < param.data.size(); ++i) {
      double g = grad.data[i] + cfg.weight_decay * param.data[i];
      if (cfg.momentum > 0.0) {
        vel.data[i] = cfg.momentum * vel.data[i] + g;
        g = vel.data[i];
      }
      delta.data[i] = -alpha * g;
      param.data[i] += delta.data[i];
      if (!std::isfinite(param.data[i])) throw TrainingDiverged("sgd_step: non-finite parameter");
    }
    return delta;
  };

  AppliedUpdate u;
  u.d_weight = step_one(layer.weight, layer.vel_w, grads.d_weight);
  u.d_bias = step_one(layer.bias, layer.vel_b, grads.d_bias);
  return u;
}

std::size_t Model::param_bytes() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.param_bytes();
  return n;
}

Model make_mlp(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
  if (sizes.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output sizes");
  Model m;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    Layer l;
    l.weight = Tensor({sizes[i + 1], sizes[i]});
    l.bias = Tensor({sizes[i + 1]});
    l.activation = (i + 2 == sizes.size()) ? Activation::Identity : Activation::Relu;
    double scale = std::sqrt(2.0 / static_cast<double>(sizes[i]));
    std::normal_distribution<double> dist(0.0, scale);
    for (double& w : l.weight.data) w = dist(rng);
    m.layers.push_back(std::move(l));
  }
  return m;
}

Tensor model_forward(const Model& m, const Tensor& x, std::vector<ForwardCache>* caches) {
  Tensor cur = x;
  if (caches) caches->assign(static_cast<std::size_t>(m.num_layers()), ForwardCache{});
  for (int l = 0; l < m.num_layers(); ++l)
    cur = forward(m.layers[static_cast<std::size_t>(l)], cur,
                  caches ? &(*caches)[static_cast<std::size_t>(l)] : nullptr);
  return cur;
}

void save_checkpoint(const Model& m, const std::string& data_path, const std::string& manifest_path) {
  nlohmann::json manifest;
  manifest["layers"] = nlohmann::json::array();
  std::ofstream data(data_path, std::ios::binary);
  if (!data) throw std::runtime_error("save_checkpoint: cannot open " + data_path);
  for (const Layer& l : m.layers) {
    manifest["layers"].push_back({{"out", l.out_dim()},
                                  {"in", l.in_dim()},
                                  {"activation", l.activation == Activation::Relu ? "relu" : "identity"}});
    data.write(reinterpret_cast<const char*>(l.weight.data.data()),
               static_cast<std::streamsize>(l.weight.data.size() * sizeof(double)));
    data.write(reinterpret_cast<const char*>(l.bias.data.data()),
               static_cast<std::streamsize>(l.bias.data.size() * sizeof(double)));
  }
  std::ofstream mf(manifest_path, std::ios::binary);
  if (!mf) throw std::runtime_error("save_checkpoint: cannot open " + manifest_path);
  mf << manifest.dump(2) << "\n";
}

Model load_checkpoint(const std::string& data_path, const std::string& manifest_path) {
  std::ifstream mf(manifest_path, std::ios::binary);
  if (!mf) throw std::runtime_error("load_checkpoint: cannot open " + manifest_path);
  nlohmann::json manifest = nlohmann::json::parse(mf);
  std::ifstream data(data_path, std::ios::binary);
  if (!data) throw std::runtime_error("load_checkpoint: cannot open " + data_path);
  Model m;
  for (const auto& jl : manifest.at("layers")) {
    Layer l;
    std::size_t out = jl.at("out").get<std::size_t>(), in = jl.at("in").get<std::size_t>();
    l.weight = Tensor({out, in});
    l.bias = Tensor({out});
    l.activation = jl.at("activation").get<std::string>() == "relu" ? Activation::Relu : Activation::Identity;
    data.read(reinterpret_cast<char*>(l.weight.data.data()),
              static_cast<std::streamsize>(l.weight.data.size() * sizeof(double)));
    data.read(reinterpret_cast<char*>(l.bias.data.data()),
              static_cast<std::streamsize>(l.bias.data.size() * sizeof(double)));
    if (!data) throw std::runtime_error("load_checkpoint: truncated parameter blob");
    m.layers.push_back(std::move(l));
  }
  return m;
}

std::vector<std::uint8_t> model_param_bytes(const Model& m) {
  std::vector<std::uint8_t> out;
  for (const Layer& l : m.layers) {
    const auto append = [&out](const Tensor& t) {
      const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
      out.insert(out.end(), p, p + t.data.size() * sizeof(double));
    };
    append(l.weight);
    append(l.bias);
  }
  return out;
}

}  // namespace pipetrain
