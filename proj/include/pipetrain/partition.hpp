#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace pipetrain {

/// Assignment of contiguous layer ranges to pipeline stages.
///
/// `boundaries` lists the first layer of every stage, so boundaries[0] == 0 and
/// the entries are strictly increasing. S(l) — the number of stage boundaries
/// strictly downstream of layer l — drives every delay and stash-depth formula.
struct StagePartition {
  int num_layers = 0;
  std::vector<int> boundaries;  // stage start layers, boundaries[0] == 0

  StagePartition() = default;
  StagePartition(int layers, std::vector<int> starts) : num_layers(layers), boundaries(std::move(starts)) {
    check();
  }

  static StagePartition single_stage(int layers) { return StagePartition(layers, {0}); }

  static StagePartition per_layer(int layers) {
    std::vector<int> b(static_cast<std::size_t>(layers));
    std::iota(b.begin(), b.end(), 0);
    return StagePartition(layers, std::move(b));
  }

  /// Build from per-stage layer counts, e.g. {2,2} over four layers.
  static StagePartition from_sizes(int layers, const std::vector<int>& sizes) {
    std::vector<int> b;
    int at = 0;
    for (int s : sizes) {
      if (s <= 0) throw std::invalid_argument("StagePartition: stage size must be positive");
      b.push_back(at);
      at += s;
    }
    if (at != layers) throw std::invalid_argument("StagePartition: stage sizes do not sum to layer count");
    return StagePartition(layers, std::move(b));
  }

  void check() const {
    if (num_layers < 1) throw std::invalid_argument("StagePartition: need at least one layer");
    if (boundaries.empty() || boundaries.front() != 0)
      throw std::invalid_argument("StagePartition: first stage must start at layer 0");
    for (std::size_t i = 1; i < boundaries.size(); ++i)
      if (boundaries[i] <= boundaries[i - 1])
        throw std::invalid_argument("StagePartition: boundaries must be strictly increasing");
    if (boundaries.back() >= num_layers)
      throw std::invalid_argument("StagePartition: boundary past last layer");
  }

  int num_stages() const { return static_cast<int>(boundaries.size()); }

  int stage_of(int layer) const {
    if (layer < 0 || layer >= num_layers) throw std::out_of_range("StagePartition::stage_of");
    int s = 0;
    while (s + 1 < num_stages() && boundaries[static_cast<std::size_t>(s + 1)] <= layer) ++s;
    return s;
  }

  /// S(l): count of stage boundaries strictly after layer l.
  int stages_after(int layer) const { return num_stages() - 1 - stage_of(layer); }

  /// First layers of stages 1..n-1 (the interior boundaries), input-most first.
  std::vector<int> interior_boundaries() const {
    return {boundaries.begin() + 1, boundaries.end()};
  }

  std::string to_string() const {
    std::string s;
    for (int i = 0; i < num_stages(); ++i) {
      int lo = boundaries[static_cast<std::size_t>(i)];
      int hi = (i + 1 < num_stages()) ? boundaries[static_cast<std::size_t>(i + 1)] : num_layers;
      if (i) s += "|";
      s += std::to_string(hi - lo);
    }
    return s;
  }
};

}  // namespace pipetrain
