#include "pipetrain/planner.hpp"

#include <cstdio>
#include <stdexcept>

namespace pipetrain {

std::string StrategySpec::to_string() const {
  switch (kind) {
    case WeightStrategy::ExactStash: return "stash";
    case WeightStrategy::Latest: return "latest";
    case WeightStrategy::FixedEma: {
      char buf[48];
      std::snprintf(buf, sizeof(buf), "ema-fixed:%g", beta);
      return buf;
    }
    case WeightStrategy::PipelineAwareEma: return "ema-pipeline";
  }
  return "?";
}

StrategySpec StrategySpec::parse(const std::string& text) {
  StrategySpec s;
  if (text == "stash") {
    s.kind = WeightStrategy::ExactStash;
  } else if (text == "latest") {
    s.kind = WeightStrategy::Latest;
  } else if (text == "ema-pipeline") {
    s.kind = WeightStrategy::PipelineAwareEma;
  } else if (text.rfind("ema-fixed", 0) == 0) {
    s.kind = WeightStrategy::FixedEma;
    if (text.size() > 9 && text[9] == ':') {
      s.beta = std::stod(text.substr(10));
      if (!(s.beta > 0.0 && s.beta < 1.0)) throw std::invalid_argument("ema-fixed beta must be in (0,1)");
    }
  } else {
    throw std::invalid_argument("unknown weight strategy: " + text);
  }
  return s;
}

DelayAssignment derive_delays(int num_layers, const StagePartition& p) {
  if (p.num_layers != num_layers) throw std::invalid_argument("derive_delays: partition/layer-count mismatch");
  p.check();
  DelayAssignment a;
  for (int l = 0; l < num_layers; ++l) {
    int s = p.stages_after(l);
    a.gradient_delay.push_back(2 * s);
    a.weight_stash.push_back(s);
    a.activation_stash.push_back(s);
    a.staleness.push_back(s > 0 ? 2 * s + 1 : 0);
  }
  return a;
}

StorageCost storage_cost(const DelayAssignment& a, const StrategySpec& strategy) {
  StorageCost c;
  for (int l = 0; l < a.num_layers(); ++l) {
    int s = a.weight_stash[static_cast<std::size_t>(l)];
    c.stashed_activation_slots += a.activation_stash[static_cast<std::size_t>(l)] + 1;
    switch (strategy.kind) {
      case WeightStrategy::ExactStash:
        c.stashed_weight_copies += s;
        break;
      case WeightStrategy::Latest:
        break;
      case WeightStrategy::FixedEma:
      case WeightStrategy::PipelineAwareEma:
        if (s > 0) ++c.ema_accumulators;
        break;
    }
  }
  return c;
}

}  // namespace pipetrain
