#include "pipetrain/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace pipetrain {

StagePartition ExperimentConfig::partition(int layers) const {
  if (stage_sizes.empty()) return StagePartition::single_stage(layers);
  return StagePartition::from_sizes(layers, stage_sizes);
}

std::vector<int> parse_stage_sizes(const std::string& text, int num_layers) {
  if (text == "single" || text.empty()) return {num_layers};
  if (text == "per-layer") return std::vector<int>(static_cast<std::size_t>(num_layers), 1);
  std::vector<int> sizes;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ','))
    sizes.push_back(std::stoi(tok));
  return sizes;
}

namespace {

LrSchedule parse_schedule(const std::string& s) {
  if (s == "constant") return LrSchedule::Constant;
  if (s == "cosine") return LrSchedule::Cosine;
  throw std::invalid_argument("unknown lr schedule: " + s);
}

}  // namespace

ExperimentConfig config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ExperimentConfig c;
  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    c.dataset.kind = d.value("kind", c.dataset.kind);
    c.dataset.classes = d.value("classes", c.dataset.classes);
    c.dataset.samples = d.value("samples", c.dataset.samples);
    c.dataset.noise = d.value("noise", c.dataset.noise);
    c.dataset.images_path = d.value("images", c.dataset.images_path);
    c.dataset.labels_path = d.value("labels", c.dataset.labels_path);
  }
  if (j.contains("hidden")) c.hidden = j["hidden"].get<std::vector<std::size_t>>();
  if (j.contains("partition")) c.stage_sizes = parse_stage_sizes(j["partition"].get<std::string>(), c.num_layers());
  if (j.contains("strategy")) c.strategy = StrategySpec::parse(j["strategy"].get<std::string>());
  if (j.contains("sgd")) {
    const auto& s = j["sgd"];
    c.sgd.lr = s.value("lr", c.sgd.lr);
    c.sgd.momentum = s.value("momentum", c.sgd.momentum);
    c.sgd.weight_decay = s.value("weight_decay", c.sgd.weight_decay);
    if (s.contains("schedule")) c.sgd.schedule = parse_schedule(s["schedule"].get<std::string>());
    c.sgd.t_max = s.value("t_max", c.sgd.t_max);
  }
  c.epochs = j.value("epochs", c.epochs);
  c.batch = j.value("batch", c.batch);
  c.warmup_iters = j.value("warmup", c.warmup_iters);
  c.seed = j.value("seed", c.seed);
  c.out_dir = j.value("out", c.out_dir);
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["dataset"] = {{"kind", c.dataset.kind}, {"classes", c.dataset.classes},
                  {"samples", c.dataset.samples}, {"noise", c.dataset.noise}};
  if (!c.dataset.images_path.empty()) j["dataset"]["images"] = c.dataset.images_path;
  if (!c.dataset.labels_path.empty()) j["dataset"]["labels"] = c.dataset.labels_path;
  j["hidden"] = c.hidden;
  std::string part;
  if (c.stage_sizes.empty()) {
    part = "single";
  } else {
    for (std::size_t i = 0; i < c.stage_sizes.size(); ++i) {
      if (i) part += ",";
      part += std::to_string(c.stage_sizes[i]);
    }
  }
  j["partition"] = part;
  j["strategy"] = c.strategy.to_string();
  j["sgd"] = {{"lr", c.sgd.lr},
              {"momentum", c.sgd.momentum},
              {"weight_decay", c.sgd.weight_decay},
              {"schedule", c.sgd.schedule == LrSchedule::Cosine ? "cosine" : "constant"},
              {"t_max", c.sgd.t_max}};
  j["epochs"] = c.epochs;
  j["batch"] = c.batch;
  j["warmup"] = c.warmup_iters;
  j["seed"] = c.seed;
  if (!c.out_dir.empty()) j["out"] = c.out_dir;
  return j.dump(2);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = config_from_json(ss.str());
  if (c.dataset.kind == "idx") {
    for (const std::string& p : {c.dataset.images_path, c.dataset.labels_path})
      if (p.empty() || !std::filesystem::exists(p))
        throw std::runtime_error("load_config: dataset file missing: " + p);
  }
  return c;
}

}  // namespace pipetrain
