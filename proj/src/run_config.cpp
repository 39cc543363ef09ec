#include "vseg/run_config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace vseg {

namespace {

using nlohmann::json;

void reject_unknown(const json& section, const std::string& name, std::initializer_list<const char*> keys) {
  if (!section.is_object()) throw std::invalid_argument("config section '" + name + "' must be an object");
  for (const auto& [key, value] : section.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) throw std::invalid_argument("unknown config key '" + (name.empty() ? key : name + "." + key) + "'");
  }
}

template <typename T>
void read(const json& section, const char* key, T& out) {
  if (section.contains(key)) out = section.at(key).get<T>();
}

void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override '" + assignment + "' is not of the form section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw std::invalid_argument("override '" + assignment + "' has an empty key");
    if (!node->is_object()) throw std::invalid_argument("override '" + assignment + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["synth"] = json::parse(synth_config_to_json(c.synth));
  const FeatureConfig& f = c.network.features;
  j["features"] = {{"a", f.a}, {"b", f.b}, {"c", f.c}, {"s", f.s}, {"n_regions", f.n_regions}};
  const NetworkConfig& n = c.network;
  j["network"] = {{"kernel", n.kernel},
                  {"pool", n.pool},
                  {"conv3d_maps", n.conv3d_maps},
                  {"ortho_maps", n.ortho_maps},
                  {"down_maps", n.down_maps},
                  {"centroid_hidden", n.centroid_hidden},
                  {"hidden", n.hidden},
                  {"sigma", n.sigma},
                  {"pathways",
                   {{"patch3d", n.pathways.patch3d},
                    {"ortho_planes", n.pathways.ortho_planes},
                    {"downscaled", n.pathways.downscaled}}}};
  const TrainOptions& t = c.training;
  j["training"] = {{"train_per_atlas", c.sampling.train_per_atlas},
                   {"val_per_atlas", c.sampling.val_per_atlas},
                   {"batch_size", t.batch_size},
                   {"learning_rate", t.learning_rate},
                   {"momentum", t.momentum},
                   {"patience", t.patience},
                   {"max_epochs", t.max_epochs}};
  j["inference"] = {{"max_iters", c.inference.max_iters},
                    {"eps", c.inference.eps},
                    {"block_size", c.inference.block_size}};
  j["paths"] = {{"data_dir", c.paths.data_dir},
                {"stage1_model", c.paths.stage1_model},
                {"full_model", c.paths.full_model}};
  return j;
}

RunConfig from_json(const json& j) {
  reject_unknown(j, "", {"seed", "threads", "synth", "features", "network", "training", "inference", "paths"});
  RunConfig c;
  read(j, "seed", c.seed);
  read(j, "threads", c.threads);

  json synth = j.contains("synth") ? j.at("synth") : json::object();
  if (!synth.is_object()) throw std::invalid_argument("config section 'synth' must be an object");
  if (!synth.contains("seed")) synth["seed"] = c.seed;
  c.synth = synth_config_from_json(synth.dump());

  FeatureConfig& f = c.network.features;
  f.n_regions = c.synth.n_regions;
  if (j.contains("features")) {
    const json& s = j.at("features");
    reject_unknown(s, "features", {"a", "b", "c", "s", "n_regions"});
    read(s, "a", f.a);
    read(s, "b", f.b);
    read(s, "c", f.c);
    read(s, "s", f.s);
    read(s, "n_regions", f.n_regions);
  }
  if (j.contains("network")) {
    const json& s = j.at("network");
    reject_unknown(s, "network", {"kernel", "pool", "conv3d_maps", "ortho_maps", "down_maps", "centroid_hidden",
                                  "hidden", "sigma", "pathways"});
    NetworkConfig& n = c.network;
    read(s, "kernel", n.kernel);
    read(s, "pool", n.pool);
    read(s, "conv3d_maps", n.conv3d_maps);
    read(s, "ortho_maps", n.ortho_maps);
    read(s, "down_maps", n.down_maps);
    read(s, "centroid_hidden", n.centroid_hidden);
    read(s, "hidden", n.hidden);
    read(s, "sigma", n.sigma);
    if (s.contains("pathways")) {
      const json& p = s.at("pathways");
      reject_unknown(p, "network.pathways", {"patch3d", "ortho_planes", "downscaled"});
      read(p, "patch3d", n.pathways.patch3d);
      read(p, "ortho_planes", n.pathways.ortho_planes);
      read(p, "downscaled", n.pathways.downscaled);
    }
  }
  if (j.contains("training")) {
    const json& s = j.at("training");
    reject_unknown(s, "training", {"train_per_atlas", "val_per_atlas", "batch_size", "learning_rate", "momentum",
                                   "patience", "max_epochs"});
    read(s, "train_per_atlas", c.sampling.train_per_atlas);
    read(s, "val_per_atlas", c.sampling.val_per_atlas);
    read(s, "batch_size", c.training.batch_size);
    read(s, "learning_rate", c.training.learning_rate);
    read(s, "momentum", c.training.momentum);
    read(s, "patience", c.training.patience);
    read(s, "max_epochs", c.training.max_epochs);
  }
  if (j.contains("inference")) {
    const json& s = j.at("inference");
    reject_unknown(s, "inference", {"max_iters", "eps", "block_size"});
    read(s, "max_iters", c.inference.max_iters);
    read(s, "eps", c.inference.eps);
    read(s, "block_size", c.inference.block_size);
  }
  if (j.contains("paths")) {
    const json& s = j.at("paths");
    reject_unknown(s, "paths", {"data_dir", "stage1_model", "full_model"});
    read(s, "data_dir", c.paths.data_dir);
    read(s, "stage1_model", c.paths.stage1_model);
    read(s, "full_model", c.paths.full_model);
  }
  return c;
}

}  // namespace

void RunConfig::validate() const {
  if (threads == 0) throw std::invalid_argument("threads must be at least 1");
  synth.validate();
  network.validate();
  if (network.features.n_regions != synth.n_regions) {
    throw std::invalid_argument("features.n_regions (" + std::to_string(network.features.n_regions) +
                                ") differs from synth.n_regions (" + std::to_string(synth.n_regions) + ")");
  }
  if (sampling.train_per_atlas == 0 || sampling.val_per_atlas == 0) {
    throw std::invalid_argument("train_per_atlas and val_per_atlas must be positive");
  }
  if (training.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(training.learning_rate > 0.0) || !std::isfinite(training.learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
  if (!(training.momentum >= 0.0 && training.momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (training.max_epochs == 0) throw std::invalid_argument("max_epochs must be positive");
  if (!(inference.eps >= 0.0 && inference.eps <= 1.0)) throw std::invalid_argument("eps must be in [0, 1]");
  if (inference.block_size == 0) throw std::invalid_argument("block_size must be positive");
}

NetworkConfig RunConfig::network_for(bool full_stage) const {
  NetworkConfig n = network;
  n.pathways.centroids = full_stage;
  return n;
}

TrainOptions RunConfig::training_for(bool full_stage) const {
  TrainOptions t = training;
  t.threads = threads;
  t.sigma = network.sigma;
  t.seed = seed * 0x9E3779B97F4A7C15ull + (full_stage ? 0x3u : 0x1u);
  return t;
}

std::uint64_t RunConfig::sampling_seed(bool full_stage) const {
  return seed * 0xBF58476D1CE4E5B9ull + (full_stage ? 0x12u : 0x11u);
}

std::uint64_t RunConfig::init_seed(bool full_stage) const {
  return seed * 0x94D049BB133111EBull + (full_stage ? 0x22u : 0x21u);
}

RunConfig parse_run_config(const std::string& json_text, const std::vector<std::string>& overrides) {
  json root;
  try {
    root = json_text.empty() ? json::object() : json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw std::invalid_argument("config root must be a JSON object");
  for (const auto& o : overrides) apply_override(root, o);
  RunConfig c;
  try {
    c = from_json(root);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  if (path.empty()) return parse_run_config("", overrides);
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_run_config(text.str(), overrides);
}

std::string run_config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2); }

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

}  // namespace vseg
