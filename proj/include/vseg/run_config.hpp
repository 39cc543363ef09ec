#ifndef VSEG_RUN_CONFIG_HPP
#define VSEG_RUN_CONFIG_HPP

// JSON run configuration shared by every command.
//
// {
//   "seed": 2015,                 master seed (dataset, sampling, init, noise)
//   "threads": 1,
//   "synth":     { dims, n_regions, region_means, ... }    see SynthConfig
//   "features":  { a, b, c, s, n_regions }
//   "network":   { kernel, pool, conv3d_maps, ortho_maps, down_maps,
//                  centroid_hidden, hidden, sigma,
//                  pathways: { patch3d, ortho_planes, downscaled } }
//   "training":  { train_per_atlas, val_per_atlas, batch_size, learning_rate,
//                  momentum, patience, max_epochs }
//   "inference": { max_iters, eps, block_size }
//   "paths":     { data_dir, stage1_model, full_model }
// }
//
// Every section and key is optional; absent values keep the desk defaults.
// Unknown keys are rejected.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vseg/segnet.hpp"
#include "vseg/synthdata.hpp"
#include "vseg/training.hpp"

namespace vseg {

struct SamplingPlan {
  std::size_t train_per_atlas = 1500;
  std::size_t val_per_atlas = 300;
};

struct InferencePlan {
  std::size_t max_iters = 10;
  double eps = 0.0;
  std::size_t block_size = 4096;
};

struct RunPaths {
  std::string data_dir;
  std::string stage1_model;
  std::string full_model;
};

/// Training defaults sized for the desk preset: at most 30 epochs.
inline TrainOptions desk_training() {
  TrainOptions t;
  t.max_epochs = 30;
  return t;
}

struct RunConfig {
  std::uint64_t seed = 2015;
  std::size_t threads = 1;
  SynthConfig synth;
  NetworkConfig network = NetworkConfig::desk();
  SamplingPlan sampling;
  TrainOptions training = desk_training();  ///< seed, threads and sigma are filled from the fields above
  InferencePlan inference;
  RunPaths paths;

  /// Throws std::invalid_argument on any invalid or inconsistent value.
  void validate() const;

  /// Network for a training stage: stage 1 has no centroid pathway.
  NetworkConfig network_for(bool full_stage) const;
  /// Training options with the master seed, thread count and noise applied.
  TrainOptions training_for(bool full_stage) const;
  std::uint64_t sampling_seed(bool full_stage) const;
  std::uint64_t init_seed(bool full_stage) const;
};

/// Parses JSON text, applies `section.key=value` overrides (value parsed as
/// JSON, falling back to a string), then validates.
RunConfig parse_run_config(const std::string& json_text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {});

/// Canonical JSON of every field; parse_run_config(to_json(c)) == c.
std::string run_config_to_json(const RunConfig& cfg);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace vseg

#endif  // VSEG_RUN_CONFIG_HPP
