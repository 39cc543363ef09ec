#ifndef VSEG_SYNTHDATA_HPP
#define VSEG_SYNTHDATA_HPP

// Synthetic atlases: a fixed Voronoi partition of an ellipsoidal "brain"
// shared by all subjects, perturbed per subject by site displacement and a
// global rigid transform, with region-wise intensities plus voxel noise.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vseg/features.hpp"
#include "vseg/volume.hpp"

namespace vseg {

struct SynthConfig {
  Dims dims{64, 64, 64};
  std::size_t n_regions = 8;
  std::uint64_t seed = 2015;
  /// Template intensity per region; generated from paired levels when empty.
  std::vector<double> region_means;
  double region_mean_jitter = 0.0;   ///< per-subject std added to each template mean
  double noise_std = 0.05;           ///< additive voxel noise
  double deformation = 0.5;          ///< RMS of the smooth per-subject site displacement (voxels)
  double rotation_deg = 3.0;         ///< max absolute rotation about each axis
  double translation = 2.0;          ///< max absolute translation per axis (voxels)
  std::array<double, 3> radii{0.42, 0.36, 0.32};  ///< ellipsoid semi-axes as fractions of dims
  std::size_t n_train = 15;
  std::size_t n_test = 5;
  std::size_t max_retries = 16;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

/// Shared region layout in the template frame (voxel units, origin at the
/// volume centre).
struct SynthTemplate {
  std::vector<Point3> sites;
  std::vector<double> means;
  std::uint64_t seed_used = 0;
};

struct SubjectParams {
  std::uint64_t seed = 0;
  std::vector<Point3> sites;         ///< displaced sites, template frame
  std::array<double, 3> rotation{};  ///< radians about x, y, z
  Point3 translation{};
  std::vector<double> means;  ///< this subject's region means
};

SynthTemplate make_template(const SynthConfig& cfg);

/// Deterministic per (cfg, subject_seed). Every region is non-empty and
/// 6-connected; otherwise the subject is redrawn with the next sub-seed.
Atlas generate_atlas(const SynthConfig& cfg, std::uint64_t subject_seed, SubjectParams* params = nullptr);

/// Seed of subject i derived from the master seed.
std::uint64_t subject_seed(std::uint64_t master_seed, std::size_t index);

std::vector<Atlas> generate_dataset(const SynthConfig& cfg, std::size_t n_subjects, std::size_t threads = 1);

/// Number of 6-connected components of voxels carrying `region`.
std::size_t connected_components(const LabelVolume& labels, std::uint16_t region);

struct DatasetEntry {
  std::string id;
  std::uint64_t seed = 0;
  std::string image;
  std::string labels;
  std::string split;  ///< "train" or "test"
};

struct DatasetManifest {
  std::uint64_t master_seed = 0;
  SynthConfig config;
  std::vector<DatasetEntry> subjects;
};

/// Generates n_train + n_test subjects and writes volumes, labels and manifest.json.
DatasetManifest write_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir, std::size_t threads = 1);
DatasetManifest read_manifest(const std::filesystem::path& dir);
std::vector<Atlas> load_split(const std::filesystem::path& dir, const DatasetManifest& manifest,
                              const std::string& split);

std::string synth_config_to_json(const SynthConfig& cfg);
/// Rejects unknown keys; absent keys keep their defaults.
SynthConfig synth_config_from_json(const std::string& json);

}  // namespace vseg

#endif  // VSEG_SYNTHDATA_HPP
