#ifndef VSEG_FEATURES_HPP
#define VSEG_FEATURES_HPP

#include <array>
#include <cstddef>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "vseg/volume.hpp"

namespace vseg {

using Rng = std::mt19937_64;
using Point3 = std::array<double, 3>;

/// Orthogonal plane order used everywhere: perpendicular to x, y, then z.
enum class Plane : std::size_t { Sagittal = 0, Coronal = 1, Transverse = 2 };

struct FeatureConfig {
  std::size_t a = 13;  ///< 3D patch side
  std::size_t b = 29;  ///< orthogonal 2D patch side
  std::size_t c = 29;  ///< downscaled patch side
  std::size_t s = 3;   ///< downscale factor
  std::size_t n_regions = 134;

  /// Throws std::invalid_argument if a side is even or any value is zero.
  void validate() const;

  std::size_t intensity_length() const { return a * a * a + 3 * b * b + 3 * c * c; }
  std::size_t total_length(bool with_centroids) const {
    return intensity_length() + (with_centroids ? n_regions : 0);
  }

  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

/// Region centroids in voxel units plus the normalization constant D.
struct CentroidSet {
  std::vector<Point3> centroids;  ///< index l-1 holds region l
  std::vector<bool> present;      ///< false where the region was empty and the centroid was imputed
  double d_norm = 1.0;

  std::size_t size() const { return centroids.size(); }
  std::size_t absent_count() const;
};

/// One voxel's network input. Blocks that were not requested stay empty.
struct FeatureVector {
  std::vector<float> patch3d;
  std::array<std::vector<float>, 3> ortho2d;
  std::array<std::vector<float>, 3> ortho2d_down;
  std::vector<float> cdist;

  std::size_t size() const;
  /// Concatenation in block order: patch3d, ortho2d[0..2], ortho2d_down[0..2], cdist.
  std::vector<float> flatten() const;
};

/// Which feature families to extract.
struct FeatureBlocks {
  bool patch3d = true;
  bool ortho2d = true;
  bool ortho2d_down = true;
  bool cdist = true;
};

/// a^3 intensities with x fastest; out-of-volume samples are 0.
std::vector<float> extract_patch3d(const Volume& v, const VoxelCoord& center, std::size_t a);

/// Three side x side slices through center in plane order. Rows run along the
/// second in-plane axis (z for sagittal and coronal, y for transverse).
/// Even sides span offsets [-side/2, side/2 - 1].
std::array<std::vector<float>, 3> extract_ortho2d(const Volume& v, const VoxelCoord& center, std::size_t side);

/// s x s mean pooling with stride s over a square patch of the given side.
std::vector<float> downscale(std::span<const float> patch, std::size_t side, std::size_t s);

std::array<std::vector<float>, 3> extract_ortho2d_downscaled(const Volume& v, const VoxelCoord& center,
                                                             std::size_t c, std::size_t s);

/// Mean of all pairwise centroid distances over i <= j, self-pairs included.
double normalization_constant(std::span<const Point3> centroids);

/// Centroids of regions 1..n_regions. Empty regions are replaced by the
/// mean of the present centroids and reported through the log.
CentroidSet compute_centroids(const LabelVolume& labels, std::size_t n_regions);

std::vector<double> centroid_distances(const Point3& voxel, const CentroidSet& cs);
std::vector<double> centroid_distances(const VoxelCoord& voxel, const CentroidSet& cs);

/// Adds independent N(0, sigma^2) noise to every entry.
std::vector<float> corrupt_distances(std::span<const float> distances, double sigma, Rng& rng);

/// Full feature vector; cdist is omitted when cs is null.
FeatureVector extract_features(const Volume& v, const VoxelCoord& center, const FeatureConfig& cfg,
                               const CentroidSet* cs);
FeatureVector extract_features(const Volume& v, const VoxelCoord& center, const FeatureConfig& cfg,
                               const CentroidSet* cs, const FeatureBlocks& blocks);

void save_centroids(const CentroidSet& cs, const std::filesystem::path& path);
CentroidSet load_centroids(const std::filesystem::path& path);

}  // namespace vseg

#endif  // VSEG_FEATURES_HPP
