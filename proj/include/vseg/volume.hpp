#ifndef VSEG_VOLUME_HPP
#define VSEG_VOLUME_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace vseg {

/// Raised when a volume, label, model or centroid file cannot be decoded.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dims {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::size_t nz = 0;

  std::size_t count() const { return nx * ny * nz; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

struct VoxelCoord {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  friend bool operator==(const VoxelCoord&, const VoxelCoord&) = default;
};

inline bool in_bounds(const Dims& d, const VoxelCoord& c) {
  return c.x >= 0 && c.y >= 0 && c.z >= 0 && static_cast<std::size_t>(c.x) < d.nx &&
         static_cast<std::size_t>(c.y) < d.ny && static_cast<std::size_t>(c.z) < d.nz;
}

/// Linear index of (x, y, z) with x contiguous: x + nx * (y + ny * z).
inline std::size_t linear_index(const Dims& d, std::size_t x, std::size_t y, std::size_t z) {
  return x + d.nx * (y + d.ny * z);
}

inline VoxelCoord coord_of(const Dims& d, std::size_t index) {
  VoxelCoord c;
  c.x = static_cast<std::int64_t>(index % d.nx);
  c.y = static_cast<std::int64_t>((index / d.nx) % d.ny);
  c.z = static_cast<std::int64_t>(index / (d.nx * d.ny));
  return c;
}

/// Dense scalar grid, 32-bit float intensities stored x-fastest.
class Volume {
 public:
  Volume() = default;
  explicit Volume(Dims dims, float fill = 0.0f);
  Volume(Dims dims, std::vector<float> data);

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  float operator[](std::size_t i) const { return data_[i]; }
  float& operator[](std::size_t i) { return data_[i]; }

  /// Unchecked access for callers that already validated the coordinate.
  float at_unchecked(std::size_t x, std::size_t y, std::size_t z) const {
    return data_[linear_index(dims_, x, y, z)];
  }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Dims dims_;
  std::vector<float> data_;
};

/// Region-id grid; 0 is background and 1..N are regions.
class LabelVolume {
 public:
  LabelVolume() = default;
  explicit LabelVolume(Dims dims, std::uint16_t fill = 0);
  LabelVolume(Dims dims, std::vector<std::uint16_t> labels);

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return labels_.size(); }
  const std::vector<std::uint16_t>& labels() const { return labels_; }
  std::vector<std::uint16_t>& labels() { return labels_; }

  std::uint16_t operator[](std::size_t i) const { return labels_[i]; }
  std::uint16_t& operator[](std::size_t i) { return labels_[i]; }

  std::uint16_t max_label() const;

  friend bool operator==(const LabelVolume&, const LabelVolume&) = default;

 private:
  Dims dims_;
  std::vector<std::uint16_t> labels_;
};

struct Atlas {
  Atlas(Volume image, LabelVolume labels, std::string id);

  Volume image;
  LabelVolume labels;
  std::string id;
};

/// Per-voxel foreground predicate, same layout as the volume it describes.
struct Mask {
  Dims dims;
  std::vector<std::uint8_t> values;

  std::size_t count() const;
  bool operator[](std::size_t i) const { return values[i] != 0; }
};

Mask mask_from_intensity(const Volume& v, float threshold = 0.0f);
Mask mask_from_labels(const LabelVolume& labels);

/// Throws std::out_of_range when c lies outside the volume.
float voxel_at(const Volume& v, const VoxelCoord& c);

Volume load_volume(const std::filesystem::path& path);
void save_volume(const Volume& v, const std::filesystem::path& path);
LabelVolume load_labels(const std::filesystem::path& path);
void save_labels(const LabelVolume& labels, const std::filesystem::path& path);

}  // namespace vseg

#endif  // VSEG_VOLUME_HPP
