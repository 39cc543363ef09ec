#include "vseg/features.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

#include "vseg/log.hpp"

namespace vseg {

namespace {

// Samples outside the volume read as 0.
inline float sample(const Volume& v, std::int64_t x, std::int64_t y, std::int64_t z) {
  const Dims& d = v.dims();
  if (x < 0 || y < 0 || z < 0 || x >= static_cast<std::int64_t>(d.nx) || y >= static_cast<std::int64_t>(d.ny) ||
      z >= static_cast<std::int64_t>(d.nz)) {
    return 0.0f;
  }
  return v.at_unchecked(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z));
}

inline std::int64_t lower_offset(std::size_t side) { return -static_cast<std::int64_t>(side / 2); }

void require_odd(std::size_t side, const char* name) {
  if (side == 0 || side % 2 == 0) {
    throw std::invalid_argument(std::string(name) + " must be a positive odd integer");
  }
}

}  // namespace

void FeatureConfig::validate() const {
  require_odd(a, "a");
  require_odd(b, "b");
  require_odd(c, "c");
  if (s == 0) throw std::invalid_argument("s must be positive");
  if (n_regions == 0) throw std::invalid_argument("n_regions must be positive");
}

std::size_t CentroidSet::absent_count() const {
  std::size_t n = 0;
  for (bool p : present) n += p ? 0 : 1;
  return n;
}

std::size_t FeatureVector::size() const {
  std::size_t n = patch3d.size() + cdist.size();
  for (const auto& p : ortho2d) n += p.size();
  for (const auto& p : ortho2d_down) n += p.size();
  return n;
}

std::vector<float> FeatureVector::flatten() const {
  std::vector<float> out;
  out.reserve(size());
  out.insert(out.end(), patch3d.begin(), patch3d.end());
  for (const auto& p : ortho2d) out.insert(out.end(), p.begin(), p.end());
  for (const auto& p : ortho2d_down) out.insert(out.end(), p.begin(), p.end());
  out.insert(out.end(), cdist.begin(), cdist.end());
  return out;
}

std::vector<float> extract_patch3d(const Volume& v, const VoxelCoord& center, std::size_t a) {
  require_odd(a, "a");
  const std::int64_t lo = lower_offset(a);
  const std::int64_t n = static_cast<std::int64_t>(a);
  std::vector<float> out(a * a * a);
  const Dims& d = v.dims();
  const bool interior = center.x + lo >= 0 && center.y + lo >= 0 && center.z + lo >= 0 &&
                        center.x + lo + n <= static_cast<std::int64_t>(d.nx) &&
                        center.y + lo + n <= static_cast<std::int64_t>(d.ny) &&
                        center.z + lo + n <= static_cast<std::int64_t>(d.nz);
  std::size_t idx = 0;
  for (std::int64_t k = 0; k < n; ++k) {
    for (std::int64_t j = 0; j < n; ++j) {
      if (interior) {
        const float* row = &v.data()[linear_index(d, static_cast<std::size_t>(center.x + lo),
                                                  static_cast<std::size_t>(center.y + lo + j),
                                                  static_cast<std::size_t>(center.z + lo + k))];
        for (std::int64_t i = 0; i < n; ++i) out[idx++] = row[i];
      } else {
        for (std::int64_t i = 0; i < n; ++i) {
          out[idx++] = sample(v, center.x + lo + i, center.y + lo + j, center.z + lo + k);
        }
      }
    }
  }
  return out;
}

std::array<std::vector<float>, 3> extract_ortho2d(const Volume& v, const VoxelCoord& center, std::size_t side) {
  if (side == 0) throw std::invalid_argument("patch side must be positive");
  const std::int64_t lo = lower_offset(side);
  const std::int64_t n = static_cast<std::int64_t>(side);
  std::array<std::vector<float>, 3> planes;
  for (auto& p : planes) p.resize(side * side);
  std::size_t idx = 0;
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t q = 0; q < n; ++q, ++idx) {
      const std::int64_t dr = lo + r;
      const std::int64_t dq = lo + q;
      planes[0][idx] = sample(v, center.x, center.y + dq, center.z + dr);
      planes[1][idx] = sample(v, center.x + dq, center.y, center.z + dr);
      planes[2][idx] = sample(v, center.x + dq, center.y + dr, center.z);
    }
  }
  return planes;
}

std::vector<float> downscale(std::span<const float> patch, std::size_t side, std::size_t s) {
  if (s == 0 || side % s != 0) {
    throw std::invalid_argument("patch side " + std::to_string(side) + " is not divisible by " + std::to_string(s));
  }
  if (patch.size() != side * side) throw std::invalid_argument("patch length does not match side");
  const std::size_t c = side / s;
  std::vector<float> out(c * c);
  const double inv = 1.0 / static_cast<double>(s * s);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      double acc = 0.0;
      for (std::size_t u = 0; u < s; ++u) {
        const float* row = &patch[(s * i + u) * side + s * j];
        for (std::size_t w = 0; w < s; ++w) acc += row[w];
      }
      out[i * c + j] = static_cast<float>(acc * inv);
    }
  }
  return out;
}

std::array<std::vector<float>, 3> extract_ortho2d_downscaled(const Volume& v, const VoxelCoord& center,
                                                             std::size_t c, std::size_t s) {
  if (c == 0 || s == 0) throw std::invalid_argument("c and s must be positive");
  auto full = extract_ortho2d(v, center, s * c);
  std::array<std::vector<float>, 3> out;
  for (std::size_t p = 0; p < 3; ++p) out[p] = downscale(full[p], s * c, s);
  return out;
}

double normalization_constant(std::span<const Point3> centroids) {
  const std::size_t n = centroids.size();
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double dx = centroids[i][0] - centroids[j][0];
      const double dy = centroids[i][1] - centroids[j][1];
      const double dz = centroids[i][2] - centroids[j][2];
      total += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
  }
  return total / (static_cast<double>(n) * static_cast<double>(n + 1) / 2.0);
}

CentroidSet compute_centroids(const LabelVolume& labels, std::size_t n_regions) {
  std::vector<std::array<double, 3>> sums(n_regions, {0.0, 0.0, 0.0});
  std::vector<std::size_t> counts(n_regions, 0);
  const Dims& d = labels.dims();
  std::size_t idx = 0;
  for (std::size_t z = 0; z < d.nz; ++z) {
    for (std::size_t y = 0; y < d.ny; ++y) {
      for (std::size_t x = 0; x < d.nx; ++x, ++idx) {
        const std::uint16_t l = labels[idx];
        if (l == 0 || l > n_regions) continue;
        auto& sum = sums[l - 1];
        sum[0] += static_cast<double>(x);
        sum[1] += static_cast<double>(y);
        sum[2] += static_cast<double>(z);
        ++counts[l - 1];
      }
    }
  }

  CentroidSet cs;
  cs.centroids.resize(n_regions);
  cs.present.resize(n_regions);
  Point3 mean_present{0.0, 0.0, 0.0};
  std::size_t n_present = 0;
  for (std::size_t l = 0; l < n_regions; ++l) {
    cs.present[l] = counts[l] > 0;
    if (!cs.present[l]) continue;
    for (std::size_t k = 0; k < 3; ++k) {
      cs.centroids[l][k] = sums[l][k] / static_cast<double>(counts[l]);
      mean_present[k] += cs.centroids[l][k];
    }
    ++n_present;
  }
  if (n_present > 0 && n_present < n_regions) {
    for (auto& m : mean_present) m /= static_cast<double>(n_present);
    std::ostringstream msg;
    msg << (n_regions - n_present) << " empty region(s) replaced by mean centroid:";
    for (std::size_t l = 0; l < n_regions; ++l) {
      if (!cs.present[l]) {
        cs.centroids[l] = mean_present;
        msg << ' ' << (l + 1);
      }
    }
    log_warning(msg.str());
  }

  cs.d_norm = normalization_constant(cs.centroids);
  if (!(cs.d_norm > 0.0)) {
    // Single region or coincident centroids: leave distances unscaled.
    cs.d_norm = 1.0;
  }
  return cs;
}

std::vector<double> centroid_distances(const Point3& voxel, const CentroidSet& cs) {
  std::vector<double> out(cs.size());
  for (std::size_t l = 0; l < cs.size(); ++l) {
    const double dx = voxel[0] - cs.centroids[l][0];
    const double dy = voxel[1] - cs.centroids[l][1];
    const double dz = voxel[2] - cs.centroids[l][2];
    out[l] = std::sqrt(dx * dx + dy * dy + dz * dz) / cs.d_norm;
  }
  return out;
}

std::vector<double> centroid_distances(const VoxelCoord& voxel, const CentroidSet& cs) {
  return centroid_distances(
      Point3{static_cast<double>(voxel.x), static_cast<double>(voxel.y), static_cast<double>(voxel.z)}, cs);
}

std::vector<float> corrupt_distances(std::span<const float> distances, double sigma, Rng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("sigma must be non-negative");
  std::vector<float> out(distances.begin(), distances.end());
  if (sigma == 0.0) return out;
  std::normal_distribution<double> noise(0.0, sigma);
  for (auto& d : out) d = static_cast<float>(static_cast<double>(d) + noise(rng));
  return out;
}

FeatureVector extract_features(const Volume& v, const VoxelCoord& center, const FeatureConfig& cfg,
                               const CentroidSet* cs) {
  return extract_features(v, center, cfg, cs, FeatureBlocks{});
}

FeatureVector extract_features(const Volume& v, const VoxelCoord& center, const FeatureConfig& cfg,
                               const CentroidSet* cs, const FeatureBlocks& blocks) {
  FeatureVector fv;
  if (blocks.patch3d) fv.patch3d = extract_patch3d(v, center, cfg.a);
  if (blocks.ortho2d) fv.ortho2d = extract_ortho2d(v, center, cfg.b);
  if (blocks.ortho2d_down) fv.ortho2d_down = extract_ortho2d_downscaled(v, center, cfg.c, cfg.s);
  if (blocks.cdist && cs != nullptr) {
    if (cs->size() != cfg.n_regions) {
      throw std::invalid_argument("centroid set has " + std::to_string(cs->size()) + " regions, config expects " +
                                  std::to_string(cfg.n_regions));
    }
    const auto d = centroid_distances(center, *cs);
    fv.cdist.assign(d.begin(), d.end());
  }
  return fv;
}

void save_centroids(const CentroidSet& cs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  for (std::size_t l = 0; l < cs.size(); ++l) {
    out << (l + 1) << ' ' << cs.centroids[l][0] << ' ' << cs.centroids[l][1] << ' ' << cs.centroids[l][2] << '\n';
  }
  out << "D " << cs.d_norm << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

CentroidSet load_centroids(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  CentroidSet cs;
  bool have_d = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (have_d) throw FormatError("content after D line in " + path.string());
    std::istringstream fields(line);
    std::string head;
    fields >> head;
    if (head == "D") {
      if (!(fields >> cs.d_norm)) throw FormatError("malformed D line in " + path.string());
      have_d = true;
      continue;
    }
    std::size_t id = 0;
    std::istringstream id_field(head);
    Point3 p{};
    if (!(id_field >> id) || id != cs.size() + 1 || !(fields >> p[0] >> p[1] >> p[2])) {
      throw FormatError("malformed centroid line '" + line + "' in " + path.string());
    }
    cs.centroids.push_back(p);
    cs.present.push_back(true);
  }
  if (!have_d) throw FormatError("missing D line in " + path.string());
  return cs;
}

}  // namespace vseg
