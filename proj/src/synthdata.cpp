#include "vseg/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "vseg/log.hpp"
#include "vseg/parallel.hpp"

namespace vseg {

namespace {

using nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t attempt_seed(std::uint64_t seed, std::size_t attempt, std::uint64_t stream) {
  return splitmix64(splitmix64(seed ^ stream) + attempt);
}

Point3 centre_of(const Dims& d) {
  return {(static_cast<double>(d.nx) - 1.0) / 2.0, (static_cast<double>(d.ny) - 1.0) / 2.0,
          (static_cast<double>(d.nz) - 1.0) / 2.0};
}

std::array<double, 3> semi_axes(const SynthConfig& cfg) {
  return {cfg.radii[0] * static_cast<double>(cfg.dims.nx), cfg.radii[1] * static_cast<double>(cfg.dims.ny),
          cfg.radii[2] * static_cast<double>(cfg.dims.nz)};
}

double dist2(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// Paired intensity levels: the two sites farthest apart share a level, then
/// the farthest pair among the rest, and so on.
std::vector<double> paired_means(const std::vector<Point3>& sites) {
  const std::size_t n = sites.size();
  const std::size_t levels = (n + 1) / 2;
  std::vector<double> level_values(levels);
  for (std::size_t k = 0; k < levels; ++k) {
    level_values[k] = levels == 1 ? 0.6 : 0.3 + 0.6 * static_cast<double>(k) / static_cast<double>(levels - 1);
  }
  std::vector<double> means(n, 0.0);
  std::vector<bool> used(n, false);
  for (std::size_t k = 0; k < levels; ++k) {
    std::size_t bi = n, bj = n;
    double best = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (used[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (used[j]) continue;
        const double d = dist2(sites[i], sites[j]);
        if (d > best) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    if (bi == n) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!used[i]) bi = i;
      }
      used[bi] = true;
      means[bi] = level_values[k];
      continue;
    }
    used[bi] = used[bj] = true;
    means[bi] = means[bj] = level_values[k];
  }
  return means;
}

std::array<double, 9> rotation_matrix(const std::array<double, 3>& a) {
  const double cx = std::cos(a[0]), sx = std::sin(a[0]);
  const double cy = std::cos(a[1]), sy = std::sin(a[1]);
  const double cz = std::cos(a[2]), sz = std::sin(a[2]);
  // R = Rz * Ry * Rx, row-major.
  return {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
          sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
          -sy,     cy * sx,                cy * cx};
}

struct Drawn {
  LabelVolume labels;
  Volume image;
  SubjectParams params;
};

Drawn draw_subject(const SynthConfig& cfg, const SynthTemplate& tpl, std::uint64_t seed) {
  Rng rng(seed);
  Drawn out;
  SubjectParams& p = out.params;
  p.seed = seed;
  const double max_rot = cfg.rotation_deg * std::numbers::pi / 180.0;
  std::uniform_real_distribution<double> rot(-max_rot, max_rot);
  std::uniform_real_distribution<double> shift(-cfg.translation, cfg.translation);
  std::normal_distribution<double> displace(0.0, 1.0);
  for (auto& r : p.rotation) r = cfg.rotation_deg > 0.0 ? rot(rng) : 0.0;
  for (auto& t : p.translation) t = cfg.translation > 0.0 ? shift(rng) : 0.0;
  // Smooth displacement field: a few low-frequency plane waves per axis, scaled
  // so each coordinate's displacement has RMS `deformation`.
  constexpr std::size_t kWaves = 3;
  const double wavelength = 2.0 * static_cast<double>(std::max({cfg.dims.nx, cfg.dims.ny, cfg.dims.nz}));
  const double amplitude = cfg.deformation * std::sqrt(2.0 / static_cast<double>(kWaves));
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  struct Wave {
    Point3 k;
    double phase;
    double amplitude;
  };
  std::array<std::array<Wave, kWaves>, 3> waves{};
  for (auto& axis : waves) {
    for (auto& w : axis) {
      Point3 dir{displace(rng), displace(rng), displace(rng)};
      const double norm = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]) + 1e-12;
      for (auto& c : dir) c *= 2.0 * std::numbers::pi / (wavelength * norm);
      w = Wave{dir, phase(rng), amplitude};
    }
  }
  p.sites = tpl.sites;
  for (auto& s : p.sites) {
    const Point3 base = s;
    for (std::size_t a = 0; a < 3; ++a) {
      for (const auto& w : waves[a]) {
        s[a] += w.amplitude * std::sin(w.k[0] * base[0] + w.k[1] * base[1] + w.k[2] * base[2] + w.phase);
      }
    }
  }
  p.means = tpl.means;
  for (auto& m : p.means) m += cfg.region_mean_jitter * displace(rng);

  const Dims& d = cfg.dims;
  const Point3 centre = centre_of(d);
  const auto axes = semi_axes(cfg);
  const auto R = rotation_matrix(p.rotation);
  out.labels = LabelVolume(d, 0);
  out.image = Volume(d, 0.0f);
  for (std::size_t z = 0; z < d.nz; ++z) {
    for (std::size_t y = 0; y < d.ny; ++y) {
      for (std::size_t x = 0; x < d.nx; ++x) {
        const Point3 q{static_cast<double>(x) - centre[0] - p.translation[0],
                       static_cast<double>(y) - centre[1] - p.translation[1],
                       static_cast<double>(z) - centre[2] - p.translation[2]};
        // Template-frame position: u = R^T q.
        const Point3 u{R[0] * q[0] + R[3] * q[1] + R[6] * q[2], R[1] * q[0] + R[4] * q[1] + R[7] * q[2],
                       R[2] * q[0] + R[5] * q[1] + R[8] * q[2]};
        const double e = (u[0] / axes[0]) * (u[0] / axes[0]) + (u[1] / axes[1]) * (u[1] / axes[1]) +
                         (u[2] / axes[2]) * (u[2] / axes[2]);
        if (e > 1.0) continue;
        std::size_t best = 0;
        double best_d = dist2(u, p.sites[0]);
        for (std::size_t r = 1; r < p.sites.size(); ++r) {
          const double dd = dist2(u, p.sites[r]);
          if (dd < best_d) {
            best_d = dd;
            best = r;
          }
        }
        out.labels[linear_index(d, x, y, z)] = static_cast<std::uint16_t>(best + 1);
      }
    }
  }
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    const std::uint16_t l = out.labels[i];
    if (l == 0) continue;
    const double value = p.means[l - 1u] + cfg.noise_std * noise(rng);
    // Foreground stays strictly positive so the intensity mask equals the label mask.
    out.image[i] = static_cast<float>(std::max(value, 1e-3));
  }
  return out;
}

bool partition_ok(const LabelVolume& labels, std::size_t n_regions) {
  std::vector<std::size_t> counts(n_regions + 1, 0);
  for (auto l : labels.labels()) ++counts[l];
  for (std::size_t r = 1; r <= n_regions; ++r) {
    if (counts[r] == 0) return false;
  }
  for (std::size_t r = 1; r <= n_regions; ++r) {
    if (connected_components(labels, static_cast<std::uint16_t>(r)) != 1) return false;
  }
  return true;
}

std::string subject_name(std::size_t i) {
  std::ostringstream s;
  s << "subject_" << std::setw(3) << std::setfill('0') << i;
  return s.str();
}

json config_json(const SynthConfig& cfg) {
  json j;
  j["dims"] = {cfg.dims.nx, cfg.dims.ny, cfg.dims.nz};
  j["n_regions"] = cfg.n_regions;
  j["seed"] = cfg.seed;
  j["region_means"] = cfg.region_means;
  j["region_mean_jitter"] = cfg.region_mean_jitter;
  j["noise_std"] = cfg.noise_std;
  j["deformation"] = cfg.deformation;
  j["rotation_deg"] = cfg.rotation_deg;
  j["translation"] = cfg.translation;
  j["radii"] = cfg.radii;
  j["n_train"] = cfg.n_train;
  j["n_test"] = cfg.n_test;
  j["max_retries"] = cfg.max_retries;
  return j;
}

SynthConfig config_from(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("synth config must be a JSON object");
  SynthConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "dims") {
      const auto v = value.get<std::vector<std::size_t>>();
      if (v.size() != 3) throw std::invalid_argument("synth.dims must have three entries");
      cfg.dims = Dims{v[0], v[1], v[2]};
    } else if (key == "n_regions") {
      cfg.n_regions = value.get<std::size_t>();
    } else if (key == "seed") {
      cfg.seed = value.get<std::uint64_t>();
    } else if (key == "region_means") {
      cfg.region_means = value.get<std::vector<double>>();
    } else if (key == "region_mean_jitter") {
      cfg.region_mean_jitter = value.get<double>();
    } else if (key == "noise_std") {
      cfg.noise_std = value.get<double>();
    } else if (key == "deformation") {
      cfg.deformation = value.get<double>();
    } else if (key == "rotation_deg") {
      cfg.rotation_deg = value.get<double>();
    } else if (key == "translation") {
      cfg.translation = value.get<double>();
    } else if (key == "radii") {
      cfg.radii = value.get<std::array<double, 3>>();
    } else if (key == "n_train") {
      cfg.n_train = value.get<std::size_t>();
    } else if (key == "n_test") {
      cfg.n_test = value.get<std::size_t>();
    } else if (key == "max_retries") {
      cfg.max_retries = value.get<std::size_t>();
    } else {
      throw std::invalid_argument("unknown synth config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace

void SynthConfig::validate() const {
  if (dims.nx < 8 || dims.ny < 8 || dims.nz < 8) throw std::invalid_argument("synth dims must be at least 8 per axis");
  if (n_regions < 2 || n_regions > 65535) throw std::invalid_argument("synth n_regions must be in 2..65535");
  if (!region_means.empty() && region_means.size() != n_regions) {
    throw std::invalid_argument("synth region_means must be empty or list one mean per region");
  }
  for (double m : region_means) {
    if (!std::isfinite(m)) throw std::invalid_argument("synth region_means must be finite");
  }
  const auto non_negative = [](double v, const char* name) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument(std::string("synth ") + name + " must be >= 0");
  };
  non_negative(region_mean_jitter, "region_mean_jitter");
  non_negative(noise_std, "noise_std");
  non_negative(deformation, "deformation");
  non_negative(rotation_deg, "rotation_deg");
  non_negative(translation, "translation");
  for (double r : radii) {
    if (!(r > 0.0 && r <= 0.5)) throw std::invalid_argument("synth radii must be in (0, 0.5]");
  }
  if (max_retries == 0) throw std::invalid_argument("synth max_retries must be positive");
}

SynthTemplate make_template(const SynthConfig& cfg) {
  cfg.validate();
  const auto axes = semi_axes(cfg);
  const double volume = 4.0 / 3.0 * std::numbers::pi * axes[0] * axes[1] * axes[2];
  const double min_sep = 0.8 * std::cbrt(volume / static_cast<double>(cfg.n_regions));
  constexpr double kInner = 0.7;

  for (std::size_t attempt = 0; attempt < cfg.max_retries; ++attempt) {
    const std::uint64_t seed = attempt_seed(cfg.seed, attempt, 0x7E3D1A7Eull);
    Rng rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    SynthTemplate tpl;
    tpl.seed_used = seed;
    std::size_t tries = 0;
    const std::size_t max_tries = 20000 * cfg.n_regions;
    while (tpl.sites.size() < cfg.n_regions && tries++ < max_tries) {
      const Point3 c{unit(rng), unit(rng), unit(rng)};
      if (c[0] * c[0] + c[1] * c[1] + c[2] * c[2] > 1.0) continue;
      const Point3 s{kInner * axes[0] * c[0], kInner * axes[1] * c[1], kInner * axes[2] * c[2]};
      const bool far = std::all_of(tpl.sites.begin(), tpl.sites.end(),
                                   [&](const Point3& o) { return dist2(o, s) >= min_sep * min_sep; });
      if (far) tpl.sites.push_back(s);
    }
    if (tpl.sites.size() < cfg.n_regions) continue;
    tpl.means = cfg.region_means.empty() ? paired_means(tpl.sites) : cfg.region_means;
    return tpl;
  }
  throw std::runtime_error("could not place " + std::to_string(cfg.n_regions) + " separated sites after " +
                           std::to_string(cfg.max_retries) + " attempts");
}

Atlas generate_atlas(const SynthConfig& cfg, std::uint64_t subject_seed_value, SubjectParams* params) {
  const SynthTemplate tpl = make_template(cfg);
  for (std::size_t attempt = 0; attempt < cfg.max_retries; ++attempt) {
    Drawn d = draw_subject(cfg, tpl, attempt_seed(subject_seed_value, attempt, 0x5B1EC7ull));
    if (!partition_ok(d.labels, cfg.n_regions)) {
      log_info("subject seed " + std::to_string(subject_seed_value) + " attempt " + std::to_string(attempt) +
               " gave a degenerate partition; redrawing");
      continue;
    }
    if (params != nullptr) *params = d.params;
    return Atlas(std::move(d.image), std::move(d.labels), "seed_" + std::to_string(subject_seed_value));
  }
  throw std::runtime_error("no valid partition for subject seed " + std::to_string(subject_seed_value) + " after " +
                           std::to_string(cfg.max_retries) + " attempts");
}

std::uint64_t subject_seed(std::uint64_t master_seed, std::size_t index) {
  return splitmix64(master_seed * 0x100000001B3ull + index);
}

std::vector<Atlas> generate_dataset(const SynthConfig& cfg, std::size_t n_subjects, std::size_t threads) {
  std::vector<std::optional<Atlas>> slots(n_subjects);
  parallel_chunks(threads, n_subjects, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      Atlas a = generate_atlas(cfg, subject_seed(cfg.seed, i));
      a.id = subject_name(i);
      slots[i].emplace(std::move(a));
    }
  });
  std::vector<Atlas> out;
  out.reserve(n_subjects);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::size_t connected_components(const LabelVolume& labels, std::uint16_t region) {
  const Dims& d = labels.dims();
  std::vector<std::uint8_t> seen(labels.size(), 0);
  std::vector<std::size_t> stack;
  std::size_t components = 0;
  for (std::size_t start = 0; start < labels.size(); ++start) {
    if (labels[start] != region || seen[start]) continue;
    ++components;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      const VoxelCoord c = coord_of(d, i);
      const VoxelCoord nbrs[6] = {{c.x - 1, c.y, c.z}, {c.x + 1, c.y, c.z}, {c.x, c.y - 1, c.z},
                                  {c.x, c.y + 1, c.z}, {c.x, c.y, c.z - 1}, {c.x, c.y, c.z + 1}};
      for (const auto& n : nbrs) {
        if (!in_bounds(d, n)) continue;
        const std::size_t j = linear_index(d, static_cast<std::size_t>(n.x), static_cast<std::size_t>(n.y),
                                           static_cast<std::size_t>(n.z));
        if (labels[j] == region && !seen[j]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }
  return components;
}

DatasetManifest write_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir, std::size_t threads) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  const std::size_t n = cfg.n_train + cfg.n_test;
  if (n == 0) throw std::invalid_argument("dataset needs at least one subject");
  const auto atlases = generate_dataset(cfg, n, threads);

  DatasetManifest manifest;
  manifest.master_seed = cfg.seed;
  manifest.config = cfg;
  for (std::size_t i = 0; i < n; ++i) {
    DatasetEntry e;
    e.id = atlases[i].id;
    e.seed = subject_seed(cfg.seed, i);
    e.image = e.id + "_image.vol";
    e.labels = e.id + "_labels.lbl";
    e.split = i < cfg.n_train ? "train" : "test";
    save_volume(atlases[i].image, out_dir / e.image);
    save_labels(atlases[i].labels, out_dir / e.labels);
    manifest.subjects.push_back(e);
  }

  json j;
  j["format"] = "vseg-dataset-1";
  j["master_seed"] = manifest.master_seed;
  j["config"] = config_json(cfg);
  j["subjects"] = json::array();
  for (const auto& e : manifest.subjects) {
    j["subjects"].push_back({{"id", e.id}, {"seed", e.seed}, {"image", e.image}, {"labels", e.labels}, {"split", e.split}});
  }
  std::ofstream out(out_dir / "manifest.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (out_dir / "manifest.json").string());
  out << j.dump(2) << '\n';
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "vseg-dataset-1") throw FormatError(path.string() + ": not a dataset manifest");
  DatasetManifest m;
  try {
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.config = config_from(j.at("config"));
    for (const auto& s : j.at("subjects")) {
      DatasetEntry e;
      e.id = s.at("id").get<std::string>();
      e.seed = s.at("seed").get<std::uint64_t>();
      e.image = s.at("image").get<std::string>();
      e.labels = s.at("labels").get<std::string>();
      e.split = s.at("split").get<std::string>();
      m.subjects.push_back(e);
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

std::vector<Atlas> load_split(const std::filesystem::path& dir, const DatasetManifest& manifest,
                              const std::string& split) {
  std::vector<Atlas> out;
  for (const auto& e : manifest.subjects) {
    if (e.split != split) continue;
    out.emplace_back(load_volume(dir / e.image), load_labels(dir / e.labels), e.id);
  }
  return out;
}

std::string synth_config_to_json(const SynthConfig& cfg) { return config_json(cfg).dump(); }

SynthConfig synth_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("synth config: ") + e.what());
  }
  try {
    return config_from(j);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("synth config: ") + e.what());
  }
}

}  // namespace vseg
