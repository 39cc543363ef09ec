#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "vseg/features.hpp"

using namespace vseg;
using namespace vseg::testing;

namespace {

Volume random_volume(Dims d, Rng& rng) {
  std::uniform_real_distribution<float> u(0.1f, 1.0f);
  Volume v(d);
  for (auto& x : v.data()) x = u(rng);
  return v;
}

float sample_or_zero(const Volume& v, std::int64_t x, std::int64_t y, std::int64_t z) {
  const VoxelCoord c{x, y, z};
  return in_bounds(v.dims(), c) ? voxel_at(v, c) : 0.0f;
}

}  // namespace

TEST_CASE("feature vector lengths for the full-scale configuration") {
  const FeatureConfig cfg{13, 29, 29, 3, 134};
  CHECK(cfg.total_length(true) == 7377);
  CHECK(cfg.total_length(false) == 7243);

  Rng rng(1);
  const Volume v = random_volume({40, 40, 40}, rng);
  LabelVolume labels({40, 40, 40}, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<std::uint16_t>(1 + i % 134);
  const auto cs = compute_centroids(labels, 134);
  CHECK(extract_features(v, {20, 20, 20}, cfg, &cs).size() == 7377);
  CHECK(extract_features(v, {20, 20, 20}, cfg, nullptr).size() == 7243);
}

TEST_CASE("feature config rejects even sides and zero values") {
  CHECK_THROWS_AS((FeatureConfig{12, 29, 29, 3, 4}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((FeatureConfig{13, 29, 29, 0, 4}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((FeatureConfig{13, 29, 29, 3, 0}.validate()), std::invalid_argument);
  CHECK_NOTHROW((FeatureConfig{13, 29, 29, 3, 4}.validate()));
}

TEST_CASE("3D patch equals direct sampling with zero padding") {
  Rng rng(2);
  const Volume v = random_volume({9, 8, 7}, rng);
  for (const VoxelCoord c : {VoxelCoord{4, 4, 3}, VoxelCoord{0, 0, 0}, VoxelCoord{8, 7, 6}, VoxelCoord{1, 6, 2}}) {
    const auto p = extract_patch3d(v, c, 5);
    REQUIRE(p.size() == 125);
    std::size_t idx = 0;
    for (int k = -2; k <= 2; ++k)
      for (int j = -2; j <= 2; ++j)
        for (int i = -2; i <= 2; ++i) CHECK(p[idx++] == sample_or_zero(v, c.x + i, c.y + j, c.z + k));
    CHECK(p[62] == voxel_at(v, c));
  }
}

TEST_CASE("orthogonal patches are slices through the centre voxel") {
  Rng rng(3);
  const Volume v = random_volume({10, 11, 12}, rng);
  const VoxelCoord c{3, 9, 5};
  const auto planes = extract_ortho2d(v, c, 7);
  for (const auto& p : planes) CHECK(p[24] == voxel_at(v, c));
  for (int r = -3; r <= 3; ++r) {
    for (int q = -3; q <= 3; ++q) {
      const std::size_t idx = static_cast<std::size_t>((r + 3) * 7 + q + 3);
      CHECK(planes[0][idx] == sample_or_zero(v, c.x, c.y + q, c.z + r));
      CHECK(planes[1][idx] == sample_or_zero(v, c.x + q, c.y, c.z + r));
      CHECK(planes[2][idx] == sample_or_zero(v, c.x + q, c.y + r, c.z));
    }
  }
}

TEST_CASE("even patch sides span offsets -side/2 .. side/2 - 1") {
  Volume v({6, 6, 6});
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i + 1);
  const auto planes = extract_ortho2d(v, {3, 3, 3}, 4);
  CHECK(planes[2][0] == sample_or_zero(v, 1, 1, 3));
  CHECK(planes[2][15] == sample_or_zero(v, 4, 4, 3));
}

TEST_CASE("downscale equals stride-s mean pooling") {
  Rng rng(4);
  for (std::size_t s : {1u, 2u, 3u, 4u}) {
    const std::size_t c = 5, side = s * c;
    std::vector<float> patch(side * side);
    std::uniform_real_distribution<float> u(0, 1);
    for (auto& x : patch) x = u(rng);
    const auto out = downscale(patch, side, s);
    for (std::size_t i = 0; i < c; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        double acc = 0;
        for (std::size_t a = 0; a < s; ++a)
          for (std::size_t b = 0; b < s; ++b) acc += patch[(i * s + a) * side + j * s + b];
        CHECK(out[i * c + j] == static_cast<float>(acc / static_cast<double>(s * s)));
      }
    }
  }
  CHECK(downscale(std::vector<float>(9, 2.0f), 3, 1) == std::vector<float>(9, 2.0f));
  CHECK_THROWS_AS(downscale(std::vector<float>(16, 0.0f), 4, 3), std::invalid_argument);
}

TEST_CASE("downscaled patches compose extraction at s*c with downscale") {
  Rng rng(5);
  const Volume v = random_volume({20, 20, 20}, rng);
  for (const VoxelCoord c : {VoxelCoord{10, 10, 10}, VoxelCoord{1, 18, 3}}) {
    const auto direct = extract_ortho2d_downscaled(v, c, 5, 3);
    const auto full = extract_ortho2d(v, c, 15);
    for (std::size_t p = 0; p < 3; ++p) CHECK(direct[p] == downscale(full[p], 15, 3));
  }
}

TEST_CASE("normalization constant averages over pairs i <= j") {
  const std::vector<Point3> pts{{0, 0, 0}, {3, 0, 0}, {0, 4, 0}};
  // Distances 3, 4, 5 over 6 pairs including self pairs.
  CHECK(normalization_constant(pts) == doctest::Approx(12.0 / 6.0));
  CHECK(normalization_constant(std::vector<Point3>{{1, 2, 3}}) == 0.0);

  Rng rng(6);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Point3> p(2 + static_cast<std::size_t>(trial));
    for (auto& q : p) q = {u(rng), u(rng), u(rng)};
    double sum = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = i; j < p.size(); ++j, ++pairs)
        sum += std::hypot(p[i][0] - p[j][0], p[i][1] - p[j][1], p[i][2] - p[j][2]);
    CHECK(pairs == p.size() * (p.size() + 1) / 2);
    CHECK(normalization_constant(p) == doctest::Approx(sum / static_cast<double>(pairs)).epsilon(1e-12));
  }
}

TEST_CASE("centroid distances are invariant to joint rigid motion and scaling") {
  Rng rng(7);
  std::uniform_real_distribution<double> u(-20, 20), scale(0.2, 5.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Point3> pts(2 + static_cast<std::size_t>(trial % 9));
    for (auto& p : pts) p = {u(rng), u(rng), u(rng)};
    const Point3 voxel{u(rng), u(rng), u(rng)};
    const auto base = centroid_distances(voxel, set_of(pts));

    const auto r = random_rotation(rng);
    const Point3 t{u(rng), u(rng), u(rng)};
    std::vector<Point3> moved;
    for (const auto& p : pts) moved.push_back(apply(r, t, p));
    const auto rigid = centroid_distances(apply(r, t, voxel), set_of(moved));

    const double k = scale(rng);
    std::vector<Point3> scaled;
    for (const auto& p : pts) scaled.push_back({k * p[0], k * p[1], k * p[2]});
    const auto sc = centroid_distances(Point3{k * voxel[0], k * voxel[1], k * voxel[2]}, set_of(scaled));
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(std::abs(rigid[i] - base[i]) <= 1e-9);
      CHECK(std::abs(sc[i] - base[i]) <= 1e-9);
    }
  }
}

TEST_CASE("centroids are region means; absent regions take the mean of present centroids") {
  LabelVolume labels({4, 4, 4}, 0);
  labels[linear_index(labels.dims(), 0, 0, 0)] = 1;
  labels[linear_index(labels.dims(), 2, 0, 0)] = 1;
  labels[linear_index(labels.dims(), 3, 3, 3)] = 2;
  const auto cs = compute_centroids(labels, 3);
  CHECK(cs.centroids[0] == Point3{1, 0, 0});
  CHECK(cs.centroids[1] == Point3{3, 3, 3});
  CHECK_FALSE(cs.present[2]);
  CHECK(cs.absent_count() == 1);
  CHECK(cs.centroids[2] == Point3{2, 1.5, 1.5});

  LabelVolume single({3, 3, 3}, 1);
  const auto one = compute_centroids(single, 1);
  CHECK(one.d_norm == 1.0);
  CHECK(centroid_distances(VoxelCoord{1, 1, 1}, one)[0] == 0.0);
}

TEST_CASE("distance corruption adds zero-mean noise of the requested spread") {
  Rng rng(8);
  std::vector<float> d(20000, 1.0f);
  const auto out = corrupt_distances(d, 0.05, rng);
  double mean = 0, var = 0;
  for (float x : out) mean += x - 1.0;
  mean /= static_cast<double>(out.size());
  for (float x : out) var += (x - 1.0 - mean) * (x - 1.0 - mean);
  var /= static_cast<double>(out.size() - 1);
  CHECK(std::abs(mean) < 3 * 0.05 / std::sqrt(20000.0));
  CHECK(std::sqrt(var) == doctest::Approx(0.05).epsilon(0.03));
  CHECK(corrupt_distances(d, 0.0, rng) == d);
  CHECK_THROWS_AS(corrupt_distances(d, -1.0, rng), std::invalid_argument);
}

TEST_CASE("centroid files round-trip exactly") {
  CentroidSet cs = set_of({{1.0 / 3.0, 2.5, 1e-7}, {10.125, 0.1, 7.0}});
  cs.present = {true, false};
  const auto path = std::filesystem::temp_directory_path() / "vseg_centroids_test.txt";
  save_centroids(cs, path);
  const auto back = load_centroids(path);
  CHECK(back.centroids == cs.centroids);
  CHECK(back.d_norm == cs.d_norm);
  std::filesystem::remove(path);
}
