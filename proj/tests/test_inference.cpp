#include <doctest.h>

#include <json.hpp>

#include "test_util.hpp"
#include "vseg/inference.hpp"
#include "vseg/synthdata.hpp"

using namespace vseg;
using namespace vseg::testing;

namespace {

struct Fixture {
  Atlas atlas;
  NetworkConfig cfg;
  NetworkModel<float> stage1;
  NetworkModel<float> full;
};

Fixture make_fixture() {
  SynthConfig sc;
  sc.dims = {16, 16, 16};
  sc.n_regions = 3;
  sc.seed = 3;
  NetworkConfig cfg = tiny_network(false);
  Rng rng(1);
  auto stage1 = build(cfg, false, rng);
  auto full = build(cfg, true, rng);
  return Fixture{generate_atlas(sc, 1), cfg, std::move(stage1), std::move(full)};
}

}  // namespace

TEST_CASE("segment_once labels masked voxels only and is thread-independent") {
  const auto f = make_fixture();
  const Mask mask = mask_from_intensity(f.atlas.image);
  InferenceOptions one;
  one.block_size = 100;
  const auto a = segment_once(f.stage1, f.atlas.image, f.cfg.features, nullptr, mask, one);
  CHECK(a.dims() == f.atlas.image.dims());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (mask[i]) {
      CHECK(a[i] >= 1);
      CHECK(a[i] <= 3);
    } else {
      CHECK(a[i] == 0);
    }
  }
  InferenceOptions many = one;
  many.threads = 3;
  CHECK(segment_once(f.stage1, f.atlas.image, f.cfg.features, nullptr, mask, many) == a);
  many.block_size = 7;
  CHECK(segment_once(f.stage1, f.atlas.image, f.cfg.features, nullptr, mask, many) == a);
}

TEST_CASE("segment_once checks that centroids match the model") {
  const auto f = make_fixture();
  const Mask mask = mask_from_intensity(f.atlas.image);
  const auto cs = compute_centroids(f.atlas.labels, 3);
  CHECK_THROWS_AS(segment_once(f.stage1, f.atlas.image, f.cfg.features, &cs, mask), std::invalid_argument);
  CHECK_THROWS_AS(segment_once(f.full, f.atlas.image, f.cfg.features, nullptr, mask), std::invalid_argument);
  FeatureConfig other = f.cfg.features;
  other.a = 7;
  CHECK_THROWS_AS(segment_once(f.stage1, f.atlas.image, other, nullptr, mask), std::invalid_argument);
}

TEST_CASE("changed fraction counts masked disagreements") {
  LabelVolume a({4, 1, 1}, std::vector<std::uint16_t>{1, 2, 3, 0});
  LabelVolume b({4, 1, 1}, std::vector<std::uint16_t>{1, 3, 3, 2});
  Mask m{{4, 1, 1}, {1, 1, 1, 0}};
  CHECK(changed_fraction(a, b, m) == doctest::Approx(1.0 / 3.0));
  CHECK(changed_fraction(a, b) == doctest::Approx(0.5));
  CHECK(changed_fraction(a, a, m) == 0.0);
}

TEST_CASE("refinement records one changed fraction per round and stops at eps") {
  const auto f = make_fixture();
  const Mask mask = mask_from_intensity(f.atlas.image);
  const auto r0 = segment_refined(f.stage1, f.full, f.atlas.image, f.cfg.features, mask, 0, 0.0);
  CHECK(r0.iterations == 0);
  CHECK(r0.labels == r0.initial_labels);
  CHECK(r0.labels == segment_once(f.stage1, f.atlas.image, f.cfg.features, nullptr, mask));

  const auto r1 = segment_refined(f.stage1, f.full, f.atlas.image, f.cfg.features, mask, 10, 1.0);
  CHECK(r1.iterations == 1);
  CHECK(r1.converged);
  CHECK(r1.changed_fraction.size() == 1);

  const auto r = segment_refined(f.stage1, f.full, f.atlas.image, f.cfg.features, mask, 4, 0.0);
  CHECK(r.changed_fraction.size() == r.iterations);
  CHECK(r.iterations <= 4);
  if (r.converged) CHECK(r.changed_fraction.back() == 0.0);
  const auto cs = compute_centroids(r.iterations > 1 ? segment_refined(f.stage1, f.full, f.atlas.image, f.cfg.features,
                                                                        mask, r.iterations - 1, 0.0)
                                                           .labels
                                                     : r.initial_labels,
                                    3);
  CHECK(r.centroids.centroids == cs.centroids);

  const auto report = nlohmann::json::parse(run_report_json(r, 17, R"({"k": 1})"));
  CHECK(report.at("rounds") == r.iterations);
  CHECK(report.at("changed_fractions").size() == r.iterations);
  CHECK(report.at("seed") == 17);
  CHECK(report.at("config").at("k") == 1);
}

TEST_CASE("refinement rejects swapped models") {
  const auto f = make_fixture();
  const Mask mask = mask_from_intensity(f.atlas.image);
  CHECK_THROWS_AS(segment_refined(f.full, f.full, f.atlas.image, f.cfg.features, mask), std::invalid_argument);
  CHECK_THROWS_AS(segment_refined(f.stage1, f.stage1, f.atlas.image, f.cfg.features, mask), std::invalid_argument);
}

TEST_CASE("volume sweep labels equal the per-datapoint argmax of the forward pass") {
  const auto f = make_fixture();
  const Mask mask = mask_from_labels(f.atlas.labels);
  const auto cs = compute_centroids(f.atlas.labels, 3);
  const auto labels = segment_once(f.full, f.atlas.image, f.cfg.features, &cs, mask);
  for (std::size_t i = 0; i < labels.size(); i += 7) {
    if (!mask[i]) continue;
    const auto fv = extract_features(f.atlas.image, coord_of(labels.dims(), i), f.cfg.features, &cs);
    CHECK(labels[i] == argmax_class<float>(f.full.forward(fv)) + 1);
  }
}
