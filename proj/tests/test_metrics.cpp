#include <doctest.h>

#include <random>

#include "vseg/metrics.hpp"

using namespace vseg;

namespace {

LabelVolume random_labels(Dims d, std::uint16_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> u(0, n);
  LabelVolume l(d);
  for (auto& x : l.labels()) x = static_cast<std::uint16_t>(u(rng));
  return l;
}

}  // namespace

TEST_CASE("dice matches the set-overlap definition") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = random_labels({6, 5, 4}, 4, rng), b = random_labels({6, 5, 4}, 4, rng);
    for (std::uint16_t r = 1; r <= 4; ++r) {
      std::size_t inter = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        na += a[i] == r;
        nb += b[i] == r;
        inter += a[i] == r && b[i] == r;
      }
      const double expected = na + nb ? 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb) : 0.0;
      CHECK(dice(a, b, r) == doctest::Approx(expected).epsilon(1e-15));
      CHECK(dice(a, b, r) == dice(b, a, r));
    }
  }
}

TEST_CASE("identical labellings give dice 1 and error 0") {
  std::mt19937_64 rng(2);
  const auto a = random_labels({5, 5, 5}, 3, rng);
  const auto rep = evaluate(a, a, 3);
  CHECK(rep.mean_dice == 1.0);
  CHECK(rep.error_rate == 0.0);
}

TEST_CASE("error rate counts foreground-truth voxels only") {
  LabelVolume truth({4, 1, 1}, std::vector<std::uint16_t>{0, 1, 1, 2});
  LabelVolume pred({4, 1, 1}, std::vector<std::uint16_t>{2, 1, 2, 2});
  const auto rep = evaluate(pred, truth, 2);
  CHECK(rep.error_rate == doctest::Approx(1.0 / 3.0));
  CHECK(error_rate(pred, truth, mask_from_labels(truth)) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("regions absent from truth are excluded; regions missed in prediction score 0") {
  LabelVolume truth({4, 1, 1}, std::vector<std::uint16_t>{1, 1, 2, 2});
  LabelVolume pred({4, 1, 1}, std::vector<std::uint16_t>{1, 1, 1, 1});
  const auto rep = evaluate(pred, truth, 3);
  REQUIRE(rep.per_region_dice.size() == 3);
  CHECK(*rep.per_region_dice[0] == doctest::Approx(2.0 * 2 / 6));
  CHECK(*rep.per_region_dice[1] == 0.0);
  CHECK_FALSE(rep.per_region_dice[2].has_value());
  CHECK(rep.mean_dice == doctest::Approx((4.0 / 6.0 + 0.0) / 2.0));
  const std::string csv = rep.to_csv();
  CHECK(csv.rfind("region,dice,true_count,pred_count\n", 0) == 0);
  CHECK(csv.find("\n3,nan,0,0\n") != std::string::npos);
  CHECK(rep.summary_line().rfind("mean_dice=", 0) == 0);
  CHECK(rep.summary_line().find(" error_rate=") != std::string::npos);
}

TEST_CASE("mean dice is invariant to a consistent relabelling") {
  std::mt19937_64 rng(3);
  const std::vector<std::uint16_t> perm{0, 3, 1, 4, 2};
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_labels({5, 4, 3}, 4, rng), b = random_labels({5, 4, 3}, 4, rng);
    const auto base = evaluate(a, b, 4);
    for (auto& x : a.labels()) x = perm[x];
    for (auto& x : b.labels()) x = perm[x];
    const auto moved = evaluate(a, b, 4);
    CHECK(moved.mean_dice == doctest::Approx(base.mean_dice).epsilon(1e-15));
    CHECK(moved.error_rate == base.error_rate);
  }
}

TEST_CASE("dims mismatch is rejected") {
  CHECK_THROWS_AS(evaluate(LabelVolume({2, 2, 2}), LabelVolume({2, 2, 1}), 2), std::invalid_argument);
}
