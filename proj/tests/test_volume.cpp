#include <doctest.h>

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "vseg/volume.hpp"

using namespace vseg;

namespace {

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

void write_raw(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

}  // namespace

TEST_CASE("linear index and coordinates are inverse with x fastest") {
  const Dims d{5, 4, 3};
  CHECK(linear_index(d, 1, 0, 0) == 1);
  CHECK(linear_index(d, 0, 1, 0) == 5);
  CHECK(linear_index(d, 0, 0, 1) == 20);
  for (std::size_t i = 0; i < d.count(); ++i) {
    const auto c = coord_of(d, i);
    CHECK(linear_index(d, static_cast<std::size_t>(c.x), static_cast<std::size_t>(c.y), static_cast<std::size_t>(c.z)) == i);
  }
}

TEST_CASE("voxel access is bounds checked") {
  Volume v({2, 2, 2}, 1.5f);
  CHECK(voxel_at(v, {1, 1, 1}) == 1.5f);
  CHECK_THROWS_AS(voxel_at(v, {2, 0, 0}), std::out_of_range);
  CHECK_THROWS_AS(voxel_at(v, {0, -1, 0}), std::out_of_range);
  CHECK_THROWS_AS(Volume({2, 2, 2}, std::vector<float>(7)), std::invalid_argument);
  CHECK_THROWS_AS(Atlas(Volume({2, 2, 2}), LabelVolume({2, 2, 1}), "x"), std::invalid_argument);
}

TEST_CASE("volume and label files round-trip bit-exactly") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-1e6f, 1e6f);
  Volume v({7, 3, 5});
  for (auto& x : v.data()) x = u(rng);
  v[0] = -0.0f;
  v[1] = std::numeric_limits<float>::denorm_min();
  v[2] = std::numeric_limits<float>::max();
  const auto vp = temp_file("vseg_rt.vol");
  save_volume(v, vp);
  const Volume back = load_volume(vp);
  REQUIRE(back.dims() == v.dims());
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(std::bit_cast<std::uint32_t>(back[i]) == std::bit_cast<std::uint32_t>(v[i]));

  LabelVolume l({4, 4, 2});
  for (std::size_t i = 0; i < l.size(); ++i) l[i] = static_cast<std::uint16_t>(i * 2053 % 65536);
  const auto lp = temp_file("vseg_rt.lbl");
  save_labels(l, lp);
  CHECK(load_labels(lp) == l);
  CHECK(l.max_label() == *std::max_element(l.labels().begin(), l.labels().end()));
  std::filesystem::remove(vp);
  std::filesystem::remove(lp);
}

TEST_CASE("volume files are little-endian after a text header") {
  Volume v({1, 1, 2});
  v[0] = 1.0f;
  v[1] = -2.0f;
  const auto p = temp_file("vseg_le.vol");
  save_volume(v, p);
  std::ifstream in(p, std::ios::binary);
  std::string header;
  std::getline(in, header);
  CHECK(header == "VSEG1 f32 1 1 2");
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  CHECK(bytes[0] == 0x00);
  CHECK(bytes[3] == 0x3F);  // 1.0f = 0x3F800000
  CHECK(bytes[7] == 0xC0);  // -2.0f = 0xC0000000
  std::filesystem::remove(p);
}

TEST_CASE("malformed files raise format errors") {
  const auto p = temp_file("vseg_bad.vol");
  write_raw(p, "NOPE f32 1 1 1\n\0\0\0\0");
  CHECK_THROWS_AS(load_volume(p), FormatError);
  write_raw(p, "VSEG1 f32 2 1 1\n\0\0\0\0");
  CHECK_THROWS_AS(load_volume(p), FormatError);
  write_raw(p, std::string("VSEG1 f32 1 1 1\n") + std::string("\x00\x00\xc0\x7f", 4));  // NaN
  CHECK_THROWS_AS(load_volume(p), FormatError);
  write_raw(p, std::string("VSEG1 u16 1 1 1\n") + std::string("\x01\x00", 2));
  CHECK_THROWS_AS(load_volume(p), FormatError);
  CHECK(load_labels(p)[0] == 1);
  CHECK_THROWS_AS(load_volume(temp_file("vseg_missing_file.vol")), FormatError);
  std::filesystem::remove(p);
}

TEST_CASE("masks from intensity and labels") {
  Volume v({3, 1, 1}, std::vector<float>{0.0f, 0.2f, -1.0f});
  const Mask m = mask_from_intensity(v);
  CHECK(m.values == std::vector<std::uint8_t>{0, 1, 0});
  CHECK(m.count() == 1);
  LabelVolume l({3, 1, 1}, std::vector<std::uint16_t>{2, 0, 1});
  CHECK(mask_from_labels(l).values == std::vector<std::uint8_t>{1, 0, 1});
}
