#include "vseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace vseg {

namespace {

template <typename Word>
void store_le(Word value, unsigned char* out) {
  for (std::size_t i = 0; i < sizeof(Word); ++i) {
    out[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFFu);
  }
}

template <typename Word>
Word load_le(const unsigned char* in) {
  Word value = 0;
  for (std::size_t i = 0; i < sizeof(Word); ++i) {
    value |= static_cast<Word>(static_cast<Word>(in[i]) << (8 * i));
  }
  return value;
}

struct Header {
  std::string kind;
  Dims dims;
};

Header read_header(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError("missing header in " + path.string());
  }
  std::istringstream fields(line);
  std::string magic;
  Header h;
  long long nx = 0, ny = 0, nz = 0;
  if (!(fields >> magic >> h.kind >> nx >> ny >> nz) || magic != "VSEG1") {
    throw FormatError("malformed header in " + path.string() + ": '" + line + "'");
  }
  std::string trailing;
  if (fields >> trailing) {
    throw FormatError("trailing header tokens in " + path.string());
  }
  if (nx <= 0 || ny <= 0 || nz <= 0) {
    throw FormatError("non-positive dims in " + path.string());
  }
  h.dims = {static_cast<std::size_t>(nx), static_cast<std::size_t>(ny), static_cast<std::size_t>(nz)};
  return h;
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t expected,
                                        const std::filesystem::path& path) {
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != expected) {
    throw FormatError("payload size mismatch in " + path.string() + ": expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(bytes.size()));
  }
  return bytes;
}

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  return out;
}

void write_header(std::ostream& out, const char* kind, const Dims& d) {
  out << "VSEG1 " << kind << ' ' << d.nx << ' ' << d.ny << ' ' << d.nz << '\n';
}

}  // namespace

Volume::Volume(Dims dims, float fill) : dims_(dims), data_(dims.count(), fill) {}

Volume::Volume(Dims dims, std::vector<float> data) : dims_(dims), data_(std::move(data)) {
  if (data_.size() != dims_.count()) {
    throw std::invalid_argument("volume data length does not match dims");
  }
}

LabelVolume::LabelVolume(Dims dims, std::uint16_t fill) : dims_(dims), labels_(dims.count(), fill) {}

LabelVolume::LabelVolume(Dims dims, std::vector<std::uint16_t> labels) : dims_(dims), labels_(std::move(labels)) {
  if (labels_.size() != dims_.count()) {
    throw std::invalid_argument("label data length does not match dims");
  }
}

std::uint16_t LabelVolume::max_label() const {
  return labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end());
}

Atlas::Atlas(Volume image_, LabelVolume labels_, std::string id_)
    : image(std::move(image_)), labels(std::move(labels_)), id(std::move(id_)) {
  if (!(image.dims() == labels.dims())) {
    throw std::invalid_argument("atlas '" + id + "': image and label dims differ");
  }
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](auto v) { return v != 0; }));
}

Mask mask_from_intensity(const Volume& v, float threshold) {
  Mask m{v.dims(), std::vector<std::uint8_t>(v.size())};
  for (std::size_t i = 0; i < v.size(); ++i) m.values[i] = v[i] > threshold ? 1 : 0;
  return m;
}

Mask mask_from_labels(const LabelVolume& labels) {
  Mask m{labels.dims(), std::vector<std::uint8_t>(labels.size())};
  for (std::size_t i = 0; i < labels.size(); ++i) m.values[i] = labels[i] != 0 ? 1 : 0;
  return m;
}

float voxel_at(const Volume& v, const VoxelCoord& c) {
  if (!in_bounds(v.dims(), c)) {
    throw std::out_of_range("voxel (" + std::to_string(c.x) + "," + std::to_string(c.y) + "," +
                            std::to_string(c.z) + ") outside volume");
  }
  return v.at_unchecked(static_cast<std::size_t>(c.x), static_cast<std::size_t>(c.y),
                        static_cast<std::size_t>(c.z));
}

Volume load_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const Header h = read_header(in, path);
  if (h.kind != "f32") throw FormatError(path.string() + " is not an f32 volume");
  const auto bytes = read_payload(in, 4 * h.dims.count(), path);
  std::vector<float> data(h.dims.count());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(load_le<std::uint32_t>(&bytes[4 * i]));
    if (!std::isfinite(data[i])) {
      throw FormatError("non-finite intensity at index " + std::to_string(i) + " in " + path.string());
    }
  }
  return Volume(h.dims, std::move(data));
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  write_header(out, "f32", v.dims());
  std::vector<unsigned char> bytes(4 * v.size());
  for (std::size_t i = 0; i < v.size(); ++i) store_le(std::bit_cast<std::uint32_t>(v[i]), &bytes[4 * i]);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

LabelVolume load_labels(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  const Header h = read_header(in, path);
  if (h.kind != "u16") throw FormatError(path.string() + " is not a u16 label file");
  const auto bytes = read_payload(in, 2 * h.dims.count(), path);
  std::vector<std::uint16_t> labels(h.dims.count());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = load_le<std::uint16_t>(&bytes[2 * i]);
  return LabelVolume(h.dims, std::move(labels));
}

void save_labels(const LabelVolume& labels, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  write_header(out, "u16", labels.dims());
  std::vector<unsigned char> bytes(2 * labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) store_le(labels[i], &bytes[2 * i]);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace vseg
