#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>

#include "sport/error.hpp"
#include "sport/geometry.hpp"

namespace sport::geometry {

namespace {

constexpr std::array<char, 4> kMagic{'S', 'P', 'C', 'D'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b.data(), 4);
}

void put_f32(std::ostream& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("SPCD: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f32(std::istream& in) { return static_cast<double>(std::bit_cast<float>(get_u32(in))); }

}  // namespace

void write_spcd(const PointCloud& cloud, std::ostream& out) {
  if (cloud.has_colors() && cloud.colors.size() != cloud.points.size())
    throw FormatError("SPCD: color count does not match point count");
  out.write(kMagic.data(), 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(cloud.size()));
  const char flag = cloud.has_colors() ? 1 : 0;
  out.write(&flag, 1);
  for (const auto& p : cloud.points) {
    put_f32(out, p.x);
    put_f32(out, p.y);
    put_f32(out, p.z);
  }
  for (const auto& c : cloud.colors) {
    put_f32(out, c.x);
    put_f32(out, c.y);
    put_f32(out, c.z);
  }
  if (!out) throw IoError("SPCD: write failed");
}

PointCloud read_spcd(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4)) throw FormatError("SPCD: truncated header");
  if (magic != kMagic) throw FormatError("SPCD: bad magic");
  const std::uint32_t version = get_u32(in);
  if (version != kVersion) throw FormatError("SPCD: unsupported version " + std::to_string(version));
  const std::uint32_t count = get_u32(in);
  char flag = 0;
  if (!in.read(&flag, 1)) throw FormatError("SPCD: truncated header");
  if (flag != 0 && flag != 1) throw FormatError("SPCD: bad color flag");
  PointCloud cloud;
  cloud.points.resize(count);
  for (auto& p : cloud.points) {
    p.x = get_f32(in);
    p.y = get_f32(in);
    p.z = get_f32(in);
  }
  if (flag == 1) {
    cloud.colors.resize(count);
    for (auto& c : cloud.colors) {
      c.x = get_f32(in);
      c.y = get_f32(in);
      c.z = get_f32(in);
    }
  }
  return cloud;
}

void write_spcd_file(const PointCloud& cloud, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_spcd(cloud, out);
}

PointCloud read_spcd_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  PointCloud cloud = read_spcd(in);
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("SPCD: trailing bytes in " + path);
  return cloud;
}

}  // namespace sport::geometry
