#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "histomet/errors.hpp"
#include "histomet/matrix.hpp"
#include "histomet/scale.hpp"

namespace histomet {

// Bag container, little-endian:
//   magic   "HMFB"          4 bytes
//   version u16 = 1
//   mag     u8  (1 = 10x, 2 = 20x)
//   reserved u8 = 0
//   N       u32
//   L       u32
//   N*L features, IEEE-754 float32, row-major
//   N coordinate pairs, i32 x then i32 y
inline constexpr char kBagMagic[4] = {'H', 'M', 'F', 'B'};
inline constexpr std::uint16_t kBagVersion = 1;

struct FeatureBag {
  ScaleId magnification = ScaleId::x10;
  Matrix features;  // converted to double on load; stored as float32
  std::vector<std::pair<std::int32_t, std::int32_t>> coords;
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::string& buf;
  const std::string& path;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > buf.size())
      throw IoError(path + ": truncated while reading " + what);
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return std::uint8_t(buf[pos++]);
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = std::uint8_t(buf[pos]) |
                      (std::uint16_t(std::uint8_t(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(std::uint8_t(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::int32_t i32(const char* what) {
    return std::int32_t(u32(what));
  }
};

}  // namespace detail

inline void write_bag(const FeatureBag& bag, const std::string& path) {
  if (bag.features.rows() == 0)
    throw IoError(path + ": refusing to write empty bag");
  if (bag.coords.size() != bag.features.rows())
    throw IoError(path + ": coordinate count does not match N");
  std::string out;
  out.reserve(16 + bag.features.size() * 4 + bag.coords.size() * 8);
  out.append(kBagMagic, 4);
  detail::put_u16(out, kBagVersion);
  out.push_back(char(scale_code(bag.magnification)));
  out.push_back(0);  // reserved
  detail::put_u32(out, std::uint32_t(bag.features.rows()));
  detail::put_u32(out, std::uint32_t(bag.features.cols()));
  for (std::size_t k = 0; k < bag.features.size(); ++k)
    detail::put_f32(out, float(bag.features[k]));
  for (const auto& [x, y] : bag.coords) {
    detail::put_u32(out, std::uint32_t(x));
    detail::put_u32(out, std::uint32_t(y));
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw IoError(path + ": write failed");
}

inline FeatureBag read_bag(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(path + ": cannot open");
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());
  detail::Reader r{buf, path};

  r.need(4, "magic");
  if (std::memcmp(buf.data(), kBagMagic, 4) != 0)
    throw IoError(path + ": bad magic, not a feature bag file");
  r.pos = 4;
  const std::uint16_t version = r.u16("version");
  if (version != kBagVersion)
    throw IoError(path + ": unsupported format version " +
                  std::to_string(version));
  FeatureBag bag;
  const std::uint8_t mag = r.u8("magnification");
  try {
    bag.magnification = scale_from_code(mag);
  } catch (const std::invalid_argument& e) {
    throw IoError(path + ": " + e.what());
  }
  r.u8("reserved");
  const std::uint32_t n = r.u32("N");
  const std::uint32_t l = r.u32("L");
  if (n == 0) throw IoError(path + ": bag declares zero instances");
  if (l == 0) throw IoError(path + ": bag declares zero feature dim");
  const std::size_t payload = std::size_t(n) * l * 4 + std::size_t(n) * 8;
  if (r.pos + payload > buf.size())
    throw IoError(path + ": declared " + std::to_string(n) + "x" +
                  std::to_string(l) + " payload exceeds file length");
  bag.features = Matrix(n, l);
  for (std::size_t k = 0; k < bag.features.size(); ++k)
    bag.features[k] = double(r.f32("features"));
  if (!all_finite(bag.features))
    throw IoError(path + ": non-finite feature values");
  bag.coords.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    bag.coords[i].first = r.i32("coords");
    bag.coords[i].second = r.i32("coords");
  }
  return bag;
}

}  // namespace histomet
