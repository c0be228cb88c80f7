#pragma once

// Little-endian scalar helpers shared by the binary file formats.

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

#include "errors.hpp"

namespace moments_nerf::binary {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw LoadError("unexpected end of file");
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
}

inline void put_f32(std::ostream& os, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put_u32(os, u);
}

inline float get_f32(std::istream& is) {
  const std::uint32_t u = get_u32(is);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace moments_nerf::binary
