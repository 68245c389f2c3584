#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

namespace petrec::detail {

inline std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

inline void write_f32le(std::ostream& os, std::span<const float> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t bits = to_little(std::bit_cast<std::uint32_t>(values[i]));
    std::memcpy(buf.data() + 4 * i, &bits, 4);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

/// Reads exactly out.size() floats; returns false on a short read.
inline bool read_f32le(std::istream& is, std::span<float> out) {
  std::vector<char> buf(out.size() * 4);
  is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size()) return false;
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, buf.data() + 4 * i, 4);
    out[i] = std::bit_cast<float>(to_little(bits));
  }
  return true;
}

}  // namespace petrec::detail
