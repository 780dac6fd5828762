#pragma once

// Little-endian encoding helpers shared by the QVOL and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace octqsm::detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFFU));
}

inline void put_u8(std::vector<unsigned char>& out, std::uint8_t v) { out.push_back(v); }

inline void put_f32(std::vector<unsigned char>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t get_u32(std::span<const unsigned char> in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

inline float get_f32(std::span<const unsigned char> in, std::size_t offset) {
  return std::bit_cast<float>(get_u32(in, offset));
}

inline void put_f32_array(std::vector<unsigned char>& out, std::span<const float> values) {
  const std::size_t start = out.size();
  out.resize(start + 4 * values.size());
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data() + start, values.data(), 4 * values.size());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(values[i]);
      for (int b = 0; b < 4; ++b)
        out[start + 4 * i + static_cast<std::size_t>(b)] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFFU);
    }
  }
}

inline void get_f32_array(std::span<const unsigned char> in, std::size_t offset, std::span<float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(values.data(), in.data() + offset, 4 * values.size());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_f32(in, offset + 4 * i);
  }
}

std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::span<const unsigned char> bytes);

}  // namespace octqsm::detail
