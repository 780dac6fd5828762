#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace octqsm {

/// Thrown when an on-disk file cannot be read or written.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Thrown when file contents do not match the expected format.
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Unit : std::uint8_t { ppb = 0, field_normalized = 1, unitless = 2 };

std::string to_string(Unit unit);

struct Dims {
  int nx = 1;
  int ny = 1;
  int nz = 1;

  [[nodiscard]] std::size_t count() const {
    return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) * static_cast<std::size_t>(nz);
  }
  [[nodiscard]] std::array<int, 3> as_array() const { return {nx, ny, nz}; }
  [[nodiscard]] bool valid() const { return nx >= 1 && ny >= 1 && nz >= 1; }

  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& dims);

/// Voxel edge lengths in mm. Stored as f32 so the on-disk header round-trips exactly.
struct VoxelSize {
  float dx = 1.0F;
  float dy = 1.0F;
  float dz = 1.0F;

  [[nodiscard]] bool valid() const;

  friend bool operator==(const VoxelSize&, const VoxelSize&) = default;
};

/// A 3D scalar grid, x fastest-varying. B0 points along +z.
class Volume {
public:
  Volume() = default;
  explicit Volume(Dims dims, VoxelSize voxel = {}, Unit unit = Unit::ppb);
  Volume(Dims dims, std::vector<float> data, VoxelSize voxel = {}, Unit unit = Unit::ppb);

  [[nodiscard]] const Dims& dims() const { return dims_; }
  [[nodiscard]] const VoxelSize& voxel_size() const { return voxel_; }
  [[nodiscard]] Unit unit() const { return unit_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }

  [[nodiscard]] std::span<const float> data() const { return data_; }
  [[nodiscard]] std::span<float> data() { return data_; }

  [[nodiscard]] std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(dims_.nx) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(dims_.ny) * static_cast<std::size_t>(z));
  }
  [[nodiscard]] float operator()(int x, int y, int z) const { return data_[index(x, y, z)]; }
  [[nodiscard]] float& operator()(int x, int y, int z) { return data_[index(x, y, z)]; }

  /// Same geometry and data, relabelled unit. The only way a unit changes.
  [[nodiscard]] Volume with_unit(Unit unit) const;

  friend bool operator==(const Volume&, const Volume&) = default;

private:
  Dims dims_{};
  VoxelSize voxel_{};
  Unit unit_ = Unit::ppb;
  std::vector<float> data_ = std::vector<float>(1, 0.0F);
};

/// Zero voxels added before/after the original extent along each axis.
struct PadRecord {
  std::array<int, 3> before{0, 0, 0};
  std::array<int, 3> after{0, 0, 0};

  [[nodiscard]] bool empty() const;
  friend bool operator==(const PadRecord&, const PadRecord&) = default;
};

/// Zero-pads every axis up to the next multiple of `multiple`, split evenly with any
/// odd voxel on the high side.
std::pair<Volume, PadRecord> pad_to_multiple(const Volume& volume, int multiple);

Volume crop_with_record(const Volume& volume, const PadRecord& record);

/// Extracts the sub-volume [origin, origin + extent) per axis.
Volume crop_region(const Volume& volume, std::array<int, 3> origin, std::array<int, 3> extent);

// QVOL v1: "QVOL", u32 version, 3×u32 dims, 3×f32 voxel size, u8 unit, u8 encoding,
// 2 reserved bytes, then f32le payload with x fastest. All fields little-endian.
inline constexpr std::size_t kQvolHeaderSize = 36;
inline constexpr std::uint32_t kQvolVersion = 1;

Volume read_volume(const std::filesystem::path& path);
void write_volume(const Volume& volume, const std::filesystem::path& path);

}  // namespace octqsm
