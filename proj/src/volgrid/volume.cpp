#include "octqsm/volume.hpp"

#include <cmath>

#include "../common/byte_io.hpp"

namespace octqsm {

namespace {

constexpr unsigned char kMagic[4] = {'Q', 'V', 'O', 'L'};
constexpr std::uint8_t kEncodingF32 = 0;

void check_geometry(const Dims& dims, const VoxelSize& voxel) {
  if (!dims.valid()) throw std::invalid_argument("volume dims must be >= 1, got " + to_string(dims));
  if (!voxel.valid()) throw std::invalid_argument("voxel sizes must be finite and > 0");
}

int round_up(int n, int multiple) { return ((n + multiple - 1) / multiple) * multiple; }

}  // namespace

std::string to_string(Unit unit) {
  switch (unit) {
    case Unit::ppb: return "ppb";
    case Unit::field_normalized: return "field_normalized";
    case Unit::unitless: return "unitless";
  }
  return "unknown";
}

std::string to_string(const Dims& dims) {
  return std::to_string(dims.nx) + "x" + std::to_string(dims.ny) + "x" + std::to_string(dims.nz);
}

bool VoxelSize::valid() const {
  return std::isfinite(dx) && std::isfinite(dy) && std::isfinite(dz) && dx > 0 && dy > 0 && dz > 0;
}

Volume::Volume(Dims dims, VoxelSize voxel, Unit unit) : dims_(dims), voxel_(voxel), unit_(unit) {
  check_geometry(dims_, voxel_);
  data_.assign(dims_.count(), 0.0F);
}

Volume::Volume(Dims dims, std::vector<float> data, VoxelSize voxel, Unit unit)
    : dims_(dims), voxel_(voxel), unit_(unit), data_(std::move(data)) {
  check_geometry(dims_, voxel_);
  if (data_.size() != dims_.count())
    throw std::invalid_argument("volume data length " + std::to_string(data_.size()) + " does not match dims " +
                                to_string(dims_));
}

Volume Volume::with_unit(Unit unit) const {
  Volume out = *this;
  out.unit_ = unit;
  return out;
}

bool PadRecord::empty() const {
  for (int a = 0; a < 3; ++a)
    if (before[a] != 0 || after[a] != 0) return false;
  return true;
}

std::pair<Volume, PadRecord> pad_to_multiple(const Volume& volume, int multiple) {
  if (multiple < 1) throw std::invalid_argument("pad multiple must be >= 1");
  const auto in = volume.dims().as_array();
  PadRecord record;
  std::array<int, 3> out{};
  for (int a = 0; a < 3; ++a) {
    out[a] = round_up(in[a], multiple);
    const int total = out[a] - in[a];
    record.before[a] = total / 2;
    record.after[a] = total - total / 2;
  }
  Volume padded(Dims{out[0], out[1], out[2]}, volume.voxel_size(), volume.unit());
  for (int z = 0; z < in[2]; ++z)
    for (int y = 0; y < in[1]; ++y)
      for (int x = 0; x < in[0]; ++x)
        padded(x + record.before[0], y + record.before[1], z + record.before[2]) = volume(x, y, z);
  return {std::move(padded), record};
}

Volume crop_region(const Volume& volume, std::array<int, 3> origin, std::array<int, 3> extent) {
  const auto dims = volume.dims().as_array();
  for (int a = 0; a < 3; ++a) {
    if (origin[a] < 0 || extent[a] < 1 || origin[a] + extent[a] > dims[a])
      throw std::invalid_argument("crop region exceeds volume " + to_string(volume.dims()));
  }
  Volume out(Dims{extent[0], extent[1], extent[2]}, volume.voxel_size(), volume.unit());
  for (int z = 0; z < extent[2]; ++z)
    for (int y = 0; y < extent[1]; ++y) {
      const float* src = &volume.data()[volume.index(origin[0], origin[1] + y, origin[2] + z)];
      float* dst = &out.data()[out.index(0, y, z)];
      std::copy(src, src + extent[0], dst);
    }
  return out;
}

Volume crop_with_record(const Volume& volume, const PadRecord& record) {
  if (record.empty()) return volume;
  const auto dims = volume.dims().as_array();
  std::array<int, 3> extent{};
  for (int a = 0; a < 3; ++a) {
    if (record.before[a] < 0 || record.after[a] < 0)
      throw std::invalid_argument("pad record has negative entries");
    extent[a] = dims[a] - record.before[a] - record.after[a];
    if (extent[a] < 1) throw std::invalid_argument("pad record exceeds volume dims " + to_string(volume.dims()));
  }
  return crop_region(volume, record.before, extent);
}

void write_volume(const Volume& volume, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes;
  bytes.reserve(kQvolHeaderSize + 4 * volume.size());
  bytes.insert(bytes.end(), std::begin(kMagic), std::end(kMagic));
  detail::put_u32(bytes, kQvolVersion);
  detail::put_u32(bytes, static_cast<std::uint32_t>(volume.dims().nx));
  detail::put_u32(bytes, static_cast<std::uint32_t>(volume.dims().ny));
  detail::put_u32(bytes, static_cast<std::uint32_t>(volume.dims().nz));
  detail::put_f32(bytes, volume.voxel_size().dx);
  detail::put_f32(bytes, volume.voxel_size().dy);
  detail::put_f32(bytes, volume.voxel_size().dz);
  detail::put_u8(bytes, static_cast<std::uint8_t>(volume.unit()));
  detail::put_u8(bytes, kEncodingF32);
  detail::put_u8(bytes, 0);
  detail::put_u8(bytes, 0);
  detail::put_f32_array(bytes, volume.data());
  detail::write_file_bytes(path.string(), bytes);
}

Volume read_volume(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  const auto bytes = detail::read_file_bytes(path.string());
  const std::span<const unsigned char> view(bytes);
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
    throw FormatError(path.string() + ": bad magic, not a QVOL file");
  if (bytes.size() < kQvolHeaderSize) throw FormatError(path.string() + ": truncated header");
  const std::uint32_t version = detail::get_u32(view, 4);
  if (version != kQvolVersion) throw FormatError(path.string() + ": unsupported QVOL version " + std::to_string(version));

  const std::uint32_t nx = detail::get_u32(view, 8);
  const std::uint32_t ny = detail::get_u32(view, 12);
  const std::uint32_t nz = detail::get_u32(view, 16);
  constexpr std::uint32_t kMaxAxis = 1U << 16;
  if (nx == 0 || ny == 0 || nz == 0 || nx > kMaxAxis || ny > kMaxAxis || nz > kMaxAxis)
    throw FormatError(path.string() + ": invalid dims in header");
  const VoxelSize voxel{detail::get_f32(view, 20), detail::get_f32(view, 24), detail::get_f32(view, 28)};
  if (!voxel.valid()) throw FormatError(path.string() + ": invalid voxel size in header");
  const std::uint8_t unit_code = bytes[32];
  const std::uint8_t encoding = bytes[33];
  if (unit_code > 2) throw FormatError(path.string() + ": unknown unit code " + std::to_string(unit_code));
  if (encoding != kEncodingF32) throw FormatError(path.string() + ": unknown encoding " + std::to_string(encoding));

  const Dims dims{static_cast<int>(nx), static_cast<int>(ny), static_cast<int>(nz)};
  const std::size_t expected = kQvolHeaderSize + 4 * dims.count();
  if (bytes.size() < expected)
    throw FormatError(path.string() + ": truncated payload (" + std::to_string(bytes.size() - kQvolHeaderSize) +
                      " bytes, header declares " + std::to_string(4 * dims.count()) + ")");
  if (bytes.size() > expected) throw FormatError(path.string() + ": trailing bytes after payload");

  std::vector<float> data(dims.count());
  detail::get_f32_array(view, kQvolHeaderSize, data);
  return Volume(dims, std::move(data), voxel, static_cast<Unit>(unit_code));
}

}  // namespace octqsm
