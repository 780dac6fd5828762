#pragma once

#include <vector>

#include "octqsm/volume.hpp"

namespace octqsm {

/// Unit dipole kernel d(k) = 1/3 - kz^2/|k|^2 sampled on the FFT grid of a volume.
/// Index (i, j, l) holds frequency (signed_frequency(i, nx)/(nx*dx), ...); d(0) = 0.
class KernelGrid {
public:
  KernelGrid(Dims dims, VoxelSize voxel, std::vector<double> values);

  [[nodiscard]] const Dims& dims() const { return dims_; }
  [[nodiscard]] const VoxelSize& voxel_size() const { return voxel_; }
  [[nodiscard]] const std::vector<double>& values() const { return values_; }
  [[nodiscard]] double operator()(int i, int j, int l) const {
    return values_[static_cast<std::size_t>(i) +
                   static_cast<std::size_t>(dims_.nx) *
                       (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims_.ny) * static_cast<std::size_t>(l))];
  }

private:
  Dims dims_;
  VoxelSize voxel_;
  std::vector<double> values_;
};

/// Standard FFT ordering: indices [0, n/2) map to themselves, the rest to index - n.
/// For even n the Nyquist bin maps to -n/2.
[[nodiscard]] constexpr int signed_frequency(int index, int n) { return index < (n + 1) / 2 ? index : index - n; }

KernelGrid dipole_kernel(Dims dims, VoxelSize voxel);

/// Local field (ppb-equivalent, unit field_normalized) of a ppb susceptibility map:
/// real(IFFT(FFT(chi) * d)).
Volume forward_field(const Volume& chi, const KernelGrid& kernel);

/// Truncated k-space division. Where |d| < threshold the divisor is sign(d)*threshold,
/// with sign(0) = +1.
Volume tkd_invert(const Volume& field, const KernelGrid& kernel, double threshold);

}  // namespace octqsm
