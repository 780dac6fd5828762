#include "octqsm/dipole.hpp"

#include <cmath>
#include <complex>

#include "../common/fft3d.hpp"

namespace octqsm {

namespace {

std::vector<std::complex<double>> to_complex(const Volume& v) {
  std::vector<std::complex<double>> out(v.size());
  const auto data = v.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = {static_cast<double>(data[i]), 0.0};
  return out;
}

std::vector<float> real_part(const std::vector<std::complex<double>>& c) {
  std::vector<float> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = static_cast<float>(c[i].real());
  return out;
}

void check_match(const Volume& v, const KernelGrid& kernel) {
  if (v.dims() != kernel.dims())
    throw std::invalid_argument("volume dims " + to_string(v.dims()) + " do not match kernel dims " +
                                to_string(kernel.dims()));
}

}  // namespace

KernelGrid::KernelGrid(Dims dims, VoxelSize voxel, std::vector<double> values)
    : dims_(dims), voxel_(voxel), values_(std::move(values)) {
  if (values_.size() != dims_.count()) throw std::invalid_argument("kernel values do not match dims");
}

KernelGrid dipole_kernel(Dims dims, VoxelSize voxel) {
  if (!dims.valid()) throw std::invalid_argument("kernel dims must be >= 1, got " + to_string(dims));
  if (!voxel.valid()) throw std::invalid_argument("kernel voxel sizes must be > 0");

  const double fx = 1.0 / (dims.nx * static_cast<double>(voxel.dx));
  const double fy = 1.0 / (dims.ny * static_cast<double>(voxel.dy));
  const double fz = 1.0 / (dims.nz * static_cast<double>(voxel.dz));
  std::vector<double> values(dims.count());
  std::size_t idx = 0;
  for (int l = 0; l < dims.nz; ++l) {
    const double kz = signed_frequency(l, dims.nz) * fz;
    for (int j = 0; j < dims.ny; ++j) {
      const double ky = signed_frequency(j, dims.ny) * fy;
      for (int i = 0; i < dims.nx; ++i, ++idx) {
        const double kx = signed_frequency(i, dims.nx) * fx;
        const double k2 = kx * kx + ky * ky + kz * kz;
        values[idx] = k2 == 0.0 ? 0.0 : 1.0 / 3.0 - kz * kz / k2;
      }
    }
  }
  return KernelGrid(dims, voxel, std::move(values));
}

Volume forward_field(const Volume& chi, const KernelGrid& kernel) {
  check_match(chi, kernel);
  if (chi.unit() != Unit::ppb) throw std::invalid_argument("forward_field expects a ppb susceptibility map");
  auto spectrum = to_complex(chi);
  detail::fft3d(spectrum, chi.dims(), false);
  const auto& d = kernel.values();
  for (std::size_t i = 0; i < spectrum.size(); ++i) spectrum[i] *= d[i];
  detail::fft3d(spectrum, chi.dims(), true);
  return Volume(chi.dims(), real_part(spectrum), chi.voxel_size(), Unit::field_normalized);
}

Volume tkd_invert(const Volume& field, const KernelGrid& kernel, double threshold) {
  check_match(field, kernel);
  if (!(threshold > 0.0) || !std::isfinite(threshold)) throw std::invalid_argument("tkd threshold must be > 0");
  auto spectrum = to_complex(field);
  detail::fft3d(spectrum, field.dims(), false);
  const auto& d = kernel.values();
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    double divisor = d[i];
    if (std::abs(divisor) < threshold) divisor = divisor < 0.0 ? -threshold : threshold;
    spectrum[i] /= divisor;
  }
  detail::fft3d(spectrum, field.dims(), true);
  return Volume(field.dims(), real_part(spectrum), field.voxel_size(), Unit::ppb);
}

}  // namespace octqsm
