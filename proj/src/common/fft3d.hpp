#pragma once

#include <complex>
#include <vector>

#include "octqsm/volume.hpp"

namespace octqsm::detail {

/// In-place 3D DFT over an x-fastest grid. The inverse transform is scaled by 1/N.
void fft3d(std::vector<std::complex<double>>& data, const Dims& dims, bool inverse);

}  // namespace octqsm::detail
