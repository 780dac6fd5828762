#include "fft3d.hpp"

#include <fftw3.h>

#include <mutex>

namespace octqsm::detail {

namespace {
// FFTW planning is not thread-safe; execution is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

void fft3d(std::vector<std::complex<double>>& data, const Dims& dims, bool inverse) {
  if (data.size() != dims.count()) throw std::invalid_argument("fft3d: buffer does not match dims");
  auto* buf = reinterpret_cast<fftw_complex*>(data.data());
  fftw_plan plan = nullptr;
  {
    std::lock_guard lock(planner_mutex());
    // FFTW is row-major (last index fastest), so the axis order is reversed.
    plan = fftw_plan_dft_3d(dims.nz, dims.ny, dims.nx, buf, buf, inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                            FFTW_ESTIMATE);
  }
  if (plan == nullptr) throw std::runtime_error("fftw plan creation failed");
  fftw_execute(plan);
  {
    std::lock_guard lock(planner_mutex());
    fftw_destroy_plan(plan);
  }
  if (inverse) {
    const double scale = 1.0 / static_cast<double>(data.size());
    for (auto& v : data) v *= scale;
  }
}

}  // namespace octqsm::detail
