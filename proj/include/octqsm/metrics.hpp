#pragma once

#include <optional>
#include <string>
#include <vector>

#include "octqsm/volume.hpp"

namespace octqsm {

/// psnr() of identical volumes.
inline constexpr double kPsnrSentinel = 999.0;

/// 10 log10(peak^2 / MSE), peak = max(ref) - min(ref).
double psnr(const Volume& x, const Volume& ref);
/// 100 * ||x - ref|| / ||ref||.
double nrmse(const Volume& x, const Volume& ref);

struct SsimOptions {
  double sigma = 1.5;
  int support = 11;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean local SSIM under a separable Gaussian window, truncated and renormalised at
/// the borders. Dynamic range is the joint max - min of x and ref.
double ssim3d(const Volume& x, const Volume& ref, const SsimOptions& options = {});

struct RoiStats {
  int region = 0;
  std::size_t count = 0;
  double mean = 0.0;
  double std = 0.0;  // sample (n - 1) standard deviation; 0 for one voxel
};

RoiStats roi_stats(const Volume& x, const Volume& labels, int region);
/// (mean - ref) / ref * 100.
double percent_error(double mean, double ref);
/// |a - b| / |a + b|.
double relative_anisotropy(double a, double b);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double sse = 0.0;
};

LinearFit linear_fit(const std::vector<double>& xs, const std::vector<double>& ys);

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double nrmse = 0.0;
  std::vector<RoiStats> rois;
  std::optional<double> relative_anisotropy;
  std::optional<LinearFit> regression;

  /// metric<TAB>value lines; ROI rows as roi_<id>_mean etc.
  [[nodiscard]] std::string to_tsv() const;
  /// One JSON object on a single line.
  [[nodiscard]] std::string to_json_line() const;
};

/// psnr/ssim/nrmse, plus ROI stats for every nonzero label when `labels` is given.
MetricReport evaluate(const Volume& pred, const Volume& ref, const Volume* labels = nullptr);

}  // namespace octqsm
