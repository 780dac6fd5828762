#include <cmath>

#include "doctest.h"
#include "json.hpp"
#include "octqsm/metrics.hpp"
#include "octqsm/phantom.hpp"
#include "test_util.hpp"

using namespace octqsm;
using doctest::Approx;

namespace {

Volume affine(const Volume& v, double a, double b) {
  Volume out = v;
  for (float& x : out.data()) x = static_cast<float>(a * x + b);
  return out;
}

}  // namespace

TEST_CASE("identities on identical volumes") {
  const Volume x = testutil::random_volume({16, 12, 10}, 1, -50, 80);
  CHECK(nrmse(x, x) == 0.0);
  CHECK(ssim3d(x, x) == 1.0);
  CHECK(psnr(x, x) == kPsnrSentinel);
  CHECK(nrmse(Volume(x.dims()), x) == Approx(100.0).epsilon(1e-12));
}

TEST_CASE("nrmse closed forms and scale covariance") {
  const Volume ref = testutil::random_volume({10, 10, 10}, 2, 1, 3);
  const double c = 0.25;
  double norm = 0;
  for (float v : ref.data()) norm += static_cast<double>(v) * v;
  const Volume shifted = affine(ref, 1.0, c);
  CHECK(nrmse(shifted, ref) == Approx(100.0 * c * std::sqrt(1000.0) / std::sqrt(norm)).epsilon(1e-5));

  const Volume x = testutil::random_volume({10, 10, 10}, 3, -1, 4);
  for (double a : {-2.0, 0.5, 4.0}) CHECK(nrmse(affine(x, a, 0), affine(ref, a, 0)) == Approx(nrmse(x, ref)).epsilon(1e-6));
  CHECK_THROWS_AS(nrmse(x, Volume(x.dims())), std::invalid_argument);
  CHECK_THROWS_AS(nrmse(x, Volume(Dims{10, 10, 9})), std::invalid_argument);
}

TEST_CASE("psnr uses the reference dynamic range") {
  Volume ref(Dims{4, 4, 4});
  ref.data()[0] = 10.0F;
  Volume x = ref;
  for (float& v : x.data()) v += 1.0F;  // MSE 1, peak 10
  CHECK(psnr(x, ref) == Approx(20.0).epsilon(1e-12));
  CHECK_THROWS_AS(psnr(x, Volume(Dims{4, 4, 4})), std::invalid_argument);
}

TEST_CASE("ssim bounds and symmetry") {
  const Volume a = testutil::random_volume({14, 14, 14}, 4, -1, 1);
  const Volume b = testutil::random_volume({14, 14, 14}, 5, -1, 1);
  const Volume near = affine(a, 0.9, 0.05);
  CHECK(ssim3d(a, b) == ssim3d(b, a));
  CHECK(ssim3d(a, near) == ssim3d(near, a));
  CHECK(ssim3d(a, b) <= 1.0);
  CHECK(ssim3d(a, b) >= -1.0);
  CHECK(ssim3d(a, near) > ssim3d(a, b));
  CHECK(ssim3d(a, near) < 1.0);
  CHECK_THROWS_AS(ssim3d(Volume(a.dims()), Volume(a.dims())), std::invalid_argument);
  SsimOptions even;
  even.support = 10;
  CHECK_THROWS_AS(ssim3d(a, b, even), std::invalid_argument);
}

TEST_CASE("roi statistics") {
  const LabeledPhantom p = shepp_logan({48, 48, 48});
  for (const auto& [region, value] : p.region_table) {
    const RoiStats s = roi_stats(p.chi, p.labels, region);
    CHECK(s.mean == value);
    CHECK(s.std == 0.0);
    CHECK(s.count > 0);
  }
  Volume labels(Dims{3, 3, 3}, {}, Unit::unitless);
  labels(1, 1, 1) = 4.0F;
  Volume x(Dims{3, 3, 3});
  x(1, 1, 1) = 17.5F;
  const RoiStats one = roi_stats(x, labels, 4);
  CHECK(one.count == 1);
  CHECK(one.mean == 17.5);
  CHECK(one.std == 0.0);
  CHECK_THROWS_AS(roi_stats(x, labels, 9), std::invalid_argument);

  Volume two = x;
  labels(0, 0, 0) = 4.0F;
  two(0, 0, 0) = 13.5F;
  CHECK(roi_stats(two, labels, 4).std == Approx(std::sqrt(8.0)));  // n - 1 denominator
}

TEST_CASE("percent error, anisotropy and regression") {
  CHECK(percent_error(217, 222) == Approx(-2.2522522522522523));
  CHECK(percent_error(350, 350) == 0.0);
  CHECK_THROWS_AS(percent_error(1, 0), std::invalid_argument);

  CHECK(relative_anisotropy(150, 50) == 0.5);
  CHECK(relative_anisotropy(50, 150) == 0.5);
  CHECK(relative_anisotropy(7, 7) == 0.0);
  CHECK_THROWS_AS(relative_anisotropy(3, -3), std::invalid_argument);

  const LinearFit line = linear_fit({0.3, 0.5, 1, 1.5, 2, 2.5, 3}, {1.6, 2, 3, 4, 5, 6, 7});
  CHECK(line.slope == Approx(2.0).epsilon(1e-12));
  CHECK(line.intercept == Approx(1.0).epsilon(1e-12));
  CHECK(line.sse < 1e-20);
  const LinearFit flat = linear_fit({1, 2, 3}, {4, 4, 4});
  CHECK(flat.slope == 0.0);
  CHECK_THROWS_AS(linear_fit({1, 1}, {2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(linear_fit({1}, {2}), std::invalid_argument);
  CHECK_THROWS_AS(linear_fit({1, 2}, {2}), std::invalid_argument);
}

TEST_CASE("report serialisation") {
  const LabeledPhantom p = shepp_logan({48, 48, 48});
  MetricReport m = evaluate(p.chi, p.chi, &p.labels);
  CHECK(m.nrmse == 0.0);
  CHECK(m.ssim == 1.0);
  CHECK(m.rois.size() == 6);
  m.relative_anisotropy = 0.5;
  m.regression = LinearFit{2, 1, 0};

  const std::string tsv = m.to_tsv();
  CHECK(tsv.rfind("metric\tvalue\n", 0) == 0);
  CHECK(tsv.find("nrmse_pct\t0\n") != std::string::npos);
  CHECK(tsv.find("ssim\t1\n") != std::string::npos);
  CHECK(tsv.find("roi_6_mean_ppb\t350\n") != std::string::npos);
  CHECK(tsv.find("relative_anisotropy\t0.5\n") != std::string::npos);

  const std::string line = m.to_json_line();
  CHECK(line.find('\n') == std::string::npos);
  const auto j = nlohmann::json::parse(line);
  CHECK(j["nrmse_pct"] == 0.0);
  CHECK(j["rois"].size() == 6);
  CHECK(j["rois"][1]["mean_ppb"] == -250.0);
  CHECK(j["regression"]["slope"] == 2.0);
}
