#include "octqsm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "json.hpp"
#include "octqsm/keyvalue.hpp"

namespace octqsm {

namespace {

void require_same_dims(const Volume& a, const Volume& b, const char* op) {
  if (a.dims() != b.dims())
    throw std::invalid_argument(std::string(op) + ": dims " + to_string(a.dims()) + " vs " + to_string(b.dims()));
}

std::pair<double, double> min_max(std::span<const float> v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return {*lo, *hi};
}

// Truncated Gaussian smoothing along one axis; weights renormalised over the part of
// the window inside the volume.
void smooth_axis(std::vector<double>& v, const Dims& d, int axis, const std::vector<double>& w) {
  const int r = static_cast<int>(w.size() / 2);
  const std::array<int, 3> n = d.as_array();
  const std::array<std::size_t, 3> step{1, static_cast<std::size_t>(n[0]),
                                        static_cast<std::size_t>(n[0]) * static_cast<std::size_t>(n[1])};
  const int len = n[static_cast<std::size_t>(axis)];
  const std::size_t s = step[static_cast<std::size_t>(axis)];
  const int a1 = axis == 0 ? 1 : 0, a2 = axis == 2 ? 1 : 2;
  std::vector<double> line(static_cast<std::size_t>(len));
  for (int j = 0; j < n[static_cast<std::size_t>(a2)]; ++j) {
    for (int i = 0; i < n[static_cast<std::size_t>(a1)]; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * step[static_cast<std::size_t>(a1)] +
                               static_cast<std::size_t>(j) * step[static_cast<std::size_t>(a2)];
      for (int t = 0; t < len; ++t) line[static_cast<std::size_t>(t)] = v[base + static_cast<std::size_t>(t) * s];
      for (int t = 0; t < len; ++t) {
        double acc = 0, mass = 0;
        for (int o = -r; o <= r; ++o) {
          const int q = t + o;
          if (q < 0 || q >= len) continue;
          const double wt = w[static_cast<std::size_t>(o + r)];
          acc += wt * line[static_cast<std::size_t>(q)];
          mass += wt;
        }
        v[base + static_cast<std::size_t>(t) * s] = acc / mass;
      }
    }
  }
}

std::vector<double> smooth(std::vector<double> v, const Dims& d, const std::vector<double>& w) {
  for (int axis = 0; axis < 3; ++axis) smooth_axis(v, d, axis, w);
  return v;
}

}  // namespace

double psnr(const Volume& x, const Volume& ref) {
  require_same_dims(x, ref, "psnr");
  const auto [lo, hi] = min_max(ref.data());
  const double peak = hi - lo;
  if (!(peak > 0)) throw std::invalid_argument("psnr: reference is constant");
  double mse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x.data()[i]) - ref.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(x.size());
  if (mse == 0) return kPsnrSentinel;
  return 10.0 * std::log10(peak * peak / mse);
}

double nrmse(const Volume& x, const Volume& ref) {
  require_same_dims(x, ref, "nrmse");
  double diff = 0, norm = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = ref.data()[i];
    const double d = static_cast<double>(x.data()[i]) - r;
    diff += d * d;
    norm += r * r;
  }
  if (norm == 0) throw std::invalid_argument("nrmse: reference has zero norm");
  return 100.0 * std::sqrt(diff) / std::sqrt(norm);
}

double ssim3d(const Volume& x, const Volume& ref, const SsimOptions& opt) {
  require_same_dims(x, ref, "ssim3d");
  if (opt.support < 1 || opt.support % 2 == 0 || !(opt.sigma > 0))
    throw std::invalid_argument("ssim3d: window support must be odd and sigma positive");
  const auto [xlo, xhi] = min_max(x.data());
  const auto [rlo, rhi] = min_max(ref.data());
  const double range = std::max(xhi, rhi) - std::min(xlo, rlo);
  if (!(range > 0)) throw std::invalid_argument("ssim3d: inputs are constant");
  const double c1 = (opt.k1 * range) * (opt.k1 * range);
  const double c2 = (opt.k2 * range) * (opt.k2 * range);

  const int r = opt.support / 2;
  std::vector<double> w(static_cast<std::size_t>(opt.support));
  for (int o = -r; o <= r; ++o) w[static_cast<std::size_t>(o + r)] = std::exp(-0.5 * o * o / (opt.sigma * opt.sigma));

  const std::size_t n = x.size();
  std::vector<double> a(n), b(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = x.data()[i];
    b[i] = ref.data()[i];
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const Dims& d = x.dims();
  const auto mu_a = smooth(std::move(a), d, w);
  const auto mu_b = smooth(std::move(b), d, w);
  const auto m_aa = smooth(std::move(aa), d, w);
  const auto m_bb = smooth(std::move(bb), d, w);
  const auto m_ab = smooth(std::move(ab), d, w);

  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = m_aa[i] - ma * ma;
    const double vb = m_bb[i] - mb * mb;
    const double cov = m_ab[i] - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(n);
}

RoiStats roi_stats(const Volume& x, const Volume& labels, int region) {
  require_same_dims(x, labels, "roi_stats");
  RoiStats s;
  s.region = region;
  double sum = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::lround(labels.data()[i]) == region) {
      sum += x.data()[i];
      ++s.count;
    }
  if (s.count == 0) throw std::invalid_argument("roi_stats: region " + std::to_string(region) + " is empty");
  s.mean = sum / static_cast<double>(s.count);
  if (s.count > 1) {
    double ss = 0;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::lround(labels.data()[i]) == region) {
        const double dv = x.data()[i] - s.mean;
        ss += dv * dv;
      }
    s.std = std::sqrt(ss / static_cast<double>(s.count - 1));
  }
  return s;
}

double percent_error(double mean, double ref) {
  if (ref == 0) throw std::invalid_argument("percent_error: reference is 0");
  return (mean - ref) / ref * 100.0;
}

double relative_anisotropy(double a, double b) {
  if (a + b == 0) throw std::invalid_argument("relative_anisotropy: a + b = 0");
  return std::abs(a - b) / std::abs(a + b);
}

LinearFit linear_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("linear_fit: xs and ys differ in length");
  if (xs.size() < 2) throw std::invalid_argument("linear_fit: need at least 2 points");
  const double n = static_cast<double>(xs.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0) throw std::invalid_argument("linear_fit: xs are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (f.slope * xs[i] + f.intercept);
    f.sse += e * e;
  }
  return f;
}

std::string MetricReport::to_tsv() const {
  std::string out = "metric\tvalue\n";
  auto row = [&out](const std::string& k, double v) { out += k + "\t" + kv::format_double(v) + "\n"; };
  row("psnr_db", psnr);
  row("ssim", ssim);
  row("nrmse_pct", nrmse);
  for (const auto& r : rois) {
    const std::string p = "roi_" + std::to_string(r.region) + "_";
    row(p + "count", static_cast<double>(r.count));
    row(p + "mean_ppb", r.mean);
    row(p + "std_ppb", r.std);
  }
  if (relative_anisotropy) row("relative_anisotropy", *relative_anisotropy);
  if (regression) {
    row("fit_slope", regression->slope);
    row("fit_intercept", regression->intercept);
    row("fit_sse", regression->sse);
  }
  return out;
}

std::string MetricReport::to_json_line() const {
  nlohmann::ordered_json j;
  j["psnr_db"] = psnr;
  j["ssim"] = ssim;
  j["nrmse_pct"] = nrmse;
  j["rois"] = nlohmann::ordered_json::array();
  for (const auto& r : rois)
    j["rois"].push_back({{"region", r.region}, {"count", r.count}, {"mean_ppb", r.mean}, {"std_ppb", r.std}});
  if (relative_anisotropy) j["relative_anisotropy"] = *relative_anisotropy;
  if (regression)
    j["regression"] = {{"slope", regression->slope}, {"intercept", regression->intercept}, {"sse", regression->sse}};
  return j.dump();
}

MetricReport evaluate(const Volume& pred, const Volume& ref, const Volume* labels) {
  MetricReport m;
  m.psnr = psnr(pred, ref);
  m.ssim = ssim3d(pred, ref);
  m.nrmse = nrmse(pred, ref);
  if (labels != nullptr) {
    require_same_dims(pred, *labels, "evaluate");
    std::map<long, bool> present;
    for (float v : labels->data())
      if (std::lround(v) != 0) present[std::lround(v)] = true;
    for (const auto& [id, _] : present) m.rois.push_back(roi_stats(pred, *labels, static_cast<int>(id)));
  }
  return m;
}

}  // namespace octqsm
