#include "octqsm/octconv.hpp"

#include <cmath>

namespace octqsm::nn {

namespace {

template <typename T>
Tensor5<T> empty_like_batch(const Tensor5<T>& ref, std::array<int, 3> spatial) {
  return Tensor5<T>({ref.batch(), 0, spatial[0], spatial[1], spatial[2]});
}

template <typename T>
void accumulate(Tensor5<T>& into, const Tensor5<T>& v) {
  auto a = into.data();
  auto b = v.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// Sum of optional path outputs; a single path is moved through untouched.
template <typename T>
Tensor5<T> sum_paths(std::optional<Tensor5<T>> a, std::optional<Tensor5<T>> b, const Tensor5<T>& ref,
                     std::array<int, 3> spatial) {
  if (a && b) {
    accumulate(*a, *b);
    return std::move(*a);
  }
  if (a) return std::move(*a);
  if (b) return std::move(*b);
  return empty_like_batch(ref, spatial);
}

}  // namespace

OctChannels OctChannels::split(int channels, double alpha) {
  if (channels < 0 || alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("invalid octave channel split");
  const int high = static_cast<int>(std::lround(alpha * channels));
  return {high, channels - high};
}

template <typename T>
OctFeature<T> high_only(Tensor5<T> x) {
  OctFeature<T> f;
  const auto sp = x.spatial();
  f.low = Tensor5<T>({x.batch(), 0, sp[0] / 2, sp[1] / 2, sp[2] / 2});
  f.high = std::move(x);
  return f;
}

template <typename T>
OctConvParams<T>::OctConvParams(std::string n, OctChannels i, OctChannels o, int kernel)
    : name(std::move(n)), in(i), out(o) {
  if (in.high < 0 || in.low < 0 || out.high < 0 || out.low < 0 || in.total() == 0 || out.total() == 0)
    throw std::invalid_argument("octconv " + name + ": invalid channel counts");
  const int pad = kernel / 2;
  if (in.high > 0 && out.high > 0) hh.emplace(name + ".hh", in.high, out.high, kernel, 1, pad);
  if (in.high > 0 && out.low > 0) hl.emplace(name + ".hl", in.high, out.low, kernel, 1, pad);
  if (in.low > 0 && out.high > 0) {
    lh.emplace(name + ".lh", in.low, out.high, kernel, 1, pad);
    lh_up.emplace(name + ".lh_up", out.high, out.high, 2, 2, 0);
  }
  if (in.low > 0 && out.low > 0) ll.emplace(name + ".ll", in.low, out.low, kernel, 1, pad);
}

template <typename T>
void OctConvParams<T>::init_normal(std::mt19937_64& rng, double stddev) {
  for (auto* c : {&hh, &hl, &lh, &lh_up, &ll})
    if (*c) (*c)->init_normal(rng, stddev);
}

template <typename T>
void OctConvParams<T>::set_zero() {
  for (auto* c : {&hh, &hl, &lh, &lh_up, &ll})
    if (*c) (*c)->set_zero();
}

template <typename T>
std::vector<Param<T>*> OctConvParams<T>::params() {
  std::vector<Param<T>*> out;
  for (auto* c : {&hh, &hl, &lh, &lh_up, &ll})
    if (*c) {
      out.push_back(&(*c)->weight);
      out.push_back(&(*c)->bias);
    }
  return out;
}

template <typename T>
std::size_t OctConvParams<T>::main_kernel_weights() const {
  std::size_t n = 0;
  for (const auto* c : {&hh, &hl, &lh, &ll})
    if (*c) n += (*c)->weight.size();
  return n;
}

template <typename T>
OctFeature<T> octconv_forward(const OctFeature<T>& x, const OctConvParams<T>& p, OctConvCache<T>* cache) {
  if (x.channels() != p.in)
    throw std::invalid_argument("octconv " + p.name + ": input channels (" + std::to_string(x.high.channels()) + "," +
                                std::to_string(x.low.channels()) + ") do not match parameters (" +
                                std::to_string(p.in.high) + "," + std::to_string(p.in.low) + ")");
  const auto hs = x.high.spatial();
  const bool needs_low_geometry = p.in.low > 0 || p.out.low > 0;
  if (needs_low_geometry && (hs[0] % 2 || hs[1] % 2 || hs[2] % 2))
    throw std::invalid_argument("octconv " + p.name + ": high-branch dims must be even when a low branch exists");
  const std::array<int, 3> ls{hs[0] / 2, hs[1] / 2, hs[2] / 2};
  if (p.in.low > 0 && x.low.spatial() != ls)
    throw std::invalid_argument("octconv " + p.name + ": low branch must be half the high resolution");

  std::optional<Tensor5<T>> f_hh, f_lh, f_hl, f_ll;
  if (p.hh) f_hh = conv3d(x.high, *p.hh);
  if (p.hl) {
    Tensor5<T> pooled = avg_pool3d(x.high);
    f_hl = conv3d(pooled, *p.hl);
    if (cache) cache->pooled_high = std::move(pooled);
  }
  if (p.lh) {
    Tensor5<T> mid = conv3d(x.low, *p.lh);
    f_lh = conv_transpose3d(mid, *p.lh_up);
    if (cache) cache->lh_mid = std::move(mid);
  }
  if (p.ll) f_ll = conv3d(x.low, *p.ll);

  const Tensor5<T>& ref = p.in.high > 0 ? x.high : x.low;
  OctFeature<T> y;
  y.high = sum_paths(std::move(f_hh), std::move(f_lh), ref, hs);
  y.low = sum_paths(std::move(f_hl), std::move(f_ll), ref, ls);
  return y;
}

template <typename T>
OctFeature<T> octconv_backward(const OctFeature<T>& x, const OctConvCache<T>& cache, OctConvParams<T>& p,
                               const OctFeature<T>& dy) {
  if (dy.channels() != p.out) throw std::invalid_argument("octconv " + p.name + ": gradient channel mismatch");
  OctFeature<T> dx;
  dx.high = Tensor5<T>(x.high.shape());
  dx.low = Tensor5<T>(x.low.shape());
  if (p.hh) accumulate(dx.high, conv3d_backward(x.high, *p.hh, dy.high));
  if (p.lh) {
    const Tensor5<T> dmid = conv_transpose3d_backward(cache.lh_mid, *p.lh_up, dy.high);
    accumulate(dx.low, conv3d_backward(x.low, *p.lh, dmid));
  }
  if (p.hl) {
    const Tensor5<T> dpooled = conv3d_backward(cache.pooled_high, *p.hl, dy.low);
    accumulate(dx.high, avg_pool3d_backward(x.high, dpooled));
  }
  if (p.ll) accumulate(dx.low, conv3d_backward(x.low, *p.ll, dy.low));
  return dx;
}

void NoiseConfig::validate() const {
  if (!(probability >= 0.0 && probability <= 1.0)) throw std::invalid_argument("noise probability must be in [0, 1]");
  if (snr_list.empty()) throw std::invalid_argument("noise SNR list must be nonempty");
  for (double s : snr_list)
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("noise SNR values must be positive");
}

template <typename T>
Tensor5<T> noise_layer(const Tensor5<T>& x, std::mt19937_64& rng, const NoiseConfig& config, NoiseEvent* event) {
  config.validate();
  NoiseEvent ev;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(rng);
  if (u >= config.probability) {
    if (event) *event = ev;
    return x;
  }
  std::uniform_int_distribution<std::size_t> pick(0, config.snr_list.size() - 1);
  ev.applied = true;
  ev.snr = config.snr_list[pick(rng)];
  double sum_sq = 0;
  for (T v : x.data()) sum_sq += static_cast<double>(v) * v;
  ev.power = x.size() == 0 ? 0.0 : sum_sq / static_cast<double>(x.size());
  const double sigma = std::sqrt(ev.power / ev.snr);
  Tensor5<T> y = x;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (T& v : y.data()) v = static_cast<T>(v + sigma * gauss(rng));
  if (event) *event = ev;
  return y;
}

#define OCTQSM_INSTANTIATE_OCT(T)                                                                               \
  template OctFeature<T> high_only(Tensor5<T>);                                                                 \
  template struct OctConvParams<T>;                                                                             \
  template OctFeature<T> octconv_forward(const OctFeature<T>&, const OctConvParams<T>&, OctConvCache<T>*);      \
  template OctFeature<T> octconv_backward(const OctFeature<T>&, const OctConvCache<T>&, OctConvParams<T>&,      \
                                          const OctFeature<T>&);                                                \
  template Tensor5<T> noise_layer(const Tensor5<T>&, std::mt19937_64&, const NoiseConfig&, NoiseEvent*);

OCTQSM_INSTANTIATE_OCT(float)
OCTQSM_INSTANTIATE_OCT(double)

}  // namespace octqsm::nn
