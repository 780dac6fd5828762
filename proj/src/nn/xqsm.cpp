#include "octqsm/xqsm.hpp"

#include <cmath>
#include <sstream>

namespace octqsm::nn {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
OctBatchNorm<T> make_bn(const std::string& name, OctChannels ch, const NetworkConfig& c) {
  return {BatchNormParams<T>(name + ".high", ch.high, c.bn_eps, c.bn_momentum),
          BatchNormParams<T>(name + ".low", ch.low, c.bn_eps, c.bn_momentum)};
}

template <typename T>
void check_finite(const OctFeature<T>& f, const std::string& where) {
  if (!f.high.all_finite() || !f.low.all_finite()) throw NumericalError("non-finite activation after " + where);
}

template <typename T>
OctFeature<T> pool_feature(const OctFeature<T>& x) {
  return {max_pool3d(x.high), max_pool3d(x.low)};
}

template <typename T>
OctFeature<T> concat_feature(const OctFeature<T>& a, const OctFeature<T>& b) {
  return {concat_channels(a.high, b.high), concat_channels(a.low, b.low)};
}

template <typename T>
void accumulate(OctFeature<T>& into, const OctFeature<T>& v) {
  for (auto [dst, src] : {std::pair{&into.high, &v.high}, std::pair{&into.low, &v.low}}) {
    auto a = dst->data();
    auto b = src->data();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  }
}

// BN + ReLU per branch. Absent (zero-channel) branches pass through.
template <typename T>
OctFeature<T> bn_relu(const OctFeature<T>& x, OctBatchNorm<T>& bn, Mode mode, BatchNormCache<T>* ch,
                      BatchNormCache<T>* cl) {
  OctFeature<T> y;
  y.high = x.high.channels() > 0 ? relu(batch_norm3d(x.high, bn.high, mode, ch)) : x.high;
  y.low = x.low.channels() > 0 ? relu(batch_norm3d(x.low, bn.low, mode, cl)) : x.low;
  return y;
}

template <typename T>
OctFeature<T> bn_relu_backward(const OctFeature<T>& act, OctBatchNorm<T>& bn, const BatchNormCache<T>& ch,
                               const BatchNormCache<T>& cl, const OctFeature<T>& dy) {
  OctFeature<T> dx;
  // relu(z) > 0 exactly where z > 0, so the post-ReLU activation carries the mask.
  dx.high = act.high.channels() > 0 ? batch_norm3d_backward(ch, bn.high, relu_backward(act.high, dy.high)) : dy.high;
  dx.low = act.low.channels() > 0 ? batch_norm3d_backward(cl, bn.low, relu_backward(act.low, dy.low)) : dy.low;
  return dx;
}

}  // namespace

void NetworkConfig::validate() const {
  if (width < 2 || width % 2 != 0) throw std::invalid_argument("network width must be even and >= 2");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("network alpha must be in (0, 1)");
  for (int level : {width, 2 * width, 4 * width}) {
    const auto ch = OctChannels::split(level, alpha);
    if (ch.high < 1 || ch.low < 1)
      throw std::invalid_argument("alpha " + format_double(alpha) + " leaves an empty branch at width " +
                                  std::to_string(level));
  }
  if (divisor < 8 || divisor % 8 != 0) throw std::invalid_argument("network divisor must be a multiple of 8");
  if (!(value_scale > 0.0) || !std::isfinite(value_scale)) throw std::invalid_argument("value_scale must be > 0");
  if (!(bn_eps > 0.0)) throw std::invalid_argument("bn_eps must be > 0");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw std::invalid_argument("bn_momentum must be in [0, 1]");
  noise.validate();
}

std::map<std::string, std::string> NetworkConfig::to_key_values() const {
  std::string snr;
  for (double s : noise.snr_list) snr += (snr.empty() ? "" : ",") + format_double(s);
  return {{"width", std::to_string(width)},
          {"alpha", format_double(alpha)},
          {"noise_enabled", noise.enabled ? "1" : "0"},
          {"noise_p", format_double(noise.probability)},
          {"snr_list", snr},
          {"divisor", std::to_string(divisor)},
          {"value_scale", format_double(value_scale)},
          {"bn_eps", format_double(bn_eps)},
          {"bn_momentum", format_double(bn_momentum)}};
}

NetworkConfig NetworkConfig::from_key_values(const std::map<std::string, std::string>& kv) {
  NetworkConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "width") c.width = std::stoi(value);
    else if (key == "alpha") c.alpha = std::stod(value);
    else if (key == "noise_enabled") c.noise.enabled = value == "1";
    else if (key == "noise_p") c.noise.probability = std::stod(value);
    else if (key == "snr_list") {
      c.noise.snr_list.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) c.noise.snr_list.push_back(std::stod(item));
    } else if (key == "divisor") c.divisor = std::stoi(value);
    else if (key == "value_scale") c.value_scale = std::stod(value);
    else if (key == "bn_eps") c.bn_eps = std::stod(value);
    else if (key == "bn_momentum") c.bn_momentum = std::stod(value);
    else throw std::invalid_argument("unknown network config key '" + key + "'");
  }
  c.validate();
  return c;
}

NetworkConfig NetworkConfig::desk() {
  NetworkConfig c;
  c.width = 8;
  return c;
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::noise: return "noise";
    case LayerKind::octconv: return "octconv";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::transposed_conv: return "transposed_conv";
    case LayerKind::batch_norm: return "batch_norm";
    case LayerKind::relu: return "relu";
    case LayerKind::concat: return "concat";
    case LayerKind::final_conv: return "final_conv";
    case LayerKind::residual_add: return "residual_add";
  }
  return "unknown";
}

LayerInventory count_layers(const std::vector<LayerKind>& trace) {
  LayerInventory inv;
  for (LayerKind k : trace) {
    switch (k) {
      case LayerKind::noise: ++inv.noise; break;
      case LayerKind::octconv: ++inv.octconv; break;
      case LayerKind::max_pool: ++inv.max_pool; break;
      case LayerKind::transposed_conv: ++inv.transposed_conv; break;
      case LayerKind::batch_norm: ++inv.batch_norm; break;
      case LayerKind::final_conv: ++inv.final_conv; break;
      default: break;
    }
  }
  return inv;
}

template <typename T>
Xqsm<T>::Xqsm(NetworkConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const int w = config_.width;
  const double a = config_.alpha;
  const OctChannels l1 = OctChannels::split(w, a);
  const OctChannels l2 = OctChannels::split(2 * w, a);
  const OctChannels l3 = OctChannels::split(4 * w, a);
  const OctChannels input{1, 0};
  const OctChannels output{w, 0};

  const std::array<std::pair<OctChannels, OctChannels>, 10> plan{{
      {input, l1},
      {l1, l1},
      {l1, l2},
      {l2, l2},
      {l2, l3},
      {l3, l3},
      {l2 + l2, l2},
      {l2, l2},
      {l1 + l1, l1},
      {l1, output},
  }};
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const std::string name = "oct" + std::to_string(i);
    oct[i] = OctConvParams<T>(name, plan[i].first, plan[i].second);
    oct_bn[i] = make_bn<T>("bn_" + name, plan[i].second, config_);
  }
  up[0] = {ConvParams<T>("up0.high", l3.high, l2.high, 2, 2, 0), ConvParams<T>("up0.low", l3.low, l2.low, 2, 2, 0)};
  up[1] = {ConvParams<T>("up1.high", l2.high, l1.high, 2, 2, 0), ConvParams<T>("up1.low", l2.low, l1.low, 2, 2, 0)};
  up_bn[0] = make_bn<T>("bn_up0", l2, config_);
  up_bn[1] = make_bn<T>("bn_up1", l1, config_);
  final_conv = ConvParams<T>("final", w, 1, 1, 1, 0);

  std::mt19937_64 rng(seed);
  for (auto& o : oct) o.init_normal(rng);
  for (auto& u : up) {
    u.high.init_normal(rng);
    u.low.init_normal(rng);
  }
  final_conv.init_normal(rng);
}

template <typename T>
Tensor5<T> Xqsm<T>::forward(const Tensor5<T>& x, Mode mode, std::mt19937_64* noise_rng, ForwardCache<T>* cache,
                            std::vector<LayerKind>* trace, NoiseEvent* noise_event) {
  if (x.channels() != 1 || x.batch() < 1)
    throw std::invalid_argument("network input must be (N>=1, 1, D, H, W), got " + shape_string(x.shape()));
  for (int d : x.spatial())
    if (d < config_.divisor || d % config_.divisor != 0)
      throw std::invalid_argument("network input dims must be divisible by " + std::to_string(config_.divisor) +
                                  ", got " + shape_string(x.shape()));
  if (!x.all_finite()) throw NumericalError("non-finite network input");

  auto record = [trace](std::initializer_list<LayerKind> kinds) {
    if (trace) trace->insert(trace->end(), kinds);
  };
  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  const bool keep = cache != nullptr;

  record({LayerKind::noise});
  Tensor5<T> x0;
  if (mode == Mode::train && config_.noise.enabled) {
    if (noise_rng == nullptr) throw std::invalid_argument("train mode with noise needs a noise RNG");
    x0 = noise_layer(x, *noise_rng, config_.noise, noise_event);
  } else {
    x0 = x;
    if (noise_event) *noise_event = {};
  }

  auto block = [&](std::size_t i, const OctFeature<T>& in) {
    record({LayerKind::octconv, LayerKind::batch_norm, LayerKind::relu});
    BlockCache<T>& bc = c.blocks[i];
    OctFeature<T> z = octconv_forward(in, oct[i], keep ? &bc.conv : nullptr);
    OctFeature<T> a = bn_relu(z, oct_bn[i], mode, keep ? &bc.bn_high : nullptr, keep ? &bc.bn_low : nullptr);
    check_finite(a, "octconv layer " + std::to_string(i));
    return a;
  };
  auto upblock = [&](std::size_t i, const OctFeature<T>& in) {
    record({LayerKind::transposed_conv, LayerKind::batch_norm, LayerKind::relu});
    OctFeature<T> z{conv_transpose3d(in.high, up[i].high), conv_transpose3d(in.low, up[i].low)};
    UpCache<T>& uc = c.ups[i];
    OctFeature<T> a = bn_relu(z, up_bn[i], mode, keep ? &uc.bn_high : nullptr, keep ? &uc.bn_low : nullptr);
    check_finite(a, "upsampling layer " + std::to_string(i));
    return a;
  };
  auto pool = [&](const OctFeature<T>& in) {
    record({LayerKind::max_pool});
    return pool_feature(in);
  };
  auto concat = [&](const OctFeature<T>& a, const OctFeature<T>& b) {
    record({LayerKind::concat});
    return concat_feature(a, b);
  };

  // Eval-mode calls without a cache only keep what the skips need.
  std::array<OctFeature<T>, 10>& act = c.act;
  act[0] = block(0, high_only(x0));
  act[1] = block(1, act[0]);
  c.pool1 = pool(act[1]);
  act[2] = block(2, c.pool1);
  act[3] = block(3, act[2]);
  c.pool2 = pool(act[3]);
  act[4] = block(4, c.pool2);
  act[5] = block(5, act[4]);
  c.up_act[0] = upblock(0, act[5]);
  c.cat1 = concat(c.up_act[0], act[3]);
  act[6] = block(6, c.cat1);
  act[7] = block(7, act[6]);
  c.up_act[1] = upblock(1, act[7]);
  c.cat2 = concat(c.up_act[1], act[1]);
  act[8] = block(8, c.cat2);
  act[9] = block(9, act[8]);

  record({LayerKind::final_conv, LayerKind::residual_add});
  Tensor5<T> y = add(conv3d(act[9].high, final_conv), x0);
  if (!y.all_finite()) throw NumericalError("non-finite network output");
  if (keep) c.input = std::move(x0);
  return y;
}

template <typename T>
Tensor5<T> Xqsm<T>::backward(const ForwardCache<T>& c, const Tensor5<T>& dy) {
  auto block_back = [&](std::size_t i, const OctFeature<T>& in, const OctFeature<T>& g) {
    const BlockCache<T>& bc = c.blocks[i];
    const OctFeature<T> dz = bn_relu_backward(c.act[i], oct_bn[i], bc.bn_high, bc.bn_low, g);
    return octconv_backward(in, bc.conv, oct[i], dz);
  };
  auto up_back = [&](std::size_t i, const OctFeature<T>& in, const OctFeature<T>& g) {
    const UpCache<T>& uc = c.ups[i];
    const OctFeature<T> dz = bn_relu_backward(c.up_act[i], up_bn[i], uc.bn_high, uc.bn_low, g);
    return OctFeature<T>{conv_transpose3d_backward(in.high, up[i].high, dz.high),
                         conv_transpose3d_backward(in.low, up[i].low, dz.low)};
  };
  auto split = [](const OctFeature<T>& g, OctChannels first) {
    auto [ah, bh] = split_channels(g.high, first.high);
    auto [al, bl] = split_channels(g.low, first.low);
    return std::pair{OctFeature<T>{std::move(ah), std::move(al)}, OctFeature<T>{std::move(bh), std::move(bl)}};
  };

  std::array<OctFeature<T>, 10> g;
  g[9] = OctFeature<T>{conv3d_backward(c.act[9].high, final_conv, dy), c.act[9].low};
  g[8] = block_back(9, c.act[8], g[9]);

  auto [g_up1, g_skip1] = split(block_back(8, c.cat2, g[8]), c.up_act[1].channels());
  g[7] = up_back(1, c.act[7], g_up1);
  g[6] = block_back(7, c.act[6], g[7]);

  auto [g_up0, g_skip2] = split(block_back(6, c.cat1, g[6]), c.up_act[0].channels());
  g[5] = up_back(0, c.act[5], g_up0);
  g[4] = block_back(5, c.act[4], g[5]);
  const OctFeature<T> g_pool2 = block_back(4, c.pool2, g[4]);
  g[3] = std::move(g_skip2);
  accumulate(g[3], OctFeature<T>{max_pool3d_backward(c.act[3].high, g_pool2.high),
                                  max_pool3d_backward(c.act[3].low, g_pool2.low)});
  g[2] = block_back(3, c.act[2], g[3]);
  const OctFeature<T> g_pool1 = block_back(2, c.pool1, g[2]);
  g[1] = std::move(g_skip1);
  accumulate(g[1], OctFeature<T>{max_pool3d_backward(c.act[1].high, g_pool1.high),
                                  max_pool3d_backward(c.act[1].low, g_pool1.low)});
  g[0] = block_back(1, c.act[0], g[1]);
  const OctFeature<T> g_in = block_back(0, high_only(c.input), g[0]);
  return add(dy, g_in.high);
}

template <typename T>
std::vector<Param<T>*> Xqsm<T>::params() {
  std::vector<Param<T>*> out;
  for (std::size_t i = 0; i < oct.size(); ++i) {
    for (Param<T>* p : oct[i].params()) out.push_back(p);
    for (BatchNormParams<T>* bn : {&oct_bn[i].high, &oct_bn[i].low})
      if (bn->channels > 0) {
        out.push_back(&bn->gain);
        out.push_back(&bn->shift);
      }
  }
  for (std::size_t i = 0; i < up.size(); ++i) {
    for (ConvParams<T>* cp : {&up[i].high, &up[i].low}) {
      out.push_back(&cp->weight);
      out.push_back(&cp->bias);
    }
    for (BatchNormParams<T>* bn : {&up_bn[i].high, &up_bn[i].low}) {
      out.push_back(&bn->gain);
      out.push_back(&bn->shift);
    }
  }
  out.push_back(&final_conv.weight);
  out.push_back(&final_conv.bias);
  return out;
}

template <typename T>
void Xqsm<T>::zero_grad() {
  for (Param<T>* p : params()) p->zero_grad();
}

template <typename T>
std::size_t Xqsm<T>::parameter_count() {
  std::size_t n = 0;
  for (Param<T>* p : params()) n += p->size();
  return n;
}

template <typename T>
void Xqsm<T>::visit_buffers(
    const std::function<void(const std::string&, const std::vector<int>&, std::vector<T>&)>& fn) {
  auto visit_bn = [&fn](BatchNormParams<T>& bn) {
    if (bn.channels == 0) return;
    fn(bn.gain.name, bn.gain.shape, bn.gain.value);
    fn(bn.shift.name, bn.shift.shape, bn.shift.value);
    fn(bn.name + ".running_mean", {bn.channels}, bn.running_mean);
    fn(bn.name + ".running_var", {bn.channels}, bn.running_var);
  };
  for (std::size_t i = 0; i < oct.size(); ++i) {
    for (Param<T>* p : oct[i].params()) fn(p->name, p->shape, p->value);
    visit_bn(oct_bn[i].high);
    visit_bn(oct_bn[i].low);
  }
  for (std::size_t i = 0; i < up.size(); ++i) {
    for (ConvParams<T>* cp : {&up[i].high, &up[i].low}) {
      fn(cp->weight.name, cp->weight.shape, cp->weight.value);
      fn(cp->bias.name, cp->bias.shape, cp->bias.value);
    }
    visit_bn(up_bn[i].high);
    visit_bn(up_bn[i].low);
  }
  fn(final_conv.weight.name, final_conv.weight.shape, final_conv.weight.value);
  fn(final_conv.bias.name, final_conv.bias.shape, final_conv.bias.value);
}

template <typename T>
void Xqsm<T>::make_identity() {
  for (auto& o : oct) o.set_zero();
  for (auto& u : up) {
    u.high.set_zero();
    u.low.set_zero();
  }
  final_conv.set_zero();
  auto zero_bn = [](OctBatchNorm<T>& bn) {
    for (BatchNormParams<T>* b : {&bn.high, &bn.low}) {
      std::fill(b->gain.value.begin(), b->gain.value.end(), T(0));
      std::fill(b->shift.value.begin(), b->shift.value.end(), T(0));
    }
  };
  for (auto& bn : oct_bn) zero_bn(bn);
  for (auto& bn : up_bn) zero_bn(bn);
}

template <typename T>
LayerInventory Xqsm<T>::inventory() const {
  LayerInventory inv;
  inv.octconv = static_cast<int>(oct.size());
  inv.max_pool = 2;
  inv.transposed_conv = static_cast<int>(up.size());
  inv.batch_norm = static_cast<int>(oct_bn.size() + up_bn.size());
  inv.final_conv = 1;
  inv.noise = 1;
  return inv;
}

template <typename T>
Xqsm<T> build_xqsm(const NetworkConfig& config, std::uint64_t seed) {
  return Xqsm<T>(config, seed);
}

template <typename T>
Tensor5<T> network_forward(Xqsm<T>& net, const Tensor5<T>& x, Mode mode, std::mt19937_64* noise_rng,
                           ForwardCache<T>* cache) {
  return net.forward(x, mode, noise_rng, cache);
}

template class Xqsm<float>;
template class Xqsm<double>;
template Xqsm<float> build_xqsm(const NetworkConfig&, std::uint64_t);
template Xqsm<double> build_xqsm(const NetworkConfig&, std::uint64_t);
template Tensor5<float> network_forward(Xqsm<float>&, const Tensor5<float>&, Mode, std::mt19937_64*,
                                        ForwardCache<float>*);
template Tensor5<double> network_forward(Xqsm<double>&, const Tensor5<double>&, Mode, std::mt19937_64*,
                                         ForwardCache<double>*);

}  // namespace octqsm::nn
