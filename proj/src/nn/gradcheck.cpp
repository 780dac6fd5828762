#include "octqsm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "octqsm/xqsm.hpp"

namespace octqsm::nn {

namespace {

using TD = Tensor5<double>;
using Shape = TD::Shape;

TD random_tensor(Shape shape, std::mt19937_64& rng, double min_abs = 0.0) {
  TD t(shape);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : t.data()) {
    do v = u(rng);
    while (std::abs(v) < min_abs);
  }
  return t;
}

double weighted_sum(const TD& y, const TD& r) {
  double s = 0;
  auto a = y.data();
  auto b = r.data();
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double weighted_sum(const OctFeature<double>& y, const OctFeature<double>& r) {
  return weighted_sum(y.high, r.high) + weighted_sum(y.low, r.low);
}

// Coordinates to perturb and the analytic derivative of the objective at each.
struct Probe {
  std::vector<double*> coords;
  std::vector<double> analytic;

  void add(std::span<double> values, std::span<const double> grads) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      coords.push_back(&values[i]);
      analytic.push_back(grads[i]);
    }
  }
  void add(TD& x, const TD& g) { add(x.data(), g.data()); }
  void add(Param<double>& p) { add(std::span<double>(p.value), std::span<const double>(p.grad)); }
};

double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
  return std::sqrt(diff) / denom;
}

std::vector<double> numeric_gradient(const Probe& probe, const std::function<double()>& objective, double h) {
  std::vector<double> num(probe.coords.size());
  for (std::size_t i = 0; i < probe.coords.size(); ++i) {
    double* c = probe.coords[i];
    const double saved = *c;
    *c = saved + h;
    const double up = objective();
    *c = saved - h;
    const double down = objective();
    *c = saved;
    num[i] = (up - down) / (2 * h);
  }
  return num;
}

GradCheckResult finish(std::string name, const Probe& probe, const std::function<double()>& objective,
                       const GradCheckOptions& opt) {
  GradCheckResult r;
  r.name = std::move(name);
  r.checked = probe.coords.size();
  r.tolerance = opt.layer_tolerance;
  r.rel_error = relative_error(probe.analytic, numeric_gradient(probe, objective, opt.step));
  return r;
}

GradCheckResult check_conv(const char* name, Shape xs, int out, int k, int s, int p, const GradCheckOptions& opt,
                           std::mt19937_64& rng) {
  TD x = random_tensor(xs, rng);
  ConvParams<double> cp(name, xs[1], out, k, s, p);
  cp.init_normal(rng, 0.5);
  const TD r = random_tensor(conv3d(x, cp).shape(), rng);
  const TD dx = conv3d_backward(x, cp, r);
  Probe probe;
  probe.add(x, dx);
  probe.add(cp.weight);
  probe.add(cp.bias);
  return finish(name, probe, [&] { return weighted_sum(conv3d(x, cp), r); }, opt);
}

GradCheckResult check_transpose(const GradCheckOptions& opt, std::mt19937_64& rng) {
  TD x = random_tensor({2, 3, 3, 2, 4}, rng);
  ConvParams<double> cp("conv_transpose3d", 3, 2, 2, 2, 0);
  cp.init_normal(rng, 0.5);
  const TD r = random_tensor(conv_transpose3d(x, cp).shape(), rng);
  const TD dx = conv_transpose3d_backward(x, cp, r);
  Probe probe;
  probe.add(x, dx);
  probe.add(cp.weight);
  probe.add(cp.bias);
  return finish("conv_transpose3d k2 s2", probe, [&] { return weighted_sum(conv_transpose3d(x, cp), r); }, opt);
}

GradCheckResult check_pool(bool max, const GradCheckOptions& opt, std::mt19937_64& rng) {
  TD x = random_tensor({2, 2, 4, 6, 4}, rng);
  auto f = [max](const TD& v) { return max ? max_pool3d(v) : avg_pool3d(v); };
  const TD r = random_tensor(f(x).shape(), rng);
  const TD dx = max ? max_pool3d_backward(x, r) : avg_pool3d_backward(x, r);
  Probe probe;
  probe.add(x, dx);
  return finish(max ? "max_pool3d" : "avg_pool3d", probe, [&] { return weighted_sum(f(x), r); }, opt);
}

GradCheckResult check_batch_norm(Mode mode, const GradCheckOptions& opt, std::mt19937_64& rng) {
  TD x = random_tensor({3, 2, 3, 3, 2}, rng);
  BatchNormParams<double> bn("bn", 2);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  for (std::size_t c = 0; c < 2; ++c) {
    bn.gain.value[c] = u(rng);
    bn.shift.value[c] = u(rng) - 1.0;
    bn.running_mean[c] = u(rng) - 1.0;
    bn.running_var[c] = u(rng);
  }
  BatchNormCache<double> cache;
  const TD r = random_tensor(x.shape(), rng);
  batch_norm3d(x, bn, mode, &cache);
  const TD dx = batch_norm3d_backward(cache, bn, r);
  Probe probe;
  probe.add(x, dx);
  probe.add(bn.gain);
  probe.add(bn.shift);
  // Running statistics drift between calls but never enter a train-mode output.
  return finish(mode == Mode::train ? "batch_norm3d train" : "batch_norm3d eval", probe,
                [&] { return weighted_sum(batch_norm3d(x, bn, mode), r); }, opt);
}

GradCheckResult check_relu(const GradCheckOptions& opt, std::mt19937_64& rng) {
  TD x = random_tensor({2, 3, 2, 3, 4}, rng, 0.05);
  const TD r = random_tensor(x.shape(), rng);
  const TD dx = relu_backward(relu(x), r);
  Probe probe;
  probe.add(x, dx);
  return finish("relu", probe, [&] { return weighted_sum(relu(x), r); }, opt);
}

GradCheckResult check_concat(const GradCheckOptions& opt, std::mt19937_64& rng) {
  TD a = random_tensor({2, 2, 2, 3, 2}, rng);
  TD b = random_tensor({2, 3, 2, 3, 2}, rng);
  const TD r = random_tensor({2, 5, 2, 3, 2}, rng);
  auto [da, db] = split_channels(r, 2);
  Probe probe;
  probe.add(a, da);
  probe.add(b, db);
  return finish("concat_channels", probe, [&] { return weighted_sum(concat_channels(a, b), r); }, opt);
}

GradCheckResult check_add(const GradCheckOptions& opt, std::mt19937_64& rng) {
  TD a = random_tensor({2, 2, 2, 2, 2}, rng);
  TD b = random_tensor(a.shape(), rng);
  const TD r = random_tensor(a.shape(), rng);
  Probe probe;
  probe.add(a, r);
  probe.add(b, r);
  return finish("add", probe, [&] { return weighted_sum(add(a, b), r); }, opt);
}

GradCheckResult check_l2(const GradCheckOptions& opt, std::mt19937_64& rng) {
  TD pred = random_tensor({3, 1, 2, 3, 2}, rng);
  const TD label = random_tensor(pred.shape(), rng);
  const TD g = l2_loss_grad(pred, label);
  Probe probe;
  probe.add(pred, g);
  return finish("l2_loss", probe, [&] { return l2_loss(pred, label); }, opt);
}

GradCheckResult check_octconv(const char* name, OctChannels in, OctChannels out, const GradCheckOptions& opt,
                              std::mt19937_64& rng) {
  OctFeature<double> x;
  x.high = random_tensor({2, in.high, 4, 4, 4}, rng);
  x.low = random_tensor({2, in.low, 2, 2, 2}, rng);
  OctConvParams<double> p(name, in, out);
  p.init_normal(rng, 0.5);
  OctConvCache<double> cache;
  const OctFeature<double> y = octconv_forward(x, p, &cache);
  const OctFeature<double> r{random_tensor(y.high.shape(), rng), random_tensor(y.low.shape(), rng)};
  const OctFeature<double> dx = octconv_backward(x, cache, p, r);
  Probe probe;
  probe.add(x.high, dx.high);
  probe.add(x.low, dx.low);
  for (Param<double>* prm : p.params()) probe.add(*prm);
  return finish(name, probe, [&] { return weighted_sum(octconv_forward(x, p), r); }, opt);
}

}  // namespace

std::vector<GradCheckResult> check_layers(const GradCheckOptions& opt) {
  std::mt19937_64 rng(opt.seed);
  std::vector<GradCheckResult> out;
  out.push_back(check_conv("conv3d k3 s1 p1", {2, 3, 5, 6, 4}, 4, 3, 1, 1, opt, rng));
  out.push_back(check_conv("conv3d k3 s2 p1", {2, 2, 6, 5, 6}, 3, 3, 2, 1, opt, rng));
  out.push_back(check_conv("conv3d k1", {2, 3, 4, 3, 4}, 2, 1, 1, 0, opt, rng));
  out.push_back(check_transpose(opt, rng));
  out.push_back(check_pool(false, opt, rng));
  out.push_back(check_pool(true, opt, rng));
  out.push_back(check_batch_norm(Mode::train, opt, rng));
  out.push_back(check_batch_norm(Mode::eval, opt, rng));
  out.push_back(check_relu(opt, rng));
  out.push_back(check_concat(opt, rng));
  out.push_back(check_add(opt, rng));
  out.push_back(check_l2(opt, rng));
  out.push_back(check_octconv("octconv (2,2)->(3,1)", {2, 2}, {3, 1}, opt, rng));
  out.push_back(check_octconv("octconv (1,0)->(2,2)", {1, 0}, {2, 2}, opt, rng));
  out.push_back(check_octconv("octconv (2,2)->(2,0)", {2, 2}, {2, 0}, opt, rng));
  return out;
}

GradCheckResult check_network(const GradCheckOptions& opt) {
  std::mt19937_64 rng(opt.seed ^ 0x5eedULL);
  NetworkConfig cfg;
  cfg.width = opt.network_width;
  cfg.noise.enabled = false;
  Xqsm<double> net(cfg, opt.seed);
  // Larger weights than the training init so every path carries visible gradient.
  for (auto& o : net.oct) o.init_normal(rng, 0.3);
  for (auto& u : net.up) {
    u.high.init_normal(rng, 0.3);
    u.low.init_normal(rng, 0.3);
  }
  net.final_conv.init_normal(rng, 0.3);

  const int d = opt.network_dim;
  TD x = random_tensor({opt.network_batch, 1, d, d, d}, rng);
  ForwardCache<double> cache;
  const TD y = net.forward(x, Mode::train, nullptr, &cache);
  const TD r = random_tensor(y.shape(), rng);
  net.zero_grad();
  const TD dx = net.backward(cache, r);

  std::vector<std::pair<double*, double>> all_params;
  for (Param<double>* p : net.params())
    for (std::size_t i = 0; i < p->size(); ++i) all_params.emplace_back(&p->value[i], p->grad[i]);

  Probe params, inputs;
  for (int s = 0; s < opt.network_samples; ++s) {
    std::uniform_int_distribution<std::size_t> pick(0, all_params.size() - 1);
    const auto& [ptr, g] = all_params[pick(rng)];
    params.coords.push_back(ptr);
    params.analytic.push_back(g);
    std::uniform_int_distribution<std::size_t> pick_x(0, x.size() - 1);
    const std::size_t xi = pick_x(rng);
    inputs.coords.push_back(&x.data()[xi]);
    inputs.analytic.push_back(dx.data()[xi]);
  }
  auto objective = [&] { return weighted_sum(net.forward(x, Mode::train), r); };
  const double e_params = relative_error(params.analytic, numeric_gradient(params, objective, opt.step));
  const double e_inputs = relative_error(inputs.analytic, numeric_gradient(inputs, objective, opt.step));

  GradCheckResult res;
  res.name = "xqsm end-to-end (width " + std::to_string(cfg.width) + ", " + std::to_string(d) + "^3)";
  res.checked = params.coords.size() + inputs.coords.size();
  res.rel_error = std::max(e_params, e_inputs);
  res.tolerance = opt.network_tolerance;
  return res;
}

std::vector<GradCheckResult> check_all(const GradCheckOptions& opt) {
  auto out = check_layers(opt);
  out.push_back(check_network(opt));
  return out;
}

}  // namespace octqsm::nn
