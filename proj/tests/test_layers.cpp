#include <cmath>
#include <random>

#include "doctest.h"
#include "octqsm/adam.hpp"
#include "octqsm/gradcheck.hpp"
#include "octqsm/layers.hpp"
#include "test_util.hpp"

using namespace octqsm::nn;
using doctest::Approx;

namespace {

template <typename T>
Tensor5<T> random_tensor(typename Tensor5<T>::Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  Tensor5<T> t(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (T& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

}  // namespace

TEST_CASE("pointwise identity conv") {
  ConvParams<float> p("id", 1, 1, 1, 1, 0);
  p.weight.value[0] = 1.0F;
  const auto x = random_tensor<float>({2, 1, 4, 5, 6}, 1);
  CHECK(conv3d(x, p) == x);
}

TEST_CASE("zero weights give the bias") {
  ConvParams<double> p("b", 2, 3, 3, 1, 1);
  p.bias.value = {0.5, -1.0, 2.0};
  const auto y = conv3d(random_tensor<double>({1, 2, 6, 6, 6}, 2), p);
  CHECK(y.shape() == Tensor5<double>::Shape{1, 3, 6, 6, 6});
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < y.spatial_size(); ++i) CHECK(y.plane(0, c)[i] == p.bias.value[static_cast<std::size_t>(c)]);
}

TEST_CASE("direct and strided conv agree with a naive reference") {
  for (int k : {1, 3, 5}) {
    for (int s : {1, 2}) {
      const int pad = k / 2;
      ConvParams<double> p("c", 3, 5, k, s, pad);
      std::mt19937_64 rng(k * 10 + s);
      p.init_normal(rng, 0.3);
      const auto x = random_tensor<double>({2, 3, 7, 6, 9}, 5);
      const auto y = conv3d(x, p);
      const int od = (7 + 2 * pad - k) / s + 1, oh = (6 + 2 * pad - k) / s + 1, ow = (9 + 2 * pad - k) / s + 1;
      REQUIRE(y.shape() == Tensor5<double>::Shape{2, 5, od, oh, ow});
      double worst = 0;
      for (int n = 0; n < 2; ++n)
        for (int o = 0; o < 5; ++o)
          for (int d = 0; d < od; ++d)
            for (int h = 0; h < oh; ++h)
              for (int w = 0; w < ow; ++w) {
                double acc = p.bias.value[static_cast<std::size_t>(o)];
                for (int i = 0; i < 3; ++i)
                  for (int a = 0; a < k; ++a)
                    for (int b = 0; b < k; ++b)
                      for (int c = 0; c < k; ++c) {
                        const int zd = d * s - pad + a, zh = h * s - pad + b, zw = w * s - pad + c;
                        if (zd < 0 || zh < 0 || zw < 0 || zd >= 7 || zh >= 6 || zw >= 9) continue;
                        acc += p.weight.value[static_cast<std::size_t>((((o * 3 + i) * k + a) * k + b) * k + c)] *
                               x.at(n, i, zd, zh, zw);
                      }
                worst = std::max(worst, std::abs(acc - y.at(n, o, d, h, w)));
              }
      CHECK(worst < 1e-12);
    }
  }
}

TEST_CASE("conv shape errors") {
  ConvParams<float> p("c", 2, 2, 3, 1, 1);
  CHECK_THROWS_AS(conv3d(Tensor5<float>({1, 3, 4, 4, 4}), p), std::invalid_argument);
  ConvParams<float> big("c", 1, 1, 5, 1, 0);
  CHECK_THROWS_AS(conv3d(Tensor5<float>({1, 1, 3, 3, 3}), big), std::invalid_argument);
  CHECK_THROWS_AS(ConvParams<float>("bad", 0, 1, 3, 1, 1), std::invalid_argument);
}

TEST_CASE("transposed conv doubles dims") {
  ConvParams<float> p("t", 1, 1, 2, 2, 0);
  std::fill(p.weight.value.begin(), p.weight.value.end(), 1.0F);
  Tensor5<float> x({1, 1, 24, 24, 24}, 3.25F);
  const auto y = conv_transpose3d(x, p);
  CHECK(y.shape() == Tensor5<float>::Shape{1, 1, 48, 48, 48});
  for (float v : y.data()) CHECK(v == 3.25F);
  ConvParams<float> k3("t3", 1, 1, 3, 2, 0);
  CHECK_THROWS_AS(conv_transpose3d(x, k3), std::invalid_argument);
}

TEST_CASE("pooling arithmetic") {
  Tensor5<double> block({1, 1, 2, 2, 2});
  for (int i = 0; i < 8; ++i) block.data()[static_cast<std::size_t>(i)] = i;
  CHECK(avg_pool3d(block).data()[0] == 3.5);
  CHECK(max_pool3d(block).data()[0] == 7.0);

  Tensor5<float> c({2, 3, 4, 6, 8}, -1.5F);
  for (float v : testutil::values(avg_pool3d(c))) CHECK(v == -1.5F);
  for (float v : testutil::values(max_pool3d(c))) CHECK(v == -1.5F);
  CHECK(avg_pool3d(c).shape() == Tensor5<float>::Shape{2, 3, 2, 3, 4});
  CHECK_THROWS_AS(avg_pool3d(Tensor5<float>({1, 1, 3, 4, 4})), std::invalid_argument);
  CHECK_THROWS_AS(max_pool3d(Tensor5<float>({1, 1, 4, 4, 5})), std::invalid_argument);
}

TEST_CASE("max pool ties route the gradient to the first voxel") {
  Tensor5<double> x({1, 1, 2, 2, 2}, 1.0);
  Tensor5<double> dy({1, 1, 1, 1, 1}, 2.0);
  const auto dx = max_pool3d_backward(x, dy);
  CHECK(dx.data()[0] == 2.0);
  for (std::size_t i = 1; i < 8; ++i) CHECK(dx.data()[i] == 0.0);
}

TEST_CASE("batch norm train and eval") {
  BatchNormParams<double> p("bn", 3);
  const auto x = random_tensor<double>({2, 3, 4, 4, 4}, 4, -3, 5);
  const auto y = batch_norm3d(x, p, Mode::train);
  const double m = static_cast<double>(2 * 64);
  for (int c = 0; c < 3; ++c) {
    double mean = 0, var = 0, xm = 0;
    for (int n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 64; ++i) {
        mean += y.plane(n, c)[i];
        xm += x.plane(n, c)[i];
      }
    mean /= m;
    xm /= m;
    for (int n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 64; ++i) var += (y.plane(n, c)[i] - mean) * (y.plane(n, c)[i] - mean);
    var /= m;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == Approx(1.0).epsilon(1e-3));
    CHECK(p.running_mean[static_cast<std::size_t>(c)] == Approx(0.1 * xm));
  }

  BatchNormParams<double> fresh("bn", 3);
  const auto e = batch_norm3d(x, fresh, Mode::eval);
  const double scale = 1.0 / std::sqrt(1.0 + fresh.eps);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(e.data()[i] == Approx(x.data()[i] * scale).epsilon(1e-14));
  CHECK(fresh.running_mean == std::vector<double>(3, 0.0));

  BatchNormParams<double> one("bn", 1);
  CHECK_THROWS_AS(batch_norm3d(Tensor5<double>({1, 1, 1, 1, 1}), one, Mode::train), std::invalid_argument);
}

TEST_CASE("relu, add, concat, split") {
  Tensor5<float> neg({1, 2, 2, 2, 2}, -0.5F);
  for (float v : testutil::values(relu(neg))) CHECK(v == 0.0F);
  const auto pos = random_tensor<float>({1, 2, 2, 2, 2}, 6, 0, 2);
  CHECK(relu(pos) == pos);

  const auto x = random_tensor<float>({2, 3, 2, 4, 2}, 7);
  const auto y = random_tensor<float>({2, 5, 2, 4, 2}, 8);
  CHECK(add(x, Tensor5<float>(x.shape())) == x);
  const auto [a, b] = split_channels(concat_channels(x, y), 3);
  CHECK(a == x);
  CHECK(b == y);
  CHECK_THROWS_AS(add(x, y), std::invalid_argument);
  CHECK_THROWS_AS(concat_channels(x, Tensor5<float>({2, 1, 2, 4, 4})), std::invalid_argument);
  CHECK_THROWS_AS(split_channels(x, 4), std::invalid_argument);
}

TEST_CASE("l2 loss and its gradient") {
  const auto x = random_tensor<double>({3, 1, 2, 2, 2}, 9);
  CHECK(l2_loss(x, x) == 0.0);
  Tensor5<double> zero({1, 1, 2, 2, 2}), ones({1, 1, 2, 2, 2}, 1.0);
  CHECK(l2_loss(ones, zero) == 4.0);
  const auto y = random_tensor<double>({3, 1, 2, 2, 2}, 10);
  const auto g = l2_loss_grad(x, y);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.data()[i] == doctest::Approx((x.data()[i] - y.data()[i]) / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(l2_loss(x, ones), std::invalid_argument);
}

TEST_CASE("forward passes are deterministic") {
  ConvParams<float> p("c", 4, 4, 3, 1, 1);
  std::mt19937_64 rng(1);
  p.init_normal(rng);
  const auto x = random_tensor<float>({2, 4, 8, 8, 8}, 11);
  CHECK(conv3d(x, p) == conv3d(x, p));
  const auto dy = random_tensor<float>({2, 4, 8, 8, 8}, 12);
  ConvParams<float> q = p;
  CHECK(conv3d_backward(x, p, dy) == conv3d_backward(x, q, dy));
  CHECK(p.weight.grad == q.weight.grad);
}

TEST_CASE("conv init statistics") {
  ConvParams<double> p("c", 16, 16, 3, 1, 1);
  std::mt19937_64 rng(3);
  p.init_normal(rng);
  double s = 0, ss = 0;
  for (double v : p.weight.value) {
    s += v;
    ss += v * v;
  }
  const double n = static_cast<double>(p.weight.size());
  CHECK(std::abs(s / n) < 1e-3);
  CHECK(std::sqrt(ss / n) == Approx(0.01).epsilon(0.05));
}

TEST_CASE("finite difference gradient checks for every primitive") {
  const auto results = check_layers();
  CHECK(results.size() >= 12);
  for (const auto& r : results) {
    INFO(r.name << " rel error " << r.rel_error);
    CHECK(r.checked > 0);
    CHECK(r.rel_error < 1e-4);
  }
}

TEST_CASE("adam") {
  Param<double> w("w", {3}, 0.0);
  w.value = {1.0, -2.0, 0.5};
  Adam<double> opt({&w}, AdamConfig{0.01});
  opt.step();
  CHECK(w.value == std::vector<double>{1.0, -2.0, 0.5});

  Param<double> v("v", {3}, 0.0);
  v.value = {1.0, -2.0, 0.5};
  v.grad = {4.0, -0.25, 1e-3};
  Adam<double> first({&v}, AdamConfig{0.01});
  first.step();
  CHECK(first.step_count() == 1);
  CHECK(v.value[0] == Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(v.value[1] == Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(v.value[2] == Approx(0.5 - 0.01).epsilon(1e-4));

  // 1D quadratic 0.5 (x - 3)^2
  Param<double> x("x", {1}, 0.0);
  Adam<double> q({&x}, AdamConfig{0.05});
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) {
    x.grad[0] = x.value[0] - 3.0;
    losses.push_back(0.5 * x.grad[0] * x.grad[0]);
    q.step();
  }
  for (std::size_t i = 1; i < losses.size(); ++i) CHECK(losses[i] <= losses[i - 1]);
  CHECK(losses.back() < 0.2 * losses.front());
}
