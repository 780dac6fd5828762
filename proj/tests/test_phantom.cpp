#include <set>

#include "doctest.h"
#include "octqsm/dipole.hpp"
#include "octqsm/phantom.hpp"
#include "test_util.hpp"

using namespace octqsm;

TEST_CASE("shepp-logan 64^3 region counts") {
  const LabeledPhantom p = shepp_logan({64, 64, 64});
  std::array<std::size_t, 7> counts{};
  double sum = 0;
  for (std::size_t i = 0; i < p.chi.size(); ++i) {
    const float label = p.labels.data()[i];
    REQUIRE(label == std::round(label));
    counts[static_cast<std::size_t>(label)]++;
    sum += p.chi.data()[i];
  }
  CHECK(counts[1] == 52938);
  CHECK(counts[2] == 976);
  CHECK(counts[3] == 2398);
  CHECK(counts[4] == 2812);
  CHECK(counts[5] == 10);
  CHECK(counts[6] == 10);
  CHECK(sum == doctest::Approx(-6153000.0));
  CHECK(p.labels.unit() == Unit::unitless);
  CHECK(p.chi.unit() == Unit::ppb);
}

TEST_CASE("shepp-logan is piecewise constant on its region table") {
  const LabeledPhantom p = shepp_logan({48, 56, 52});
  const std::map<int, double> expected{{1, -100}, {2, -250}, {3, -200}, {4, -50}, {5, 150}, {6, 350}};
  CHECK(p.region_table == expected);
  std::set<int> seen;
  for (std::size_t i = 0; i < p.chi.size(); ++i) {
    const int label = static_cast<int>(p.labels.data()[i]);
    seen.insert(label);
    if (label == 0)
      CHECK(p.chi.data()[i] == 0.0F);
    else
      CHECK(p.chi.data()[i] == static_cast<float>(p.region_table.at(label)));
  }
  CHECK(seen == std::set<int>{0, 1, 2, 3, 4, 5, 6});
}

TEST_CASE("shepp-logan with zero values keeps its geometry") {
  const LabeledPhantom ref = shepp_logan({48, 48, 48});
  const LabeledPhantom z = shepp_logan({48, 48, 48}, {0, 0, 0, 0, 0, 0});
  for (float v : z.chi.data()) CHECK(v == 0.0F);
  CHECK(z.labels == ref.labels);
}

TEST_CASE("shepp-logan rejects small grids") {
  CHECK_THROWS_AS(shepp_logan({31, 64, 64}), std::invalid_argument);
  // the two smallest structures need 45 samples along x and y to span two voxels, 41 along z
  CHECK_THROWS_AS(shepp_logan({32, 32, 32}), std::invalid_argument);
  CHECK_THROWS_AS(shepp_logan({44, 64, 64}), std::invalid_argument);
  CHECK_THROWS_AS(shepp_logan({64, 64, 40}), std::invalid_argument);
  CHECK_NOTHROW(shepp_logan({45, 45, 41}));
  CHECK_NOTHROW(shepp_logan({45, 45, 45}));
}

TEST_CASE("random shapes determinism and value set") {
  ShapeConfig c;
  c.seed = 42;
  const Volume a = random_shapes(c);
  const Volume b = random_shapes(c);
  CHECK(a == b);
  c.seed = 43;
  CHECK_FALSE(random_shapes(c) == a);

  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    c.seed = seed;
    const Volume v = random_shapes(c);
    for (float x : v.data()) {
      const bool in_range = x >= c.chi_lo && x <= c.chi_hi;
      CHECK((x == 0.0F || in_range));
    }
  }
}

TEST_CASE("random shapes edge configurations") {
  ShapeConfig none;
  none.count_min = none.count_max = 0;
  for (float x : testutil::values(random_shapes(none))) CHECK(x == 0.0F);

  ShapeConfig one;
  one.count_min = one.count_max = 1;
  one.kinds = {ShapeKind::sphere};
  one.chi_lo = one.chi_hi = 100.0;
  std::set<float> values;
  for (float x : testutil::values(random_shapes(one))) values.insert(x);
  CHECK(values == std::set<float>{0.0F, 100.0F});
}

TEST_CASE("shape config validation") {
  ShapeConfig c;
  c.count_min = 5;
  c.count_max = 4;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ShapeConfig{};
  c.sphere_radius = {5, 3};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ShapeConfig{};
  c.dims = {16, 16, 16};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);  // edges up to 20
  c = ShapeConfig{};
  c.chi_lo = 10;
  c.chi_hi = -10;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = ShapeConfig{};
  c.kinds.clear();
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("shape config key-value round trip") {
  ShapeConfig c;
  c.dims = {40, 36, 32};
  c.voxel = {0.6F, 0.6F, 2.0F};
  c.count_min = 2;
  c.count_max = 9;
  c.kinds = {ShapeKind::cuboid, ShapeKind::sphere};
  c.sphere_radius = {2, 7};
  c.chi_lo = -123.5;
  c.chi_hi = 321.25;
  c.seed = 987654321;
  const ShapeConfig r = ShapeConfig::from_key_values(c.to_key_values());
  CHECK(r.to_key_values() == c.to_key_values());
  CHECK(random_shapes(r) == random_shapes(c));
  CHECK_THROWS_AS(ShapeConfig::from_key_values({{"bogus", "1"}}), std::invalid_argument);
  CHECK(shape_kind_from_string("cube") == ShapeKind::cube);
  CHECK_THROWS_AS(shape_kind_from_string("torus"), std::invalid_argument);
}

TEST_CASE("scale_chi") {
  const Volume v = testutil::random_volume({16, 16, 16}, 8, -200, 200);
  CHECK(scale_chi(v, 1.0) == v);
  for (float x : testutil::values(scale_chi(v, 0.0))) CHECK(x == 0.0F);
  CHECK(scale_chi(v.with_unit(Unit::unitless), 2.0).unit() == Unit::unitless);
  CHECK_THROWS_AS(scale_chi(v, std::nan("")), std::invalid_argument);

  const KernelGrid k = dipole_kernel(v.dims(), {});
  const Volume lhs = forward_field(scale_chi(v, 2.5), k);
  const Volume rhs = forward_field(v, k);
  for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(lhs.data()[i] == doctest::Approx(2.5 * rhs.data()[i]).epsilon(1e-4).scale(1.0));
}
