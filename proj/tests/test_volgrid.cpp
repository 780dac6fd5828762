#include <cstring>
#include <fstream>
#include <random>

#include "doctest.h"
#include "octqsm/volume.hpp"
#include "test_util.hpp"

using namespace octqsm;
using testutil::TempDir;

namespace {

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("volume construction rejects bad geometry") {
  CHECK_THROWS_AS(Volume(Dims{0, 2, 2}), std::invalid_argument);
  CHECK_THROWS_AS(Volume(Dims{2, 2, 2}, VoxelSize{1, 0, 1}), std::invalid_argument);
  CHECK_THROWS_AS(Volume(Dims{2, 2, 2}, VoxelSize{1, -1, 1}), std::invalid_argument);
  CHECK_THROWS_AS(Volume(Dims{2, 2, 2}, std::vector<float>(7)), std::invalid_argument);
  const Volume v(Dims{2, 3, 4});
  CHECK(v.size() == 24);
  CHECK(v.index(1, 2, 3) == 1 + 2 * (2 + 3 * 3));
}

TEST_CASE("with_unit is the only unit change") {
  const Volume v = testutil::random_volume({4, 4, 4}, 1);
  const Volume f = v.with_unit(Unit::field_normalized);
  CHECK(f.unit() == Unit::field_normalized);
  CHECK(std::equal(f.data().begin(), f.data().end(), v.data().begin()));
  auto [padded, rec] = pad_to_multiple(f, 8);
  CHECK(padded.unit() == Unit::field_normalized);
  CHECK(crop_with_record(padded, rec).unit() == Unit::field_normalized);
  CHECK(crop_region(f, {0, 0, 0}, {2, 2, 2}).unit() == Unit::field_normalized);
}

TEST_CASE("qvol file layout") {
  TempDir dir("volgrid");
  Volume one(Dims{1, 1, 1}, VoxelSize{0.6F, 0.7F, 2.0F}, Unit::unitless);
  one(0, 0, 0) = 42.0F;
  write_volume(one, dir / "one.qvol");
  const std::string bytes = testutil::slurp(dir / "one.qvol");
  REQUIRE(bytes.size() == kQvolHeaderSize + 4);
  CHECK(bytes.substr(0, 4) == "QVOL");
  std::uint32_t u32 = 0;
  std::memcpy(&u32, bytes.data() + 4, 4);
  CHECK(u32 == 1);
  float f32[3];
  std::memcpy(f32, bytes.data() + 20, 12);
  CHECK(f32[0] == 0.6F);
  CHECK(f32[1] == 0.7F);
  CHECK(f32[2] == 2.0F);
  CHECK(bytes[32] == 2);
  CHECK(bytes[33] == 0);
  float payload = 0;
  std::memcpy(&payload, bytes.data() + 36, 4);
  CHECK(payload == 42.0F);

  write_volume(one, dir / "two.qvol");
  CHECK(testutil::slurp(dir / "two.qvol") == bytes);
}

TEST_CASE("qvol zero volume keeps dims") {
  TempDir dir("volgrid");
  const Volume z(Dims{2, 3, 4});
  write_volume(z, dir / "z.qvol");
  const Volume r = read_volume(dir / "z.qvol");
  CHECK(r.dims() == Dims{2, 3, 4});
  CHECK(r == z);
}

TEST_CASE("qvol round trip is bit exact for random dims") {
  TempDir dir("volgrid");
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 64);
  std::uniform_real_distribution<float> vox(0.1F, 3.0F);
  for (int trial = 0; trial < 12; ++trial) {
    const Dims d{dim(rng), dim(rng), dim(rng)};
    Volume v = testutil::random_volume(d, 100 + trial, -1e4, 1e4);
    v = Volume(d, std::vector<float>(v.data().begin(), v.data().end()), VoxelSize{vox(rng), vox(rng), vox(rng)},
               static_cast<Unit>(trial % 3));
    v.data()[0] = -0.0F;
    write_volume(v, dir / "r.qvol");
    const Volume r = read_volume(dir / "r.qvol");
    CHECK(r.dims() == v.dims());
    CHECK(r.voxel_size() == v.voxel_size());
    CHECK(r.unit() == v.unit());
    CHECK(std::memcmp(r.data().data(), v.data().data(), 4 * v.size()) == 0);
  }
}

TEST_CASE("qvol read errors") {
  TempDir dir("volgrid");
  CHECK_THROWS_AS(read_volume(dir / "missing.qvol"), IoError);

  write_bytes(dir / "magic.qvol", std::string("NOPE") + std::string(40, '\0'));
  CHECK_THROWS_AS(read_volume(dir / "magic.qvol"), FormatError);

  // 8^3 header with a 10-byte payload
  write_volume(Volume(Dims{8, 8, 8}), dir / "full.qvol");
  std::string bytes = testutil::slurp(dir / "full.qvol");
  write_bytes(dir / "trunc.qvol", bytes.substr(0, kQvolHeaderSize + 10));
  try {
    (void)read_volume(dir / "trunc.qvol");
    FAIL("expected truncated payload error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("truncated payload") != std::string::npos);
  }

  std::string v2 = bytes;
  v2[4] = 2;
  write_bytes(dir / "v2.qvol", v2);
  CHECK_THROWS_WITH_AS(read_volume(dir / "v2.qvol"), doctest::Contains("version"), FormatError);

  write_bytes(dir / "extra.qvol", bytes + "xx");
  CHECK_THROWS_AS(read_volume(dir / "extra.qvol"), FormatError);

  std::string enc = bytes;
  enc[33] = 1;
  write_bytes(dir / "enc.qvol", enc);
  CHECK_THROWS_AS(read_volume(dir / "enc.qvol"), FormatError);
}

TEST_CASE("pad to multiple of 8 on 164x205x105") {
  const Volume v = testutil::random_volume({164, 205, 105}, 3);
  auto [padded, rec] = pad_to_multiple(v, 8);
  CHECK(padded.dims() == Dims{168, 208, 112});
  CHECK(rec.before == std::array<int, 3>{2, 1, 3});
  CHECK(rec.after == std::array<int, 3>{2, 2, 4});
  CHECK(crop_with_record(padded, rec) == v);
}

TEST_CASE("pad is identity when already divisible") {
  const Volume v = testutil::random_volume({48, 48, 48}, 4);
  auto [padded, rec] = pad_to_multiple(v, 8);
  CHECK(rec.empty());
  CHECK(padded == v);
  CHECK(crop_with_record(v, PadRecord{}) == v);
  CHECK_THROWS_AS(pad_to_multiple(v, 0), std::invalid_argument);
}

TEST_CASE("pad then crop is identity and padding is zero") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> dim(1, 40);
  for (int m : {1, 2, 4, 8, 16}) {
    for (int trial = 0; trial < 5; ++trial) {
      const Dims d{dim(rng), dim(rng), dim(rng)};
      const Volume v = testutil::random_volume(d, 1000 + trial, 0.5, 1.0);
      auto [padded, rec] = pad_to_multiple(v, m);
      const auto pd = padded.dims().as_array();
      const auto in = d.as_array();
      for (int a = 0; a < 3; ++a) {
        CHECK(pd[a] % m == 0);
        CHECK(pd[a] >= in[a]);
        CHECK(pd[a] - in[a] < m);
        CHECK(rec.after[a] - rec.before[a] >= 0);
        CHECK(rec.after[a] - rec.before[a] <= 1);
      }
      std::size_t nonzero = 0;
      for (float x : padded.data()) nonzero += x != 0.0F;
      CHECK(nonzero == v.size());  // originals are all in [0.5, 1)
      CHECK(crop_with_record(padded, rec) == v);
    }
  }
}

TEST_CASE("crop_with_record rejects inconsistent records") {
  const Volume v(Dims{4, 4, 4});
  PadRecord big;
  big.before = {2, 0, 0};
  big.after = {2, 0, 0};
  CHECK_THROWS_AS(crop_with_record(v, big), std::invalid_argument);
  PadRecord neg;
  neg.before = {-1, 0, 0};
  CHECK_THROWS_AS(crop_with_record(v, neg), std::invalid_argument);
  CHECK_THROWS_AS(crop_region(v, {1, 0, 0}, {4, 1, 1}), std::invalid_argument);
}
