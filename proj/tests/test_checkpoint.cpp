#include <fstream>
#include <random>

#include "doctest.h"
#include "octqsm/checkpoint.hpp"
#include "test_util.hpp"

using namespace octqsm::nn;
using octqsm::FormatError;
using octqsm::IoError;
using testutil::TempDir;

namespace {

std::vector<float> all_buffers(Xqsm<float>& net) {
  std::vector<float> out;
  net.visit_buffers([&](const std::string&, const std::vector<int>&, std::vector<float>& v) {
    out.insert(out.end(), v.begin(), v.end());
  });
  return out;
}

void write_string(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary);
  f << s;
}

}  // namespace

TEST_CASE("checkpoint round trip restores every buffer and the config") {
  TempDir dir("ckpt");
  NetworkConfig cfg = NetworkConfig::desk();
  cfg.noise.probability = 0.4;
  cfg.noise.snr_list = {25, 12.5};
  Xqsm<float> net(cfg, 21);

  // move the running statistics away from their defaults
  std::mt19937_64 rng(1);
  Tensor5<float> x({2, 1, 16, 16, 16});
  std::normal_distribution<double> g(0, 0.2);
  for (float& v : x.data()) v = static_cast<float>(g(rng));
  (void)net.forward(x, Mode::train, &rng);

  save_checkpoint(net, dir / "a.qckp");
  Xqsm<float> back = load_checkpoint<float>(dir / "a.qckp");
  CHECK(back.config().to_key_values() == cfg.to_key_values());
  CHECK(all_buffers(back) == all_buffers(net));
  CHECK(back.forward(x, Mode::eval) == net.forward(x, Mode::eval));

  save_checkpoint(back, dir / "b.qckp");
  CHECK(testutil::slurp(dir / "a.qckp") == testutil::slurp(dir / "b.qckp"));

  const CheckpointContents c = read_checkpoint_file(dir / "a.qckp");
  CHECK(c.config.at("width") == "8");
  std::size_t total = 0;
  for (const auto& e : c.entries) {
    CHECK(e.offset == total);
    total += e.count;
  }
  CHECK(total == c.payload.size());
  CHECK(total > net.parameter_count());  // running statistics are stored too
}

TEST_CASE("checkpoint read errors") {
  TempDir dir("ckpt");
  CHECK_THROWS_AS(read_checkpoint_file(dir / "none.qckp"), IoError);
  write_string(dir / "junk.qckp", "NOTACHECKPOINT");
  CHECK_THROWS_AS(read_checkpoint_file(dir / "junk.qckp"), FormatError);

  Xqsm<float> net(NetworkConfig::desk(), 1);
  save_checkpoint(net, dir / "ok.qckp");
  const std::string bytes = testutil::slurp(dir / "ok.qckp");

  write_string(dir / "cut.qckp", bytes.substr(0, bytes.size() - 6));
  CHECK_THROWS_AS(read_checkpoint_file(dir / "cut.qckp"), FormatError);

  std::string v2 = bytes;
  v2[4] = 9;
  write_string(dir / "v2.qckp", v2);
  CHECK_THROWS_AS(read_checkpoint_file(dir / "v2.qckp"), FormatError);

  // a width-4 checkpoint loads as a width-4 network, never into mismatched shapes
  NetworkConfig small = NetworkConfig::desk();
  small.width = 4;
  Xqsm<float> w4(small, 2);
  save_checkpoint(w4, dir / "w4.qckp");
  CHECK(load_checkpoint<float>(dir / "w4.qckp").config().width == 4);

  std::string renamed = bytes;
  const auto at = renamed.find("param final.weight");
  REQUIRE(at != std::string::npos);
  renamed.replace(at + 6, 5, "fnord");
  write_string(dir / "renamed.qckp", renamed);
  CHECK_THROWS_AS(load_checkpoint<float>(dir / "renamed.qckp"), FormatError);
}
