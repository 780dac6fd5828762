#include <cstdlib>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "octqsm/cli.hpp"
#include "octqsm/datapipe.hpp"
#include "octqsm/dipole.hpp"
#include "octqsm/phantom.hpp"
#include "test_util.hpp"

using namespace octqsm;
using testutil::TempDir;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result octq(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string p(const TempDir& d, const std::string& name) { return (d / name).string(); }

void write_text(const std::filesystem::path& path, const std::string& text) { std::ofstream(path) << text; }

}  // namespace

TEST_CASE("usage errors exit 1, help exits 0") {
  CHECK(octq({}).code == cli::kExitUsage);
  CHECK(octq({"reconstruct"}).code == cli::kExitUsage);
  CHECK(octq({"field", "--chi", "a.qvol"}).code == cli::kExitUsage);  // --out missing
  CHECK(octq({"phantom", "cube", "--out", "x.qvol"}).code == cli::kExitUsage);
  CHECK(octq({"phantom", "shepp", "--out", "x.qvol", "--dims", "abc"}).code == cli::kExitUsage);
  CHECK(octq({"phantom", "shepp", "--out", "x.qvol", "--voxel-size", "1,2"}).code == cli::kExitUsage);
  CHECK(octq({"tkd", "--field", "f", "--out", "o", "--threshold", "lots"}).code == cli::kExitUsage);
  CHECK(octq({"infer", "--checkpoint", "c", "--field", "f", "--out", "o", "--mode", "sideways"}).code ==
        cli::kExitUsage);
  CHECK(octq({"--threads", "-1", "gradcheck"}).code == cli::kExitUsage);
  const Result help = octq({"--help"});
  CHECK(help.code == cli::kExitOk);
  CHECK(help.out.find("phantom") != std::string::npos);
  CHECK(help.out.find("gradcheck") != std::string::npos);
}

TEST_CASE("runtime failures exit 2") {
  TempDir d("cli");
  const Result r = octq({"field", "--chi", p(d, "missing.qvol"), "--out", p(d, "f.qvol")});
  CHECK(r.code == cli::kExitRuntime);
  CHECK(r.err.find("missing.qvol") != std::string::npos);
  CHECK(octq({"eval", "--pred", p(d, "a.qvol"), "--ref", p(d, "b.qvol")}).code == cli::kExitRuntime);
}

TEST_CASE("phantom, field, tkd and eval compose") {
  TempDir d("cli");
  REQUIRE(octq({"phantom", "shepp", "--dims", "48", "--out", p(d, "chi.qvol")}).code == 0);
  const LabeledPhantom ph = shepp_logan({48, 48, 48});
  CHECK(read_volume(d / "chi.qvol") == ph.chi);
  CHECK(read_volume(d / "chi_labels.qvol") == ph.labels);

  REQUIRE(octq({"field", "--chi", p(d, "chi.qvol"), "--out", p(d, "f.qvol")}).code == 0);
  const KernelGrid k = dipole_kernel({48, 48, 48}, {});
  const Volume f = forward_field(ph.chi, k);
  CHECK(read_volume(d / "f.qvol") == f);

  REQUIRE(octq({"tkd", "--field", p(d, "f.qvol"), "--out", p(d, "t.qvol"), "--threshold", "0.15"}).code == 0);
  CHECK(read_volume(d / "t.qvol") == tkd_invert(f, k, 0.15));

  const Result e = octq({"eval", "--pred", p(d, "chi.qvol"), "--ref", p(d, "chi.qvol"), "--labels",
                         p(d, "chi_labels.qvol"), "--out", p(d, "m.tsv"), "--json", p(d, "m.json")});
  REQUIRE(e.code == 0);
  CHECK(e.out.find("nrmse_pct\t0\n") != std::string::npos);
  CHECK(e.out.find("ssim\t1\n") != std::string::npos);
  CHECK(testutil::slurp(d / "m.tsv") == e.out);
  const auto j = nlohmann::json::parse(testutil::slurp(d / "m.json"));
  CHECK(j["nrmse_pct"] == 0.0);
  CHECK(j["ssim"] == 1.0);
  CHECK(j["rois"].size() == 6);
}

TEST_CASE("explicit label path and custom values") {
  TempDir d("cli");
  REQUIRE(octq({"phantom", "shepp", "--dims", "48,56,52", "--voxel-size", "0.5,0.5,2", "--values", "1,2,3,4,5,6",
                "--out", p(d, "c.qvol"), "--labels", p(d, "lab.qvol")})
              .code == 0);
  const Volume c = read_volume(d / "c.qvol");
  CHECK(c.dims() == Dims{48, 56, 52});
  CHECK(c.voxel_size() == VoxelSize{0.5F, 0.5F, 2.0F});
  CHECK(std::filesystem::exists(d / "lab.qvol"));
  CHECK(octq({"phantom", "shepp", "--values", "1,2", "--out", p(d, "x.qvol")}).code == cli::kExitUsage);
}

TEST_CASE("shape phantoms follow the seed") {
  TempDir d("cli");
  for (const char* name : {"a", "b"})
    REQUIRE(octq({"phantom", "shapes", "--dims", "32", "--seed", "4", "--out", p(d, std::string(name) + ".qvol")}).code == 0);
  REQUIRE(octq({"phantom", "shapes", "--dims", "32", "--seed", "5", "--out", p(d, "c.qvol")}).code == 0);
  CHECK(testutil::slurp(d / "a.qvol") == testutil::slurp(d / "b.qvol"));
  CHECK(testutil::slurp(d / "a.qvol") != testutil::slurp(d / "c.qvol"));
  CHECK(octq({"phantom", "shapes", "--kinds", "blob", "--out", p(d, "x.qvol")}).code == cli::kExitUsage);
}

TEST_CASE("config files: every key maps to a flag, flags win") {
  TempDir d("cli");
  write_text(d / "a.cfg", "# shapes\ndims = 40\ncount_range=0,0\nseed=9\n");
  REQUIRE(octq({"phantom", "shapes", "--config", p(d, "a.cfg"), "--dims", "32", "--out", p(d, "z.qvol")}).code == 0);
  const Volume z = read_volume(d / "z.qvol");
  CHECK(z.dims() == Dims{32, 32, 32});
  for (float v : z.data()) CHECK(v == 0.0F);

  const auto expanded = cli::expand_config({"phantom", "--config=" + p(d, "a.cfg"), "--seed", "1"});
  CHECK(expanded == std::vector<std::string>{"phantom", "--seed", "1", "--count-range=0,0", "--dims=40"});

  write_text(d / "bad.cfg", "colour=red\n");
  CHECK(octq({"phantom", "shapes", "--config", p(d, "bad.cfg"), "--out", p(d, "x.qvol")}).code == cli::kExitUsage);
  CHECK(octq({"phantom", "shapes", "--config", p(d, "none.cfg"), "--out", p(d, "x.qvol")}).code == cli::kExitUsage);
  CHECK(octq({"phantom", "shapes", "--out", p(d, "x.qvol"), "--config"}).code == cli::kExitUsage);

  write_text(d / "flag.cfg", "verify=true\ncount=2\npatch-size=16\nsphere-radius=2,5\ncube-edge=3,10\ncuboid-edge=3,12\n");
  const Result r = octq({"dataset", "--config", p(d, "flag.cfg"), "--out", p(d, "ds")});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("verify entries 2 max_field_error 0") != std::string::npos);
}

TEST_CASE("threads come from the environment unless given") {
  setenv("OCTQSM_THREADS", "many", 1);
  CHECK(octq({"phantom", "shepp", "--out", "/nonexistent/x.qvol"}).code == cli::kExitUsage);
  unsetenv("OCTQSM_THREADS");
}

TEST_CASE("dataset, train, infer and eval end to end") {
  TempDir d("cli");
  const std::vector<std::string> shapes{"--sphere-radius", "2,5", "--cube-edge", "3,10", "--cuboid-edge", "3,12"};
  auto with = [&](std::vector<std::string> a) {
    a.insert(a.end(), shapes.begin(), shapes.end());
    return a;
  };
  REQUIRE(octq(with({"dataset", "--out", p(d, "ds"), "--count", "4", "--patch-size", "16", "--seed", "3", "--verify"}))
              .code == 0);
  CHECK(read_manifest(d / "ds" / kManifestName).count == 4);
  REQUIRE(octq({"dataset", "--from-manifest", p(d, "ds/manifest.tsv"), "--out", p(d, "ds2")}).code == 0);
  for (const auto& e : std::filesystem::directory_iterator(d / "ds"))
    CHECK(testutil::slurp(e.path()) == testutil::slurp(d / "ds2" / e.path().filename()));

  const Result t = octq({"--threads", "1", "train", "--dataset", p(d, "ds"), "--out", p(d, "run"), "--epochs", "2",
                         "--batch", "2", "--width", "4", "--seed", "5", "--checkpoint-every", "1"});
  REQUIRE(t.code == 0);
  CHECK(t.out.find("epoch 2 loss") != std::string::npos);
  CHECK(std::filesystem::exists(d / "run" / "checkpoint_epoch_0001.qckp"));
  CHECK(std::filesystem::exists(d / "run" / "final.qckp"));
  CHECK(std::filesystem::exists(d / "run" / "loss_history.tsv"));

  CHECK(octq({"train", "--dataset", p(d, "ds"), "--out", p(d, "bad"), "--width", "7"}).code == cli::kExitUsage);
  CHECK(octq({"train", "--dataset", p(d, "ds"), "--out", p(d, "bad"), "--epochs", "3", "--schedule", "1-2:1e-3"})
            .code == cli::kExitUsage);
  CHECK(octq({"train", "--dataset", p(d, "nowhere"), "--out", p(d, "bad")}).code == cli::kExitRuntime);

  REQUIRE(octq({"phantom", "shepp", "--dims", "48", "--out", p(d, "chi.qvol")}).code == 0);
  REQUIRE(octq({"field", "--chi", p(d, "chi.qvol"), "--out", p(d, "f.qvol")}).code == 0);
  const std::string ckpt = p(d, "run/final.qckp");
  REQUIRE(octq({"infer", "--checkpoint", ckpt, "--field", p(d, "f.qvol"), "--out", p(d, "full.qvol")}).code == 0);
  REQUIRE(octq({"infer", "--checkpoint", ckpt, "--field", p(d, "f.qvol"), "--out", p(d, "one.qvol"), "--mode",
                "patches", "--patch-size", "48"})
              .code == 0);
  CHECK(read_volume(d / "full.qvol") == read_volume(d / "one.qvol"));
  REQUIRE(octq({"infer", "--checkpoint", ckpt, "--field", p(d, "f.qvol"), "--out", p(d, "p16.qvol"), "--mode",
                "patches", "--patch-size", "16", "--stride", "8,8,16"})
              .code == 0);
  CHECK(read_volume(d / "p16.qvol").dims() == Dims{48, 48, 48});
  CHECK(octq({"infer", "--checkpoint", ckpt, "--field", p(d, "f.qvol"), "--out", p(d, "x.qvol"), "--mode", "patches",
              "--patch-size", "12"})
            .code == cli::kExitRuntime);

  const Result e = octq({"eval", "--pred", p(d, "full.qvol"), "--ref", p(d, "chi.qvol"), "--labels",
                         p(d, "chi_labels.qvol")});
  REQUIRE(e.code == 0);
  CHECK(e.out.find("roi_6_mean_ppb\t") != std::string::npos);

  // fine-tuning from a checkpoint
  CHECK(octq({"train", "--dataset", p(d, "ds"), "--out", p(d, "run2"), "--epochs", "1", "--batch", "2",
              "--checkpoint", ckpt})
            .code == 0);
}

TEST_CASE("gradcheck subcommand") {
  TempDir d("cli");
  const Result r = octq({"gradcheck", "--out", p(d, "g.tsv")});
  CHECK(r.code == 0);
  CHECK(r.out.find("FAIL") == std::string::npos);
  CHECK(r.out.find("end-to-end") != std::string::npos);
  CHECK(testutil::slurp(d / "g.tsv") == r.out);
}
