#include "octqsm/cli.hpp"

#include <omp.h>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "octqsm/checkpoint.hpp"
#include "octqsm/datapipe.hpp"
#include "octqsm/dipole.hpp"
#include "octqsm/gradcheck.hpp"
#include "octqsm/keyvalue.hpp"
#include "octqsm/metrics.hpp"
#include "octqsm/phantom.hpp"
#include "octqsm/train.hpp"

namespace octqsm::cli {
namespace {

class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Converts a flag string, turning conversion failures into usage errors.
template <typename F>
auto flag_value(const std::string& flag, F&& convert) -> decltype(convert()) {
  try {
    return convert();
  } catch (const std::exception& e) {
    throw UsageError("--" + flag + ": " + e.what());
  }
}

Dims parse_dims(const std::string& text) {
  return flag_value("dims", [&] {
    const auto t = kv::parse_triple(text);
    return Dims{t[0], t[1], t[2]};
  });
}

VoxelSize parse_voxel(const std::string& text) {
  return flag_value("voxel-size", [&] {
    const auto v = kv::parse_doubles(text);
    if (v.size() != 1 && v.size() != 3) throw std::invalid_argument("expected dx or dx,dy,dz");
    const auto f = [&](std::size_t i) { return static_cast<float>(v[v.size() == 1 ? 0 : i]); };
    VoxelSize out{f(0), f(1), f(2)};
    if (!out.valid()) throw std::invalid_argument("voxel sizes must be positive");
    return out;
  });
}

std::array<int, 2> parse_pair(const std::string& flag, const std::string& text) {
  return flag_value(flag, [&] {
    const auto v = kv::parse_ints(text);
    if (v.size() != 2) throw std::invalid_argument("expected lo,hi");
    return std::array<int, 2>{v[0], v[1]};
  });
}

std::filesystem::path labels_sidecar(const std::filesystem::path& out) {
  return out.parent_path() / (out.stem().string() + "_labels" + out.extension().string());
}

void set_threads(int threads) {
  if (threads < 0) throw UsageError("--threads must be >= 0");
  if (threads > 0) omp_set_num_threads(threads);
}

std::string pair_text(double a, double b) { return kv::format_double(a) + "," + kv::format_double(b); }

struct ShapeFlags {
  std::string count_range, kinds, sphere_radius, cube_edge, cuboid_edge, chi_range;

  explicit ShapeFlags(const ShapeConfig& d)
      : count_range(pair_text(d.count_min, d.count_max)),
        sphere_radius(pair_text(d.sphere_radius[0], d.sphere_radius[1])),
        cube_edge(pair_text(d.cube_edge[0], d.cube_edge[1])),
        cuboid_edge(pair_text(d.cuboid_edge[0], d.cuboid_edge[1])),
        chi_range(pair_text(d.chi_lo, d.chi_hi)) {
    for (ShapeKind k : d.kinds) kinds += (kinds.empty() ? "" : ",") + to_string(k);
  }

  void add_to(CLI::App* app) {
    app->add_option("--count-range", count_range, "shapes per volume, min,max")->capture_default_str();
    app->add_option("--kinds", kinds, "subset of sphere,cube,cuboid")->capture_default_str();
    app->add_option("--sphere-radius", sphere_radius, "voxels, min,max")->capture_default_str();
    app->add_option("--cube-edge", cube_edge, "voxels, min,max")->capture_default_str();
    app->add_option("--cuboid-edge", cuboid_edge, "voxels, min,max")->capture_default_str();
    app->add_option("--chi-range", chi_range, "ppb, lo,hi")->capture_default_str();
  }

  void apply(ShapeConfig& c) const {
    const auto counts = parse_pair("count-range", count_range);
    c.count_min = counts[0];
    c.count_max = counts[1];
    c.kinds = flag_value("kinds", [&] {
      std::vector<ShapeKind> out;
      for (const auto& k : kv::split(kinds, ',')) out.push_back(shape_kind_from_string(kv::trim(k)));
      return out;
    });
    c.sphere_radius = parse_pair("sphere-radius", sphere_radius);
    c.cube_edge = parse_pair("cube-edge", cube_edge);
    c.cuboid_edge = parse_pair("cuboid-edge", cuboid_edge);
    const auto chi = flag_value("chi-range", [&] {
      const auto v = kv::parse_doubles(chi_range);
      if (v.size() != 2) throw std::invalid_argument("expected lo,hi");
      return v;
    });
    c.chi_lo = chi[0];
    c.chi_hi = chi[1];
  }
};

void print_check(std::ostream& out, const nn::GradCheckResult& r) {
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %8zu %.3e %.0e %s", r.name.c_str(), r.checked, r.rel_error, r.tolerance,
                r.passed() ? "ok" : "FAIL");
  out << line << '\n';
}

}  // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  std::optional<std::filesystem::path> config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file");
      config = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config = args[i].substr(9);
    } else {
      out.push_back(args[i]);
    }
  }
  if (!config) return out;
  kv::Map file;
  try {
    file = kv::read_file(*config);
  } catch (const std::exception& e) {
    throw UsageError(std::string("--config: ") + e.what());
  }
  for (const auto& [name, value] : file) {
    std::string key = name;
    std::replace(key.begin(), key.end(), '_', '-');
    const std::string flag = "--" + key;
    const bool given = std::any_of(out.begin(), out.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given) out.push_back(flag + "=" + value);
  }
  return out;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Susceptibility mapping toolkit: dipole physics, phantoms, octave-conv U-net"};
  app.name("octqsm");
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "worker threads; 1 is bit-reproducible, 0 keeps the OpenMP default")
      ->envname("OCTQSM_THREADS");
  app.add_option("--config", "flat key=value file; flags on the command line win");

  // phantom
  auto* phantom = app.add_subcommand("phantom", "write a Shepp-Logan or random-shape chi volume");
  std::string ph_kind, ph_dims = "64", ph_voxel = "1,1,1", ph_out, ph_labels, ph_values;
  std::uint64_t ph_seed = 0;
  ShapeFlags ph_shapes{ShapeConfig{}};
  phantom->add_option("kind", ph_kind, "shepp or shapes")->required()->check(CLI::IsMember({"shepp", "shapes"}));
  phantom->add_option("--dims", ph_dims, "n or nx,ny,nz")->capture_default_str();
  phantom->add_option("--voxel-size", ph_voxel, "dx,dy,dz in mm")->capture_default_str();
  phantom->add_option("--seed", ph_seed)->capture_default_str();
  phantom->add_option("--out", ph_out, "output .qvol")->required();
  phantom->add_option("--labels", ph_labels, "shepp label sidecar (default <out>_labels.qvol)");
  phantom->add_option("--values", ph_values, "shepp region values, six ppb numbers");
  ph_shapes.add_to(phantom);

  // field
  auto* field = app.add_subcommand("field", "forward dipole model: chi -> local field");
  std::string fd_chi, fd_out;
  field->add_option("--chi", fd_chi)->required();
  field->add_option("--out", fd_out)->required();

  // tkd
  auto* tkd = app.add_subcommand("tkd", "truncated k-space division baseline");
  std::string tk_field, tk_out;
  double tk_threshold = 0.2;
  tkd->add_option("--field", tk_field)->required();
  tkd->add_option("--out", tk_out)->required();
  tkd->add_option("--threshold", tk_threshold)->capture_default_str();

  // dataset
  auto* dataset = app.add_subcommand("dataset", "build paired field/chi training patches");
  std::string ds_out, ds_stride = "16", ds_voxel = "1,1,1", ds_from;
  std::vector<std::string> ds_volumes;
  int ds_count = 300, ds_patch = 32, ds_random_extra = 0;
  std::uint64_t ds_seed = 0;
  bool ds_verify = false;
  ShapeFlags ds_shapes{DatasetSpec::desk().shapes};
  dataset->add_option("--out", ds_out, "output directory")->required();
  dataset->add_option("--count", ds_count, "synthetic pairs")->capture_default_str();
  dataset->add_option("--patch-size", ds_patch)->capture_default_str();
  dataset->add_option("--stride", ds_stride, "s or sx,sy,sz (volume crops)")->capture_default_str();
  dataset->add_option("--volumes", ds_volumes, "chi volumes to crop instead of random shapes")->delimiter(',');
  dataset->add_option("--random-extra", ds_random_extra, "random crops per volume")->capture_default_str();
  dataset->add_option("--voxel-size", ds_voxel, "synthetic voxel size")->capture_default_str();
  dataset->add_option("--seed", ds_seed)->capture_default_str();
  dataset->add_option("--from-manifest", ds_from, "regenerate from an existing manifest.tsv");
  dataset->add_flag("--verify", ds_verify, "recheck every pair against the forward model");
  ds_shapes.add_to(dataset);

  // train
  auto* trainc = app.add_subcommand("train", "train the network on a dataset directory");
  std::string tr_dataset, tr_out, tr_snr = "40,20,10,5", tr_schedule, tr_init;
  int tr_epochs = 20, tr_batch = 4, tr_width = 8, tr_every = 0;
  double tr_noise_p = 0.2;
  std::uint64_t tr_seed = 0;
  trainc->add_option("--dataset", tr_dataset)->required();
  trainc->add_option("--out", tr_out, "checkpoint and loss history directory")->required();
  trainc->add_option("--epochs", tr_epochs)->capture_default_str();
  trainc->add_option("--batch", tr_batch)->capture_default_str();
  trainc->add_option("--width", tr_width, "first-level channels")->capture_default_str();
  trainc->add_option("--noise-p", tr_noise_p, "noise layer probability; 0 disables it")->capture_default_str();
  trainc->add_option("--snr-list", tr_snr)->capture_default_str();
  trainc->add_option("--schedule", tr_schedule, "first-last:lr,... (default: step decay at 50%/80%)");
  trainc->add_option("--checkpoint-every", tr_every)->capture_default_str();
  trainc->add_option("--checkpoint", tr_init, "start from these weights instead of a fresh init");
  trainc->add_option("--seed", tr_seed)->capture_default_str();

  // infer
  auto* infer = app.add_subcommand("infer", "reconstruct chi from a field with a trained checkpoint");
  std::string in_ckpt, in_field, in_out, in_mode = "full", in_stride;
  int in_patch = 32, in_batch = 4;
  infer->add_option("--checkpoint", in_ckpt)->required();
  infer->add_option("--field", in_field)->required();
  infer->add_option("--out", in_out)->required();
  infer->add_option("--mode", in_mode)->check(CLI::IsMember({"full", "patches"}))->capture_default_str();
  infer->add_option("--patch-size", in_patch)->capture_default_str();
  infer->add_option("--stride", in_stride, "s or sx,sy,sz (default: half the patch)");
  infer->add_option("--batch", in_batch, "patches per forward pass")->capture_default_str();

  // eval
  auto* evalc = app.add_subcommand("eval", "compare a reconstruction with a reference");
  std::string ev_pred, ev_ref, ev_labels, ev_out, ev_json;
  evalc->add_option("--pred", ev_pred)->required();
  evalc->add_option("--ref", ev_ref)->required();
  evalc->add_option("--labels", ev_labels, "label volume for ROI statistics");
  evalc->add_option("--out", ev_out, "write the TSV report here");
  evalc->add_option("--json", ev_json, "write the one-line JSON report here");

  // gradcheck
  auto* gradc = app.add_subcommand("gradcheck", "finite-difference check of every layer and the network");
  std::string gc_out;
  std::uint64_t gc_seed = 7;
  gradc->add_option("--out", gc_out, "also write the table here");
  gradc->add_option("--seed", gc_seed)->capture_default_str();

  try {
    std::vector<std::string> args = expand_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const UsageError& e) {
    err << "octqsm: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    set_threads(threads);

    if (phantom->parsed()) {
      const Dims dims = parse_dims(ph_dims);
      const VoxelSize voxel = parse_voxel(ph_voxel);
      if (ph_kind == "shepp") {
        std::array<double, 6> values = kSheppLoganDefaultValues;
        if (!ph_values.empty()) {
          const auto v = flag_value("values", [&] { return kv::parse_doubles(ph_values); });
          if (v.size() != 6) throw UsageError("--values: expected six numbers");
          std::copy(v.begin(), v.end(), values.begin());
        }
        const LabeledPhantom p = shepp_logan(dims, values, voxel);
        const std::filesystem::path labels = ph_labels.empty() ? labels_sidecar(ph_out) : std::filesystem::path(ph_labels);
        write_volume(p.chi, ph_out);
        write_volume(p.labels, labels);
        out << "phantom shepp " << to_string(dims) << " -> " << ph_out << " + " << labels.string() << '\n';
      } else {
        ShapeConfig c;
        c.dims = dims;
        c.voxel = voxel;
        c.seed = ph_seed;
        ph_shapes.apply(c);
        write_volume(random_shapes(c), ph_out);
        out << "phantom shapes " << to_string(dims) << " -> " << ph_out << '\n';
      }
    } else if (field->parsed()) {
      const Volume chi = read_volume(fd_chi);
      write_volume(forward_field(chi, dipole_kernel(chi.dims(), chi.voxel_size())), fd_out);
      out << "field " << to_string(chi.dims()) << " -> " << fd_out << '\n';
    } else if (tkd->parsed()) {
      const Volume f = read_volume(tk_field);
      write_volume(tkd_invert(f, dipole_kernel(f.dims(), f.voxel_size()), tk_threshold), tk_out);
      out << "tkd threshold " << tk_threshold << " -> " << tk_out << '\n';
    } else if (dataset->parsed()) {
      DatasetManifest m;
      if (!ds_from.empty()) {
        m = regenerate_dataset(ds_from, ds_out);
      } else {
        DatasetSpec spec = DatasetSpec::desk(ds_seed);
        spec.count = ds_count;
        spec.plan.patch = ds_patch;
        const auto s = flag_value("stride", [&] { return kv::parse_triple(ds_stride); });
        spec.plan.stride = {s[0], s[1], s[2]};
        spec.plan.random_extra = ds_random_extra;
        spec.plan.seed = ds_seed;
        if (!ds_volumes.empty()) {
          spec.kind = DatasetSpec::Kind::volumes;
          spec.volumes.assign(ds_volumes.begin(), ds_volumes.end());
        }
        spec.shapes.voxel = parse_voxel(ds_voxel);
        spec.shapes.dims = {ds_patch, ds_patch, ds_patch};
        ds_shapes.apply(spec.shapes);
        m = build_dataset(spec, ds_out);
      }
      out << "dataset " << m.count << " pairs of " << m.patch << "^3 -> " << ds_out << '\n';
      if (ds_verify) {
        const DatasetCheck check = verify_dataset(ds_out);
        out << "verify entries " << check.entries << " max_field_error " << check.max_field_error << '\n';
        if (!check.shapes_ok || check.max_field_error > 1e-3) {
          err << "octqsm: dataset verification failed\n";
          return kExitRuntime;
        }
      }
    } else if (trainc->parsed()) {
      const Dataset data = load_dataset(tr_dataset);
      std::optional<nn::Xqsm<float>> net;
      if (!tr_init.empty()) {
        net.emplace(nn::load_checkpoint<float>(tr_init));
      } else {
        nn::NetworkConfig nc = nn::NetworkConfig::desk();
        nc.width = tr_width;
        nc.noise.enabled = tr_noise_p > 0.0;
        nc.noise.probability = tr_noise_p;
        nc.noise.snr_list = flag_value("snr-list", [&] { return kv::parse_doubles(tr_snr); });
        flag_value("width", [&] { nc.validate(); return 0; });
        net.emplace(nc, tr_seed);
      }
      TrainConfig tc;
      tc.epochs = tr_epochs;
      tc.batch_size = tr_batch;
      tc.schedule = tr_schedule.empty() ? flag_value("epochs", [&] { return step_schedule(tr_epochs); })
                                        : flag_value("schedule", [&] { return parse_schedule(tr_schedule); });
      tc.seed = tr_seed;
      tc.checkpoint_every = tr_every;
      tc.dataset_dir = tr_dataset;
      tc.out_dir = tr_out;
      flag_value("schedule", [&] { tc.validate(); return 0; });
      const TrainResult r = train(*net, data, tc, [&](const EpochRecord& e) {
        out << "epoch " << e.epoch << " loss " << kv::format_double(e.mean_loss) << " lr " << e.lr << '\n' << std::flush;
      });
      out << "trained " << r.steps << " steps -> " << r.checkpoints.back().string() << '\n';
    } else if (infer->parsed()) {
      nn::Xqsm<float> net = nn::load_checkpoint<float>(in_ckpt);
      const Volume f = read_volume(in_field);
      Volume chi;
      if (in_mode == "full") {
        chi = infer_full(net, f);
      } else {
        const std::string stride_text = in_stride.empty() ? std::to_string(std::max(1, in_patch / 2)) : in_stride;
        const auto s = flag_value("stride", [&] { return kv::parse_triple(stride_text); });
        chi = infer_patches(net, f, in_patch, {s[0], s[1], s[2]}, in_batch);
      }
      write_volume(chi, in_out);
      out << "infer " << in_mode << " " << to_string(f.dims()) << " -> " << in_out << '\n';
    } else if (evalc->parsed()) {
      const Volume pred = read_volume(ev_pred);
      const Volume ref = read_volume(ev_ref);
      std::optional<Volume> labels;
      if (!ev_labels.empty()) labels = read_volume(ev_labels);
      const MetricReport report = evaluate(pred, ref, labels ? &*labels : nullptr);
      const std::string tsv = report.to_tsv();
      out << tsv;
      if (!ev_out.empty()) {
        std::ofstream f(ev_out, std::ios::binary);
        if (!(f << tsv)) throw IoError("cannot write " + ev_out);
      }
      if (!ev_json.empty()) {
        std::ofstream f(ev_json, std::ios::binary);
        if (!(f << report.to_json_line() << '\n')) throw IoError("cannot write " + ev_json);
      }
    } else if (gradc->parsed()) {
      nn::GradCheckOptions o;
      o.seed = gc_seed;
      std::ostringstream table;
      bool ok = true;
      for (const auto& r : nn::check_all(o)) {
        print_check(table, r);
        ok = ok && r.passed();
      }
      out << table.str();
      if (!gc_out.empty()) {
        std::ofstream f(gc_out, std::ios::binary);
        if (!(f << table.str())) throw IoError("cannot write " + gc_out);
      }
      if (!ok) {
        err << "octqsm: gradient check failed\n";
        return kExitRuntime;
      }
    }
  } catch (const UsageError& e) {
    err << "octqsm: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "octqsm: error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace octqsm::cli
