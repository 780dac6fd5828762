#include "octqsm/datapipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "octqsm/dipole.hpp"
#include "octqsm/keyvalue.hpp"
#include "octqsm/rng.hpp"

namespace octqsm {

namespace {

std::string pair_name(const char* stem, int index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%06d.qvol", stem, index);
  return buf;
}

std::string triple(const std::array<int, 3>& v) {
  return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]);
}

// One planned pair before generation.
struct Job {
  ManifestEntry entry;
  std::size_t source_index = 0;
};

}  // namespace

void CropPlan::validate() const {
  if (patch < 1) throw std::invalid_argument("patch size must be >= 1");
  for (int s : stride)
    if (s < 1) throw std::invalid_argument("crop strides must be >= 1");
  if (random_extra < 0) throw std::invalid_argument("random_extra must be >= 0");
}

void CropPlan::check_fits(const Dims& dims) const {
  if (patch > dims.nx || patch > dims.ny || patch > dims.nz)
    throw std::invalid_argument("patch " + std::to_string(patch) + " larger than volume " + to_string(dims));
}

CropPlan CropPlan::paper() {
  CropPlan p;
  p.patch = 48;
  p.stride = {24, 36, 20};
  return p;
}

std::vector<Origin> sliding_origins(const Dims& dims, int patch, const std::array<int, 3>& stride) {
  CropPlan plan;
  plan.patch = patch;
  plan.stride = stride;
  plan.validate();
  plan.check_fits(dims);
  std::vector<Origin> out;
  out.reserve(sliding_count(dims, patch, stride));
  for (int z = 0; z + patch <= dims.nz; z += stride[2])
    for (int y = 0; y + patch <= dims.ny; y += stride[1])
      for (int x = 0; x + patch <= dims.nx; x += stride[0]) out.push_back({x, y, z});
  return out;
}

std::size_t sliding_count(const Dims& dims, int patch, const std::array<int, 3>& stride) {
  std::size_t n = 1;
  const auto d = dims.as_array();
  for (int a = 0; a < 3; ++a) {
    if (patch > d[a]) return 0;
    n *= static_cast<std::size_t>((d[a] - patch) / stride[a] + 1);
  }
  return n;
}

std::vector<Volume> sliding_crops(const Volume& volume, const CropPlan& plan) {
  std::vector<Volume> out;
  for (const Origin& o : sliding_origins(volume.dims(), plan.patch, plan.stride))
    out.push_back(crop_region(volume, o, {plan.patch, plan.patch, plan.patch}));
  return out;
}

std::vector<Origin> random_origins(const Dims& dims, int n, int patch, std::uint64_t seed) {
  if (n < 0) throw std::invalid_argument("random crop count must be >= 0");
  CropPlan plan;
  plan.patch = patch;
  plan.validate();
  plan.check_fits(dims);
  Rng rng(seed);
  std::uniform_int_distribution<int> ux(0, dims.nx - patch), uy(0, dims.ny - patch), uz(0, dims.nz - patch);
  std::vector<Origin> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int x = ux(rng);
    const int y = uy(rng);
    const int z = uz(rng);
    out.push_back({x, y, z});
  }
  return out;
}

std::vector<Volume> random_crops(const Volume& volume, int n, int patch, std::uint64_t seed) {
  std::vector<Volume> out;
  for (const Origin& o : random_origins(volume.dims(), n, patch, seed))
    out.push_back(crop_region(volume, o, {patch, patch, patch}));
  return out;
}

void DatasetSpec::validate() const {
  plan.validate();
  if (kind == Kind::synthetic) {
    if (count < 1) throw std::invalid_argument("synthetic dataset count must be >= 1");
    ShapeConfig c = shapes;
    c.dims = {plan.patch, plan.patch, plan.patch};
    c.validate();
  } else if (volumes.empty()) {
    throw std::invalid_argument("volume dataset needs at least one source volume");
  }
}

std::map<std::string, std::string> DatasetSpec::to_key_values() const {
  kv::Map m;
  m["kind"] = kind == Kind::synthetic ? "synthetic" : "volumes";
  m["seed"] = std::to_string(seed);
  m["patch"] = std::to_string(plan.patch);
  m["stride"] = triple(plan.stride);
  m["random_extra"] = std::to_string(plan.random_extra);
  m["crop_seed"] = std::to_string(plan.seed);
  if (kind == Kind::synthetic) {
    m["count"] = std::to_string(count);
    for (const auto& [k, v] : shapes.to_key_values())
      if (k != "dims" && k != "seed") m["shapes." + k] = v;
  } else {
    std::string list;
    for (const auto& p : volumes) list += (list.empty() ? "" : ";") + p.string();
    m["volumes"] = list;
  }
  return m;
}

DatasetSpec DatasetSpec::from_key_values(const std::map<std::string, std::string>& m) {
  DatasetSpec s;
  kv::Map shape_keys;
  for (const auto& [k, v] : m) {
    if (k == "kind") {
      if (v == "synthetic") s.kind = Kind::synthetic;
      else if (v == "volumes") s.kind = Kind::volumes;
      else throw std::invalid_argument("unknown dataset kind '" + v + "'");
    } else if (k == "seed") s.seed = std::stoull(v);
    else if (k == "patch") s.plan.patch = std::stoi(v);
    else if (k == "stride") s.plan.stride = kv::parse_triple(v);
    else if (k == "random_extra") s.plan.random_extra = std::stoi(v);
    else if (k == "crop_seed") s.plan.seed = std::stoull(v);
    else if (k == "count") s.count = std::stoi(v);
    else if (k == "volumes") {
      s.volumes.clear();
      for (const auto& p : kv::split(v, ';'))
        if (!p.empty()) s.volumes.emplace_back(p);
    } else if (k.rfind("shapes.", 0) == 0) shape_keys[k.substr(7)] = v;
    else throw std::invalid_argument("unknown dataset key '" + k + "'");
  }
  if (!shape_keys.empty()) {
    shape_keys["dims"] = std::to_string(s.plan.patch);
    s.shapes = ShapeConfig::from_key_values(shape_keys);
  }
  s.validate();
  return s;
}

DatasetSpec DatasetSpec::desk(std::uint64_t seed) {
  DatasetSpec s;
  s.kind = Kind::synthetic;
  s.count = 300;
  s.plan.patch = 32;
  s.plan.stride = {16, 16, 16};
  s.shapes.dims = {32, 32, 32};
  // 5-30 shapes per 48^3 scaled by volume to 32^3
  s.shapes.count_min = 2;
  s.shapes.count_max = 9;
  s.seed = seed;
  return s;
}

std::uint64_t hash_params(const std::map<std::string, std::string>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : params) {
    for (unsigned char c : k + "=" + v + "\n") {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "# octqsm dataset manifest\n";
  for (const auto& [k, v] : m.params) out << "# " << k << "=" << v << "\n";
  char hash[32];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(m.params_hash));
  out << "# manifest.params_hash=" << hash << "\n";
  out << "# manifest.patch_size=" << m.patch << "\n";
  out << "# manifest.count=" << m.count << "\n";
  out << "index\tsource\tox\toy\toz\tseed\tinput\tlabel\n";
  for (const auto& e : m.entries)
    out << e.index << '\t' << e.source << '\t' << e.origin[0] << '\t' << e.origin[1] << '\t' << e.origin[2] << '\t'
        << e.seed << '\t' << e.input_file << '\t' << e.label_file << '\n';
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << out.str();
  if (!f) throw IoError("write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  bool have_hash = false, have_count = false, have_patch = false, have_columns = false;
  std::string line;
  int number = 0;
  auto fail = [&](const std::string& what) {
    throw FormatError(path.string() + ":" + std::to_string(number) + ": " + what);
  };
  while (std::getline(f, line)) {
    ++number;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string body = kv::trim(line.substr(1));
      const auto eq = body.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = body.substr(0, eq), value = body.substr(eq + 1);
      if (key == "manifest.params_hash") {
        m.params_hash = std::stoull(value, nullptr, 16);
        have_hash = true;
      } else if (key == "manifest.patch_size") {
        m.patch = std::stoi(value);
        have_patch = true;
      } else if (key == "manifest.count") {
        m.count = std::stoi(value);
        have_count = true;
      } else {
        m.params[key] = value;
      }
      continue;
    }
    if (!have_columns) {
      if (line != "index\tsource\tox\toy\toz\tseed\tinput\tlabel") fail("unexpected column header");
      have_columns = true;
      continue;
    }
    const auto cols = kv::split(line, '\t');
    if (cols.size() != 8) fail("expected 8 columns");
    ManifestEntry e;
    e.index = std::stoi(cols[0]);
    e.source = cols[1];
    e.origin = {std::stoi(cols[2]), std::stoi(cols[3]), std::stoi(cols[4])};
    e.seed = std::stoull(cols[5]);
    e.input_file = cols[6];
    e.label_file = cols[7];
    m.entries.push_back(std::move(e));
  }
  if (!have_hash || !have_count || !have_patch || !have_columns) throw FormatError(path.string() + ": incomplete header");
  if (static_cast<int>(m.entries.size()) != m.count)
    throw FormatError(path.string() + ": declared " + std::to_string(m.count) + " entries, found " +
                      std::to_string(m.entries.size()));
  if (hash_params(m.params) != m.params_hash) throw FormatError(path.string() + ": parameter hash mismatch");
  return m;
}

DatasetManifest build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir);
  const int p = spec.plan.patch;
  const Dims patch_dims{p, p, p};

  std::vector<Volume> sources;
  std::vector<Job> jobs;
  auto add_job = [&](std::string source, Origin origin, std::uint64_t seed, std::size_t source_index) {
    Job j;
    j.entry.index = static_cast<int>(jobs.size());
    j.entry.source = std::move(source);
    j.entry.origin = origin;
    j.entry.seed = seed;
    j.entry.input_file = pair_name("input", j.entry.index);
    j.entry.label_file = pair_name("label", j.entry.index);
    j.source_index = source_index;
    jobs.push_back(std::move(j));
  };

  if (spec.kind == DatasetSpec::Kind::synthetic) {
    for (int i = 0; i < spec.count; ++i) add_job("shapes", {0, 0, 0}, derive_seed(spec.seed, static_cast<std::uint64_t>(i)), 0);
  } else {
    for (std::size_t s = 0; s < spec.volumes.size(); ++s) {
      sources.push_back(read_volume(spec.volumes[s]));
      const Volume& v = sources.back();
      if (v.unit() != Unit::ppb) throw std::invalid_argument(spec.volumes[s].string() + ": labels must be ppb");
      spec.plan.check_fits(v.dims());
      for (const Origin& o : sliding_origins(v.dims(), p, spec.plan.stride)) add_job(spec.volumes[s].string(), o, 0, s);
      for (const Origin& o : random_origins(v.dims(), spec.plan.random_extra, p, derive_seed(spec.plan.seed, s)))
        add_job(spec.volumes[s].string(), o, 0, s);
    }
  }

  // One kernel per distinct voxel size; all patches share the patch dims.
  std::vector<KernelGrid> kernels;
  if (spec.kind == DatasetSpec::Kind::synthetic) {
    kernels.push_back(dipole_kernel(patch_dims, spec.shapes.voxel));
  } else {
    for (const Volume& v : sources) kernels.push_back(dipole_kernel(patch_dims, v.voxel_size()));
  }

  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto n = static_cast<std::int64_t>(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    try {
      const Job& job = jobs[static_cast<std::size_t>(i)];
      Volume label;
      const KernelGrid* kernel = nullptr;
      if (spec.kind == DatasetSpec::Kind::synthetic) {
        ShapeConfig c = spec.shapes;
        c.dims = patch_dims;
        c.seed = job.entry.seed;
        label = random_shapes(c);
        kernel = &kernels[0];
      } else {
        label = crop_region(sources[job.source_index], job.entry.origin, {p, p, p});
        kernel = &kernels[job.source_index];
      }
      const Volume input = forward_field(label, *kernel);
      write_volume(label, out_dir / job.entry.label_file);
      write_volume(input, out_dir / job.entry.input_file);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  DatasetManifest m;
  m.params = spec.to_key_values();
  m.params_hash = hash_params(m.params);
  m.patch = p;
  m.count = static_cast<int>(jobs.size());
  for (auto& j : jobs) m.entries.push_back(std::move(j.entry));
  write_manifest(m, out_dir / kManifestName);
  return m;
}

DatasetManifest regenerate_dataset(const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir) {
  const DatasetManifest m = read_manifest(manifest_path);
  return build_dataset(DatasetSpec::from_key_values(m.params), out_dir);
}

DatasetCheck verify_dataset(const std::filesystem::path& dir) {
  const DatasetManifest m = read_manifest(dir / kManifestName);
  DatasetCheck check;
  const Dims patch_dims{m.patch, m.patch, m.patch};
  for (const auto& e : m.entries) {
    const Volume label = read_volume(dir / e.label_file);
    const Volume input = read_volume(dir / e.input_file);
    ++check.entries;
    if (label.dims() != patch_dims || input.dims() != patch_dims) {
      check.shapes_ok = false;
      continue;
    }
    const Volume expected = forward_field(label, dipole_kernel(patch_dims, label.voxel_size()));
    for (std::size_t i = 0; i < expected.size(); ++i)
      check.max_field_error =
          std::max(check.max_field_error, static_cast<double>(std::abs(expected.data()[i] - input.data()[i])));
  }
  return check;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.manifest = read_manifest(dir / kManifestName);
  const Dims patch_dims{d.manifest.patch, d.manifest.patch, d.manifest.patch};
  for (const auto& e : d.manifest.entries) {
    d.inputs.push_back(read_volume(dir / e.input_file));
    d.labels.push_back(read_volume(dir / e.label_file));
    if (d.inputs.back().dims() != patch_dims || d.labels.back().dims() != patch_dims)
      throw FormatError("dataset entry " + std::to_string(e.index) + " does not have the manifest patch size");
  }
  return d;
}

std::vector<std::vector<std::size_t>> shuffle_batches(std::size_t n, int batch_size, std::uint64_t seed, int epoch) {
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  const auto b = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start + b <= n; start += b)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + b));
  return batches;
}

}  // namespace octqsm
