#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "octqsm/phantom.hpp"
#include "octqsm/volume.hpp"

namespace octqsm {

using Origin = std::array<int, 3>;

/// Cubic patch cropping. `random_extra` random crops are added per source volume after
/// the sliding ones.
struct CropPlan {
  int patch = 32;
  std::array<int, 3> stride{16, 16, 16};
  int random_extra = 0;
  std::uint64_t seed = 0;

  void validate() const;
  /// Throws std::invalid_argument when the patch does not fit `dims`.
  void check_fits(const Dims& dims) const;

  /// 48^3 window, stride 24x36x20.
  static CropPlan paper();
};

/// Origins 0, s, 2s, ... per axis while origin + p <= dim, x fastest.
std::vector<Origin> sliding_origins(const Dims& dims, int patch, const std::array<int, 3>& stride);
/// prod_i (floor((dim_i - p) / s_i) + 1).
std::size_t sliding_count(const Dims& dims, int patch, const std::array<int, 3>& stride);
std::vector<Volume> sliding_crops(const Volume& volume, const CropPlan& plan);

/// n origins uniform over [0, dim - p] per axis.
std::vector<Origin> random_origins(const Dims& dims, int n, int patch, std::uint64_t seed);
std::vector<Volume> random_crops(const Volume& volume, int n, int patch, std::uint64_t seed);

/// Where training labels come from: random shape patches, or crops of chi volumes on disk.
struct DatasetSpec {
  enum class Kind { synthetic, volumes };
  Kind kind = Kind::synthetic;
  ShapeConfig shapes{};  // synthetic: dims are forced to patch^3
  int count = 300;       // synthetic only
  std::vector<std::filesystem::path> volumes;
  CropPlan plan{};
  std::uint64_t seed = 0;

  void validate() const;
  [[nodiscard]] std::map<std::string, std::string> to_key_values() const;
  static DatasetSpec from_key_values(const std::map<std::string, std::string>& kv);

  /// 300 synthetic 32^3 label patches with 2-9 shapes each.
  static DatasetSpec desk(std::uint64_t seed = 0);
};

struct ManifestEntry {
  int index = 0;
  std::string source;  // "shapes" or the source volume path
  Origin origin{0, 0, 0};
  std::uint64_t seed = 0;  // per-entry shape seed; 0 for crops
  std::string input_file;
  std::string label_file;
};

// manifest.tsv: '#'-prefixed key=value header lines (generation parameters, their
// hash, patch size and entry count) then a column header row and one row per entry:
//   index  source  ox  oy  oz  seed  input  label
struct DatasetManifest {
  std::map<std::string, std::string> params;
  std::uint64_t params_hash = 0;
  int patch = 0;
  int count = 0;
  std::vector<ManifestEntry> entries;
};

inline constexpr const char* kManifestName = "manifest.tsv";

/// FNV-1a over the sorted key=value lines.
std::uint64_t hash_params(const std::map<std::string, std::string>& params);

DatasetManifest build_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Rebuilds every pair from the manifest's parameters into `out_dir`.
DatasetManifest regenerate_dataset(const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir);

struct DatasetCheck {
  std::size_t entries = 0;
  double max_field_error = 0.0;  // max |input - forward_field(label)|
  bool shapes_ok = true;
};

/// Re-derives each input from its label with the forward model.
DatasetCheck verify_dataset(const std::filesystem::path& dir);

struct Dataset {
  DatasetManifest manifest;
  std::vector<Volume> inputs;
  std::vector<Volume> labels;
  [[nodiscard]] std::size_t size() const { return inputs.size(); }
};

Dataset load_dataset(const std::filesystem::path& dir);

/// Permutation of [0, n) keyed by derive_seed(seed, epoch), cut into full batches; the
/// trailing partial batch is dropped.
std::vector<std::vector<std::size_t>> shuffle_batches(std::size_t n, int batch_size, std::uint64_t seed, int epoch);

}  // namespace octqsm
