#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "octqsm/datapipe.hpp"
#include "octqsm/xqsm.hpp"

namespace octqsm {

/// Learning rate over the inclusive 1-based epoch range [first, last].
struct LrStage {
  int first = 1;
  int last = 1;
  double lr = 1e-3;
  friend bool operator==(const LrStage&, const LrStage&) = default;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 4;
  std::vector<LrStage> schedule{{1, 10, 1e-3}, {11, 16, 1e-4}, {17, 20, 1e-5}};
  std::uint64_t seed = 0;
  /// Write a checkpoint every this many epochs; 0 keeps only the final one.
  int checkpoint_every = 0;
  std::filesystem::path dataset_dir;
  /// Checkpoints and loss_history.tsv go here; empty disables writing.
  std::filesystem::path out_dir;

  /// Schedule stages must tile [1, epochs] in order with no gap or overlap.
  void validate() const;
  [[nodiscard]] double learning_rate(int epoch) const;

  [[nodiscard]] std::map<std::string, std::string> to_key_values() const;
  static TrainConfig from_key_values(const std::map<std::string, std::string>& kv);

  /// 100 epochs at 1e-3 / 1e-4 / 1e-5 over 1-50 / 51-80 / 81-100, batch 32.
  static TrainConfig paper();
  /// 20 epochs, batch 4, the same three-step decay compressed to 10 / 6 / 4 epochs.
  static TrainConfig desk();
};

/// "1-50:1e-3,51-80:1e-4".
std::vector<LrStage> parse_schedule(const std::string& text);
std::string format_schedule(const std::vector<LrStage>& schedule);
/// Three-step 1e-3 / 1e-4 / 1e-5 decay with breaks at 50% and 80% of `epochs`; 20 gives
/// the desk schedule, 100 the full one. Empty stages are skipped.
std::vector<LrStage> step_schedule(int epochs);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::int64_t steps = 0;
  std::vector<std::filesystem::path> checkpoints;
};

std::string loss_history_tsv(const std::vector<EpochRecord>& history);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Per mini-batch: noise layer, forward, loss, backward, Adam step. Inputs and labels are
/// multiplied by the network's value_scale. Throws nn::NumericalError on a non-finite
/// loss.
TrainResult train(nn::Xqsm<float>& net, const Dataset& data, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Pad to the network divisor, eval-mode forward, crop back. Output unit ppb.
Volume infer_full(nn::Xqsm<float>& net, const Volume& field);

/// Sliding cubic patches (edge patches clamped to the boundary) reconstructed
/// independently and averaged per voxel with uniform weights.
Volume infer_patches(nn::Xqsm<float>& net, const Volume& field, int patch_size, const std::array<int, 3>& stride,
                     int batch = 4);

/// Origins along one axis: 0, s, 2s, ... plus dim - p when the last stride leaves a gap.
std::vector<int> clamped_axis_origins(int dim, int patch, int stride);

}  // namespace octqsm
