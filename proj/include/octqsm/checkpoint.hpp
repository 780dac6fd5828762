#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "octqsm/xqsm.hpp"

namespace octqsm::nn {

// Checkpoint layout, all integers little-endian:
//   "QCKP" | u32 version (1) | u32 manifest byte length | manifest | f32le payload
// The manifest is text, one entry per line:
//   config <key>=<value>
//   param <name> <d0,d1,...> <offset> <count>
// where offset and count are in f32 elements from the start of the payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t count = 0;
};

struct CheckpointContents {
  std::map<std::string, std::string> config;
  std::vector<CheckpointEntry> entries;
  std::vector<float> payload;
};

CheckpointContents read_checkpoint_file(const std::filesystem::path& path);

template <typename T>
void save_checkpoint(Xqsm<T>& net, const std::filesystem::path& path);

/// Rebuilds the network from the stored config and restores every buffer.
template <typename T>
Xqsm<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace octqsm::nn
