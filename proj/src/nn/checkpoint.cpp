#include "octqsm/checkpoint.hpp"

#include <sstream>

#include "../common/byte_io.hpp"
#include "octqsm/volume.hpp"

namespace octqsm::nn {

namespace {
constexpr unsigned char kMagic[4] = {'Q', 'C', 'K', 'P'};
}

CheckpointContents read_checkpoint_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("no such checkpoint: " + path.string());
  const auto bytes = detail::read_file_bytes(path.string());
  const std::span<const unsigned char> view(bytes);
  if (bytes.size() < 12 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
    throw FormatError(path.string() + ": not a checkpoint file");
  if (detail::get_u32(view, 4) != kCheckpointVersion) throw FormatError(path.string() + ": unsupported version");
  const std::size_t manifest_len = detail::get_u32(view, 8);
  if (12 + manifest_len > bytes.size()) throw FormatError(path.string() + ": truncated manifest");
  const std::size_t payload_bytes = bytes.size() - 12 - manifest_len;
  if (payload_bytes % 4 != 0) throw FormatError(path.string() + ": payload is not a whole number of f32 values");

  CheckpointContents out;
  std::istringstream manifest(std::string(bytes.begin() + 12, bytes.begin() + 12 + static_cast<long>(manifest_len)));
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "config") {
      std::string kv;
      ls >> kv;
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw FormatError("bad config line in checkpoint: " + line);
      out.config[kv.substr(0, eq)] = kv.substr(eq + 1);
    } else if (kind == "param") {
      CheckpointEntry e;
      std::string shape;
      ls >> e.name >> shape >> e.offset >> e.count;
      if (!ls) throw FormatError("bad param line in checkpoint: " + line);
      std::istringstream ss(shape);
      std::string dim;
      std::size_t product = 1;
      while (std::getline(ss, dim, ',')) {
        e.shape.push_back(std::stoi(dim));
        product *= static_cast<std::size_t>(e.shape.back());
      }
      if (product != e.count) throw FormatError("shape/count mismatch for " + e.name);
      if (e.offset + e.count > payload_bytes / 4) throw FormatError("param " + e.name + " exceeds payload");
      out.entries.push_back(std::move(e));
    } else {
      throw FormatError("unknown manifest line in checkpoint: " + line);
    }
  }
  out.payload.resize(payload_bytes / 4);
  detail::get_f32_array(view, 12 + manifest_len, out.payload);
  return out;
}

template <typename T>
void save_checkpoint(Xqsm<T>& net, const std::filesystem::path& path) {
  std::string manifest;
  for (const auto& [k, v] : net.config().to_key_values()) manifest += "config " + k + "=" + v + "\n";
  std::vector<float> payload;
  net.visit_buffers([&](const std::string& name, const std::vector<int>& shape, std::vector<T>& values) {
    std::string dims;
    for (std::size_t i = 0; i < shape.size(); ++i) dims += (i ? "," : "") + std::to_string(shape[i]);
    manifest += "param " + name + " " + dims + " " + std::to_string(payload.size()) + " " +
                std::to_string(values.size()) + "\n";
    for (T v : values) payload.push_back(static_cast<float>(v));
  });
  std::vector<unsigned char> bytes(std::begin(kMagic), std::end(kMagic));
  detail::put_u32(bytes, kCheckpointVersion);
  detail::put_u32(bytes, static_cast<std::uint32_t>(manifest.size()));
  bytes.insert(bytes.end(), manifest.begin(), manifest.end());
  detail::put_f32_array(bytes, payload);
  detail::write_file_bytes(path.string(), bytes);
}

template <typename T>
Xqsm<T> load_checkpoint(const std::filesystem::path& path) {
  const CheckpointContents contents = read_checkpoint_file(path);
  Xqsm<T> net(NetworkConfig::from_key_values(contents.config), 0);
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : contents.entries) by_name[e.name] = &e;
  std::size_t restored = 0;
  net.visit_buffers([&](const std::string& name, const std::vector<int>& shape, std::vector<T>& values) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing " + name);
    const CheckpointEntry& e = *it->second;
    if (e.shape != shape) throw FormatError("checkpoint shape mismatch for " + name);
    for (std::size_t i = 0; i < e.count; ++i) values[i] = static_cast<T>(contents.payload[e.offset + i]);
    ++restored;
  });
  if (restored != contents.entries.size()) throw FormatError("checkpoint has entries the network does not use");
  return net;
}

template void save_checkpoint(Xqsm<float>&, const std::filesystem::path&);
template void save_checkpoint(Xqsm<double>&, const std::filesystem::path&);
template Xqsm<float> load_checkpoint(const std::filesystem::path&);
template Xqsm<double> load_checkpoint(const std::filesystem::path&);

}  // namespace octqsm::nn
