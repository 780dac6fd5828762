#include "octqsm/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "octqsm/adam.hpp"
#include "octqsm/checkpoint.hpp"
#include "octqsm/keyvalue.hpp"
#include "octqsm/rng.hpp"

namespace octqsm {

namespace {

constexpr std::uint64_t kNoiseStream = 0x6e6f697365ULL;

using nn::Tensor5;

// Volume storage is x fastest, which is the tensor's W axis: (D, H, W) = (nz, ny, nx).
Tensor5<float> stack(const std::vector<const Volume*>& vols, double scale) {
  const Dims d = vols.front()->dims();
  Tensor5<float> t({static_cast<int>(vols.size()), 1, d.nz, d.ny, d.nx});
  for (std::size_t b = 0; b < vols.size(); ++b) {
    if (vols[b]->dims() != d) throw std::invalid_argument("mini-batch volumes differ in dims");
    const auto src = vols[b]->data();
    float* dst = t.plane(static_cast<int>(b), 0);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i] * scale);
  }
  return t;
}

void check_finite(const Volume& v, const char* what) {
  for (float x : v.data())
    if (!std::isfinite(x)) throw nn::NumericalError(std::string(what) + ": non-finite input voxel");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  if (schedule.empty()) throw std::invalid_argument("learning-rate schedule is empty");
  int next = 1;
  for (const auto& s : schedule) {
    if (s.first != next)
      throw std::invalid_argument("learning-rate schedule must continue at epoch " + std::to_string(next) +
                                  ", stage starts at " + std::to_string(s.first));
    if (s.last < s.first) throw std::invalid_argument("learning-rate stage ends before it starts");
    if (!(s.lr > 0) || !std::isfinite(s.lr)) throw std::invalid_argument("learning rates must be positive");
    next = s.last + 1;
  }
  if (next != epochs + 1)
    throw std::invalid_argument("learning-rate schedule covers epochs 1-" + std::to_string(next - 1) + ", expected 1-" +
                                std::to_string(epochs));
}

double TrainConfig::learning_rate(int epoch) const {
  for (const auto& s : schedule)
    if (epoch >= s.first && epoch <= s.last) return s.lr;
  throw std::out_of_range("no learning rate for epoch " + std::to_string(epoch));
}

std::vector<LrStage> parse_schedule(const std::string& text) {
  std::vector<LrStage> out;
  for (const auto& item : kv::split(text, ',')) {
    const auto colon = item.find(':');
    const auto dash = item.find('-');
    if (colon == std::string::npos || dash == std::string::npos || dash > colon)
      throw std::invalid_argument("schedule stage '" + item + "' is not first-last:lr");
    LrStage s;
    s.first = std::stoi(item.substr(0, dash));
    s.last = std::stoi(item.substr(dash + 1, colon - dash - 1));
    s.lr = std::stod(item.substr(colon + 1));
    out.push_back(s);
  }
  return out;
}

std::string format_schedule(const std::vector<LrStage>& schedule) {
  std::string out;
  for (const auto& s : schedule)
    out += (out.empty() ? "" : ",") + std::to_string(s.first) + "-" + std::to_string(s.last) + ":" +
           kv::format_double(s.lr);
  return out;
}

std::vector<LrStage> step_schedule(int epochs) {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  const int b1 = std::max(1, static_cast<int>(std::lround(0.5 * epochs)));
  const int b2 = std::max(b1, static_cast<int>(std::lround(0.8 * epochs)));
  std::vector<LrStage> out;
  for (const LrStage s : {LrStage{1, b1, 1e-3}, LrStage{b1 + 1, b2, 1e-4}, LrStage{b2 + 1, epochs, 1e-5}})
    if (s.first <= s.last) out.push_back(s);
  return out;
}

std::map<std::string, std::string> TrainConfig::to_key_values() const {
  return {{"epochs", std::to_string(epochs)},
          {"batch", std::to_string(batch_size)},
          {"schedule", format_schedule(schedule)},
          {"seed", std::to_string(seed)},
          {"checkpoint_every", std::to_string(checkpoint_every)},
          {"dataset", dataset_dir.string()},
          {"out", out_dir.string()}};
}

TrainConfig TrainConfig::from_key_values(const std::map<std::string, std::string>& m) {
  TrainConfig c;
  for (const auto& [k, v] : m) {
    if (k == "epochs") c.epochs = std::stoi(v);
    else if (k == "batch") c.batch_size = std::stoi(v);
    else if (k == "schedule") c.schedule = parse_schedule(v);
    else if (k == "seed") c.seed = std::stoull(v);
    else if (k == "checkpoint_every") c.checkpoint_every = std::stoi(v);
    else if (k == "dataset") c.dataset_dir = v;
    else if (k == "out") c.out_dir = v;
    else throw std::invalid_argument("unknown training key '" + k + "'");
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.epochs = 100;
  c.batch_size = 32;
  c.schedule = {{1, 50, 1e-3}, {51, 80, 1e-4}, {81, 100, 1e-5}};
  return c;
}

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

std::string loss_history_tsv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch\tmean_loss\tlr\n";
  for (const auto& r : history)
    out += std::to_string(r.epoch) + "\t" + kv::format_double(r.mean_loss) + "\t" + kv::format_double(r.lr) + "\n";
  return out;
}

TrainResult train(nn::Xqsm<float>& net, const Dataset& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (data.size() == 0) throw std::invalid_argument("training dataset is empty");
  if (data.inputs.size() != data.labels.size()) throw std::invalid_argument("dataset inputs and labels differ in count");
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.inputs[i].dims() != data.labels[i].dims())
      throw std::invalid_argument("dataset entry " + std::to_string(i) + ": input and label dims differ");
  if (data.size() < static_cast<std::size_t>(config.batch_size))
    throw std::invalid_argument("dataset has fewer entries than one batch");

  const double scale = net.config().value_scale;
  nn::Adam<float> adam(net.params(), {config.learning_rate(1)});
  Rng noise_rng(derive_seed(config.seed, kNoiseStream));
  if (!config.out_dir.empty()) std::filesystem::create_directories(config.out_dir);

  TrainResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const double lr = config.learning_rate(epoch);
    adam.set_learning_rate(lr);
    const auto batches = shuffle_batches(data.size(), config.batch_size, config.seed, epoch);
    double loss_sum = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const Volume*> xs, ys;
      for (std::size_t i : batches[b]) {
        xs.push_back(&data.inputs[i]);
        ys.push_back(&data.labels[i]);
      }
      const Tensor5<float> x = stack(xs, scale);
      const Tensor5<float> y = stack(ys, scale);
      net.zero_grad();
      nn::ForwardCache<float> cache;
      const Tensor5<float> pred = net.forward(x, nn::Mode::train, &noise_rng, &cache);
      const double loss = nn::l2_loss(pred, y);
      if (!std::isfinite(loss))
        throw nn::NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(b + 1) + " (lr " + kv::format_double(lr) + ")");
      net.backward(cache, nn::l2_loss_grad(pred, y));
      adam.step();
      loss_sum += loss;
      ++result.steps;
    }
    const EpochRecord rec{epoch, loss_sum / static_cast<double>(batches.size()), lr};
    result.history.push_back(rec);
    if (!config.out_dir.empty()) {
      write_text(config.out_dir / "loss_history.tsv", loss_history_tsv(result.history));
      if (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 && epoch != config.epochs) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_epoch_%04d.qckp", epoch);
        nn::save_checkpoint(net, config.out_dir / name);
        result.checkpoints.push_back(config.out_dir / name);
      }
    }
    if (on_epoch) on_epoch(rec);
  }
  if (!config.out_dir.empty()) {
    nn::save_checkpoint(net, config.out_dir / "final.qckp");
    result.checkpoints.push_back(config.out_dir / "final.qckp");
  }
  return result;
}

Volume infer_full(nn::Xqsm<float>& net, const Volume& field) {
  check_finite(field, "infer_full");
  const double scale = net.config().value_scale;
  const auto [padded, record] = pad_to_multiple(field, net.config().divisor);
  const Tensor5<float> x = stack({&padded}, scale);
  const Tensor5<float> y = net.forward(x, nn::Mode::eval);
  Volume out(padded.dims(), padded.voxel_size(), Unit::ppb);
  const float* src = y.plane(0, 0);
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = static_cast<float>(src[i] / scale);
  return crop_with_record(out, record);
}

std::vector<int> clamped_axis_origins(int dim, int patch, int stride) {
  if (patch > dim) throw std::invalid_argument("patch larger than volume");
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  std::vector<int> out;
  for (int o = 0; o + patch <= dim; o += stride) out.push_back(o);
  if (out.back() + patch < dim) out.push_back(dim - patch);
  return out;
}

Volume infer_patches(nn::Xqsm<float>& net, const Volume& field, int patch, const std::array<int, 3>& stride,
                     int batch) {
  check_finite(field, "infer_patches");
  const int divisor = net.config().divisor;
  if (patch < divisor || patch % divisor != 0)
    throw std::invalid_argument("patch size " + std::to_string(patch) + " is not a multiple of " +
                                std::to_string(divisor));
  if (batch < 1) throw std::invalid_argument("inference batch must be >= 1");
  const Dims d = field.dims();
  if (patch > d.nx || patch > d.ny || patch > d.nz)
    throw std::invalid_argument("patch " + std::to_string(patch) + " larger than volume " + to_string(d));

  const auto ox = clamped_axis_origins(d.nx, patch, stride[0]);
  const auto oy = clamped_axis_origins(d.ny, patch, stride[1]);
  const auto oz = clamped_axis_origins(d.nz, patch, stride[2]);
  std::vector<Origin> origins;
  for (int z : oz)
    for (int y : oy)
      for (int x : ox) origins.push_back({x, y, z});

  const double scale = net.config().value_scale;
  std::vector<double> sum(field.size(), 0.0);
  std::vector<int> hits(field.size(), 0);
  for (std::size_t start = 0; start < origins.size(); start += static_cast<std::size_t>(batch)) {
    const std::size_t end = std::min(origins.size(), start + static_cast<std::size_t>(batch));
    std::vector<Volume> patches;
    for (std::size_t i = start; i < end; ++i) patches.push_back(crop_region(field, origins[i], {patch, patch, patch}));
    std::vector<const Volume*> ptrs;
    for (const auto& p : patches) ptrs.push_back(&p);
    const Tensor5<float> y = net.forward(stack(ptrs, scale), nn::Mode::eval);
    for (std::size_t i = start; i < end; ++i) {
      const float* src = y.plane(static_cast<int>(i - start), 0);
      const Origin& o = origins[i];
      for (int z = 0; z < patch; ++z)
        for (int yy = 0; yy < patch; ++yy)
          for (int x = 0; x < patch; ++x) {
            const std::size_t dst = field.index(o[0] + x, o[1] + yy, o[2] + z);
            sum[dst] += src[(static_cast<std::size_t>(z) * patch + yy) * patch + x];
            ++hits[dst];
          }
    }
  }
  Volume out(d, field.voxel_size(), Unit::ppb);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = static_cast<float>(sum[i] / hits[i] / scale);
  return out;
}

}  // namespace octqsm
