#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "octqsm/octconv.hpp"

namespace octqsm::nn {

/// Raised when an activation or loss becomes NaN/Inf.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct NetworkConfig {
  /// Channels at the first level; levels two and three use 2x and 4x.
  int width = 32;
  double alpha = 0.5;
  NoiseConfig noise{};
  /// Input spatial dims must be multiples of this.
  int divisor = 8;
  /// Multiplier taking ppb volumes to network units (1e-3: ppb -> ppm). Applied by
  /// training and inference, not inside the network itself.
  double value_scale = 1e-3;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  void validate() const;
  [[nodiscard]] std::map<std::string, std::string> to_key_values() const;
  static NetworkConfig from_key_values(const std::map<std::string, std::string>& kv);

  /// Width 8 (8/16/32 channels per level).
  static NetworkConfig desk();
};

enum class LayerKind { noise, octconv, max_pool, transposed_conv, batch_norm, relu, concat, final_conv, residual_add };

std::string to_string(LayerKind kind);

struct LayerInventory {
  int octconv = 0;
  int max_pool = 0;
  int transposed_conv = 0;
  int batch_norm = 0;
  int final_conv = 0;
  int noise = 0;

  friend bool operator==(const LayerInventory&, const LayerInventory&) = default;
};

LayerInventory count_layers(const std::vector<LayerKind>& trace);

/// Batch norm over an octave feature; each branch has its own statistics.
template <typename T>
struct OctBatchNorm {
  BatchNormParams<T> high;
  BatchNormParams<T> low;  // zero channels when the branch is absent
};

/// Group-wise k = 2, s = 2 transposed convolution used on the expanding path.
template <typename T>
struct OctUpsample {
  ConvParams<T> high;
  ConvParams<T> low;
};

template <typename T>
struct BlockCache {
  OctConvCache<T> conv;
  BatchNormCache<T> bn_high;
  BatchNormCache<T> bn_low;
};

template <typename T>
struct UpCache {
  BatchNormCache<T> bn_high;
  BatchNormCache<T> bn_low;
};

/// Activations retained by a train-mode forward pass.
template <typename T>
struct ForwardCache {
  Tensor5<T> input;                     // network input after the noise layer
  std::array<OctFeature<T>, 10> act;    // post-ReLU output of every OctConv block
  std::array<OctFeature<T>, 2> up_act;  // post-ReLU output of the two upsampling blocks
  OctFeature<T> pool1, pool2, cat1, cat2;
  std::array<BlockCache<T>, 10> blocks;
  std::array<UpCache<T>, 2> ups;
};

/// Octave-convolutional 3D U-net with an input-to-output residual connection:
///
///   noise -> oct0 (alpha 1 -> a) -> oct1 -> pool -> oct2 -> oct3 -> pool -> oct4 -> oct5
///         -> up0 ++ oct3 -> oct6 -> oct7 -> up1 ++ oct1 -> oct8 -> oct9 (a -> 1)
///         -> 1^3 conv -> + input
///
/// Every OctConv and upsampling layer is followed by batch norm and ReLU.
template <typename T>
class Xqsm {
public:
  Xqsm(NetworkConfig config, std::uint64_t seed);

  [[nodiscard]] const NetworkConfig& config() const { return config_; }

  /// Output has the input's shape. Input must be (N, 1, D, H, W) with D, H, W divisible
  /// by the configured divisor. Train mode applies the noise layer (needs `noise_rng`
  /// when noise is enabled) and batch statistics.
  Tensor5<T> forward(const Tensor5<T>& x, Mode mode, std::mt19937_64* noise_rng = nullptr,
                     ForwardCache<T>* cache = nullptr, std::vector<LayerKind>* trace = nullptr,
                     NoiseEvent* noise_event = nullptr);

  /// Accumulates parameter gradients for the forward pass recorded in `cache` and
  /// returns the gradient with respect to the (post-noise) input.
  Tensor5<T> backward(const ForwardCache<T>& cache, const Tensor5<T>& dy);

  [[nodiscard]] std::vector<Param<T>*> params();
  void zero_grad();
  [[nodiscard]] std::size_t parameter_count();

  /// Every stored array in a stable order: learnable values and batch-norm running
  /// statistics. Used by checkpointing.
  void visit_buffers(const std::function<void(const std::string&, const std::vector<int>&, std::vector<T>&)>& fn);

  /// Zero every conv weight/bias and every batch-norm gain/shift: the network becomes
  /// the identity map through its residual connection.
  void make_identity();

  [[nodiscard]] LayerInventory inventory() const;

  std::array<OctConvParams<T>, 10> oct;
  std::array<OctBatchNorm<T>, 10> oct_bn;
  std::array<OctUpsample<T>, 2> up;
  std::array<OctBatchNorm<T>, 2> up_bn;
  ConvParams<T> final_conv;

private:
  NetworkConfig config_;
};

template <typename T>
Xqsm<T> build_xqsm(const NetworkConfig& config, std::uint64_t seed);

/// Functional form of Xqsm::forward.
template <typename T>
Tensor5<T> network_forward(Xqsm<T>& net, const Tensor5<T>& x, Mode mode, std::mt19937_64* noise_rng = nullptr,
                           ForwardCache<T>* cache = nullptr);

extern template class Xqsm<float>;
extern template class Xqsm<double>;

}  // namespace octqsm::nn
