#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "octqsm/layers.hpp"

namespace octqsm::nn {

/// Channel split of an octave feature: `high` channels at full resolution, `low`
/// channels at half resolution.
struct OctChannels {
  int high = 0;
  int low = 0;

  [[nodiscard]] int total() const { return high + low; }
  [[nodiscard]] double alpha() const { return total() == 0 ? 0.0 : static_cast<double>(high) / total(); }

  /// ch(high) = round(alpha * c), ch(low) = c - ch(high).
  static OctChannels split(int channels, double alpha);

  friend OctChannels operator+(OctChannels a, OctChannels b) { return {a.high + b.high, a.low + b.low}; }
  friend bool operator==(const OctChannels&, const OctChannels&) = default;
};

/// Paired high/low resolution feature maps. An absent branch is a tensor with zero
/// channels.
template <typename T>
struct OctFeature {
  Tensor5<T> high;
  Tensor5<T> low;

  [[nodiscard]] OctChannels channels() const { return {high.channels(), low.channels()}; }
};

/// Wraps a plain tensor as an all-high feature (alpha = 1).
template <typename T>
OctFeature<T> high_only(Tensor5<T> x);

/// Octave convolution with transposed-conv upsampling on the low-to-high path:
///   Y_H = Conv_HH(X_H) + ConvT(Conv_LH(X_L))
///   Y_L = Conv_HL(AvgPool(X_H)) + Conv_LL(X_L)
/// Paths whose source or target branch is empty are omitted.
template <typename T>
struct OctConvParams {
  std::string name;
  OctChannels in;
  OctChannels out;
  std::optional<ConvParams<T>> hh;
  std::optional<ConvParams<T>> hl;
  std::optional<ConvParams<T>> lh;
  std::optional<ConvParams<T>> lh_up;  // k = 2, s = 2 transposed conv after Conv_LH
  std::optional<ConvParams<T>> ll;

  OctConvParams() = default;
  OctConvParams(std::string name, OctChannels in, OctChannels out, int kernel = 3);

  void init_normal(std::mt19937_64& rng, double stddev = 0.01);
  void set_zero();
  [[nodiscard]] std::vector<Param<T>*> params();
  /// Weights of the four main kernels (HH, HL, LH, LL), biases excluded.
  [[nodiscard]] std::size_t main_kernel_weights() const;
};

template <typename T>
struct OctConvCache {
  Tensor5<T> pooled_high;  // AvgPool(X_H), when the HL path exists
  Tensor5<T> lh_mid;       // Conv_LH(X_L), input of the transposed conv
};

template <typename T>
OctFeature<T> octconv_forward(const OctFeature<T>& x, const OctConvParams<T>& p, OctConvCache<T>* cache = nullptr);

template <typename T>
OctFeature<T> octconv_backward(const OctFeature<T>& x, const OctConvCache<T>& cache, OctConvParams<T>& p,
                               const OctFeature<T>& dy);

/// Training-time input noise: with probability P, add N(0, Power/SNR) per element where
/// Power = sum(x^2)/numel(x) over the whole mini-batch and SNR is drawn uniformly from
/// the list.
struct NoiseConfig {
  bool enabled = true;
  double probability = 0.2;
  std::vector<double> snr_list{40.0, 20.0, 10.0, 5.0};

  void validate() const;
};

/// What the noise layer did for one mini-batch.
struct NoiseEvent {
  bool applied = false;
  double snr = 0.0;
  double power = 0.0;
};

template <typename T>
Tensor5<T> noise_layer(const Tensor5<T>& x, std::mt19937_64& rng, const NoiseConfig& config,
                       NoiseEvent* event = nullptr);

}  // namespace octqsm::nn
