#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "octqsm/tensor.hpp"

namespace octqsm::nn {

enum class Mode { train, eval };

/// A learnable array with its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, std::vector<int> s, T fill = T(0));

  [[nodiscard]] std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// Weights are (out_ch, in_ch, k, k, k) for both regular and transposed convolution.
template <typename T>
struct ConvParams {
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  Param<T> weight;
  Param<T> bias;

  ConvParams() = default;
  ConvParams(std::string name, int in, int out, int k, int s, int p);

  /// N(0, std) for weights and biases.
  void init_normal(std::mt19937_64& rng, double stddev = 0.01);
  void set_zero();
};

template <typename T>
struct BatchNormParams {
  int channels = 0;
  Param<T> gain;
  Param<T> shift;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  double eps = 1e-5;
  double momentum = 0.1;
  std::string name;

  BatchNormParams() = default;
  BatchNormParams(std::string name, int channels, double eps = 1e-5, double momentum = 0.1);
};

/// Saved by batch_norm3d in train mode for the backward pass.
template <typename T>
struct BatchNormCache {
  Tensor5<T> normalized;
  std::vector<T> inv_std;
  Mode mode = Mode::eval;
};

// Every backward takes the forward inputs plus the upstream gradient, returns the
// input gradient and accumulates (+=) into the Param::grad buffers.

template <typename T>
Tensor5<T> conv3d(const Tensor5<T>& x, const ConvParams<T>& p);
template <typename T>
Tensor5<T> conv3d_backward(const Tensor5<T>& x, ConvParams<T>& p, const Tensor5<T>& dy);

/// Kernel 2, stride 2 only: every output voxel is covered by exactly one input voxel.
template <typename T>
Tensor5<T> conv_transpose3d(const Tensor5<T>& x, const ConvParams<T>& p);
template <typename T>
Tensor5<T> conv_transpose3d_backward(const Tensor5<T>& x, ConvParams<T>& p, const Tensor5<T>& dy);

template <typename T>
Tensor5<T> avg_pool3d(const Tensor5<T>& x);
template <typename T>
Tensor5<T> avg_pool3d_backward(const Tensor5<T>& x, const Tensor5<T>& dy);

/// Ties route the gradient to the first voxel of the 2x2x2 block in scan order.
template <typename T>
Tensor5<T> max_pool3d(const Tensor5<T>& x);
template <typename T>
Tensor5<T> max_pool3d_backward(const Tensor5<T>& x, const Tensor5<T>& dy);

/// Train mode normalises over (batch, d, h, w) per channel and updates running stats.
template <typename T>
Tensor5<T> batch_norm3d(const Tensor5<T>& x, BatchNormParams<T>& p, Mode mode, BatchNormCache<T>* cache = nullptr);
template <typename T>
Tensor5<T> batch_norm3d_backward(const BatchNormCache<T>& cache, BatchNormParams<T>& p, const Tensor5<T>& dy);

template <typename T>
Tensor5<T> relu(const Tensor5<T>& x);
template <typename T>
Tensor5<T> relu_backward(const Tensor5<T>& x, const Tensor5<T>& dy);

template <typename T>
Tensor5<T> add(const Tensor5<T>& x, const Tensor5<T>& y);
template <typename T>
Tensor5<T> concat_channels(const Tensor5<T>& x, const Tensor5<T>& y);
/// Channels [0, n) and [n, C).
template <typename T>
std::pair<Tensor5<T>, Tensor5<T>> split_channels(const Tensor5<T>& x, int n);

/// (1/2N) * sum over the batch of ||pred - label||_F^2.
template <typename T>
double l2_loss(const Tensor5<T>& pred, const Tensor5<T>& label);
/// (pred - label) / N.
template <typename T>
Tensor5<T> l2_loss_grad(const Tensor5<T>& pred, const Tensor5<T>& label);

}  // namespace octqsm::nn
