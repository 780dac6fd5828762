#pragma once

#include <cstdint>
#include <vector>

#include "octqsm/layers.hpp"

namespace octqsm::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment buffers for one parameter array.
struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// Adam with bias correction. Owns one moment pair per registered parameter and a
/// single step counter shared by all of them.
template <typename T>
class Adam {
public:
  explicit Adam(std::vector<Param<T>*> params, AdamConfig config = {});

  /// Applies one update from the accumulated gradients. Does not clear them.
  void step();
  void zero_grad();

  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  [[nodiscard]] const AdamConfig& config() const { return config_; }
  [[nodiscard]] std::int64_t step_count() const { return step_; }
  [[nodiscard]] const std::vector<AdamMoments>& moments() const { return moments_; }

private:
  std::vector<Param<T>*> params_;
  std::vector<AdamMoments> moments_;
  AdamConfig config_;
  std::int64_t step_ = 0;
};

/// Single Adam update of `value` in place; `step` is the 1-based step number.
template <typename T>
void adam_update(std::span<T> value, std::span<const T> grad, AdamMoments& moments, std::int64_t step,
                 const AdamConfig& config);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace octqsm::nn
