#include "octqsm/adam.hpp"

#include <cmath>

namespace octqsm::nn {

template <typename T>
void adam_update(std::span<T> value, std::span<const T> grad, AdamMoments& moments, std::int64_t step,
                 const AdamConfig& config) {
  if (value.size() != grad.size() || moments.m.size() != value.size() || moments.v.size() != value.size())
    throw std::invalid_argument("adam_update: shape mismatch");
  if (step < 1) throw std::invalid_argument("adam_update: step numbers start at 1");
  const double b1 = config.beta1, b2 = config.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double g = grad[i];
    moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g;
    moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * g * g;
    const double m_hat = moments.m[i] / correction1;
    const double v_hat = moments.v[i] / correction2;
    value[i] = static_cast<T>(value[i] - config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon));
  }
}

template <typename T>
Adam<T>::Adam(std::vector<Param<T>*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  moments_.reserve(params_.size());
  for (const Param<T>* p : params_) {
    if (p->grad.size() != p->value.size()) throw std::invalid_argument("Adam: parameter " + p->name + " has no grad");
    moments_.push_back({std::vector<double>(p->size(), 0.0), std::vector<double>(p->size(), 0.0)});
  }
}

template <typename T>
void Adam<T>::step() {
  ++step_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Param<T>& p = *params_[i];
    adam_update<T>(p.value, p.grad, moments_[i], step_, config_);
  }
}

template <typename T>
void Adam<T>::zero_grad() {
  for (Param<T>* p : params_) p->zero_grad();
}

template class Adam<float>;
template class Adam<double>;
template void adam_update<float>(std::span<float>, std::span<const float>, AdamMoments&, std::int64_t,
                                 const AdamConfig&);
template void adam_update<double>(std::span<double>, std::span<const double>, AdamMoments&, std::int64_t,
                                  const AdamConfig&);

}  // namespace octqsm::nn
