#include "octqsm/tensor.hpp"

#include <cmath>

namespace octqsm::nn {

template <typename T>
bool Tensor5<T>::all_finite() const {
  for (T v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string shape_string(const std::array<int, 5>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + ")";
}

template class Tensor5<float>;
template class Tensor5<double>;

}  // namespace octqsm::nn
