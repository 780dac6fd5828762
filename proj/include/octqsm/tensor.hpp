#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace octqsm::nn {

/// Dense 5D tensor laid out (batch, channel, depth, height, width), width fastest.
template <typename T>
class Tensor5 {
public:
  using Shape = std::array<int, 5>;

  Tensor5() = default;
  explicit Tensor5(Shape shape, T fill = T(0)) : shape_(shape) {
    for (int s : shape_)
      if (s < 0) throw std::invalid_argument("tensor shape entries must be >= 0");
    data_.assign(count(shape_), fill);
  }
  Tensor5(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != count(shape_)) throw std::invalid_argument("tensor data does not match shape");
  }

  static std::size_t count(const Shape& s) {
    std::size_t n = 1;
    for (int v : s) n *= static_cast<std::size_t>(v);
    return n;
  }

  [[nodiscard]] const Shape& shape() const { return shape_; }
  [[nodiscard]] int batch() const { return shape_[0]; }
  [[nodiscard]] int channels() const { return shape_[1]; }
  [[nodiscard]] int depth() const { return shape_[2]; }
  [[nodiscard]] int height() const { return shape_[3]; }
  [[nodiscard]] int width() const { return shape_[4]; }
  [[nodiscard]] std::array<int, 3> spatial() const { return {shape_[2], shape_[3], shape_[4]}; }
  [[nodiscard]] std::size_t spatial_size() const {
    return static_cast<std::size_t>(shape_[2]) * shape_[3] * static_cast<std::size_t>(shape_[4]);
  }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::span<const T> data() const { return data_; }
  [[nodiscard]] std::span<T> data() { return data_; }
  [[nodiscard]] std::vector<T>& storage() { return data_; }

  /// Contiguous (d, h, w) block of sample n, channel c.
  [[nodiscard]] T* plane(int n, int c) { return data_.data() + plane_offset(n, c); }
  [[nodiscard]] const T* plane(int n, int c) const { return data_.data() + plane_offset(n, c); }

  [[nodiscard]] T& at(int n, int c, int d, int h, int w) { return data_[offset(n, c, d, h, w)]; }
  [[nodiscard]] T at(int n, int c, int d, int h, int w) const { return data_[offset(n, c, d, h, w)]; }

  [[nodiscard]] bool all_finite() const;

  friend bool operator==(const Tensor5&, const Tensor5&) = default;

private:
  [[nodiscard]] std::size_t plane_offset(int n, int c) const {
    return (static_cast<std::size_t>(n) * shape_[1] + static_cast<std::size_t>(c)) * spatial_size();
  }
  [[nodiscard]] std::size_t offset(int n, int c, int d, int h, int w) const {
    return plane_offset(n, c) +
           (static_cast<std::size_t>(d) * shape_[3] + static_cast<std::size_t>(h)) * shape_[4] +
           static_cast<std::size_t>(w);
  }

  Shape shape_{0, 0, 0, 0, 0};
  std::vector<T> data_;
};

std::string shape_string(const std::array<int, 5>& shape);

extern template class Tensor5<float>;
extern template class Tensor5<double>;

}  // namespace octqsm::nn
