// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lmdf/errors.hpp"

namespace lmdf {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_product(const Shape& shape);

/// Dense row-major n-dimensional array. Images and activations use H x W x C.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t axis) const;

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // H x W x C accessors.
  T& at(std::size_t y, std::size_t x, std::size_t c) noexcept {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }
  const T& at(std::size_t y, std::size_t x, std::size_t c) const noexcept {
    return data_[(y * shape_[1] + x) * shape_[2] + c];
  }

  /// Same data, new extents; the element count must match.
  BasicTensor reshaped(Shape shape) const;
  void fill(T value);
  bool all_finite() const noexcept;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  // A fixed buffer alignment keeps Eigen's vectorised kernels summing in the
  // same order on every run, independent of where the heap places a tensor.
  Shape shape_;
  std::vector<T, Eigen::aligned_allocator<T>> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Trainable tensor with its gradient and Adam moment buffers.
template <typename T>
struct ParamTensor {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  BasicTensor<T> adam_m;
  BasicTensor<T> adam_v;
  std::uint64_t step_count = 0;

  ParamTensor() = default;
  ParamTensor(std::string param_name, Shape shape);
  ParamTensor(std::string param_name, BasicTensor<T> initial);

  const Shape& shape() const noexcept { return value.shape(); }
  std::size_t size() const noexcept { return value.size(); }
  void zero_grad();
  /// Replaces the value and clears grad and optimizer state.
  void reset(BasicTensor<T> initial);
};

/// Throws ShapeError naming `what` unless `actual == expected`.
void require_shape(const Shape& actual, const Shape& expected, const std::string& what);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;
extern template struct ParamTensor<float>;
extern template struct ParamTensor<double>;

}  // namespace lmdf
