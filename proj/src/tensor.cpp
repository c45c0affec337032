// SPDX-License-Identifier: Apache-2.0
#include "lmdf/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace lmdf {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_product(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

void require_shape(const Shape& actual, const Shape& expected, const std::string& what) {
  if (actual != expected) {
    throw ShapeError(what + ": expected " + shape_to_string(expected) + ", got " +
                     shape_to_string(actual));
  }
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {
  for (auto e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_to_string(shape_));
  }
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(data.begin(), data.end()) {
  for (auto e : shape_) {
    if (e == 0) throw ShapeError("tensor extents must be positive: " + shape_to_string(shape_));
  }
  if (shape_product(shape_) != data_.size()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_to_string(shape_));
  }
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(shape_));
  }
  return shape_[axis];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape_product(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " +
                     shape_to_string(shape));
  }
  return BasicTensor(std::move(shape), std::vector<T>(data_.begin(), data_.end()));
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
ParamTensor<T>::ParamTensor(std::string param_name, Shape shape)
    : ParamTensor(std::move(param_name), BasicTensor<T>(std::move(shape))) {}

template <typename T>
ParamTensor<T>::ParamTensor(std::string param_name, BasicTensor<T> initial)
    : name(std::move(param_name)) {
  reset(std::move(initial));
}

template <typename T>
void ParamTensor<T>::zero_grad() {
  grad.fill(T{0});
}

template <typename T>
void ParamTensor<T>::reset(BasicTensor<T> initial) {
  value = std::move(initial);
  grad = BasicTensor<T>(value.shape());
  adam_m = BasicTensor<T>(value.shape());
  adam_v = BasicTensor<T>(value.shape());
  step_count = 0;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template struct ParamTensor<float>;
template struct ParamTensor<double>;

}  // namespace lmdf
