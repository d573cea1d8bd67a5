// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ufc/errors.hpp"

namespace ufc::diffcore {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense row-major array. A rank-0 shape is a scalar with one element.
template <class T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : shape_{0} {}

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    if (numel(shape_) != data_.size()) {
      throw DimensionError("tensor shape " + shape_str(shape_) + " does not match " +
                           std::to_string(data_.size()) + " elements");
    }
  }

  static BasicTensor zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static BasicTensor full(Shape shape, T value) {
    const std::size_t n = numel(shape);
    return BasicTensor(std::move(shape), std::vector<T>(n, value));
  }

  static BasicTensor scalar(T value) { return BasicTensor(Shape{}, std::vector<T>{value}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  T at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }

  /// Row `r` of a rank-2 tensor.
  std::span<const T> row(std::size_t r) const {
    const std::size_t cols = shape_.back();
    return std::span<const T>(data_).subspan(r * cols, cols);
  }
  std::span<T> row(std::size_t r) {
    const std::size_t cols = shape_.back();
    return std::span<T>(data_).subspan(r * cols, cols);
  }

  T item() const {
    if (data_.size() != 1) throw ContractError("item() on tensor " + shape_str(shape_));
    return data_[0];
  }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool value) noexcept { requires_grad_ = value; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void validate_finite(std::string_view what) const {
    if (!all_finite()) throw NumericError(std::string(what) + ": non-finite value");
  }

  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_, requires_grad_);
  }

  template <class U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()), requires_grad_);
  }

 private:
  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
};

using Tensor = BasicTensor<float>;

/// Same shape and identical bit patterns (distinguishes -0 and NaN payloads).
template <class T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return a.shape() == b.shape() &&
         (a.size() == 0 || std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0);
}

}  // namespace ufc::diffcore
