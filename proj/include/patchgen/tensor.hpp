#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "patchgen/error.hpp"

namespace patchgen {

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t per_item() const { return static_cast<std::size_t>(c) * h * w; }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& shape);

/// Dense NCHW tensor with value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int n, int c, int y, int x) { return data_[offset(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[offset(n, c, y, x)]; }

  std::span<T> item(int n) {
    return {data_.data() + n * shape_.per_item(), shape_.per_item()};
  }
  std::span<const T> item(int n) const {
    return {data_.data() + n * shape_.per_item(), shape_.per_item()};
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  // Reinterprets the element count under a new shape.
  Tensor reshaped(Shape shape) const {
    if (shape.numel() != data_.size()) {
      fail(ErrorCategory::kShape, "cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    Tensor out = *this;
    out.shape_ = shape;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_;
  std::vector<T> data_;
};

void require_shape(const Shape& actual, const Shape& expected, const char* what);

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_shape(a.shape(), b.shape(), "max_abs_diff");
  T best = 0;
  for (std::size_t i = 0; i < a.size(); ++i) best = std::max(best, std::abs(a[i] - b[i]));
  return best;
}

// Channel-wise concatenation of tensors with equal (n, h, w).
template <typename T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts);

// Inverse of concat_channels: splits `whole` into pieces with the given channel counts.
template <typename T>
std::vector<Tensor<T>> split_channels(const Tensor<T>& whole, std::span<const int> channels);

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& term);

bool all_finite(std::span<const float> values);
bool all_finite(std::span<const double> values);

}  // namespace patchgen
