#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "volcast/error.hpp"

namespace volcast {

/// Dense row-major array of doubles. Rank 0 is a scalar; most autodiff
/// primitives work on rank-2 (rows x cols) tensors.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() : values_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(extent(shape_), fill) {}

  Tensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != extent(shape_)) {
      throw ShapeError("tensor buffer of length " + std::to_string(values_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor(Shape{rows, cols}, fill);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
  }

  /// A 1 x n row.
  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{1, n}, std::move(values));
  }

  /// An n x 1 column.
  static Tensor column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n, 1}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }

  std::size_t rows() const {
    if (rank() == 0) return 1;
    require_matrix();
    return shape_[0];
  }

  std::size_t cols() const {
    if (rank() == 0) return 1;
    require_matrix();
    return shape_[1];
  }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  double& at(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }

  /// Value of a single-element tensor.
  double item() const {
    if (values_.size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_string(shape_));
    }
    return values_[0];
  }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  Tensor zeros_like() const { return Tensor(shape_, 0.0); }

  static std::size_t extent(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
      if (d == 0) throw ShapeError("tensor extents must be positive");
      n *= d;
    }
    return n;
  }

  static std::string shape_string(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape[i]);
    }
    return s + "]";
  }

 private:
  void require_matrix() const {
    if (rank() != 2) throw ShapeError("expected a rank-2 tensor, got " + shape_string(shape_));
  }

  Shape shape_;
  std::vector<double> values_;
};

}  // namespace volcast
