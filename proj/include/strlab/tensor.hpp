#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "strlab/error.hpp"

namespace strlab {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major n-dimensional array. A rank-0 shape is a scalar holding one
/// value. A default-constructed tensor is "unset" (no shape, no data) and is
/// only used as a placeholder, e.g. for a gradient that was never written.
template <typename Scalar_>
class Tensor {
 public:
  using Scalar = Scalar_;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_extents();
    values_ = Vector::Constant(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
    check_extents();
    if (static_cast<Index>(values.size()) != shape_size(shape_)) {
      throw Error(ErrorCode::ShapeMismatch,
                  "initializer has " + std::to_string(values.size()) + " values for shape " +
                      shape_string(shape_));
    }
    values_.resize(static_cast<Index>(values.size()));
    std::copy(values.begin(), values.end(), values_.data());
  }

  Tensor(Shape shape, Vector values) : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents();
    if (values_.size() != shape_size(shape_)) {
      throw Error(ErrorCode::ShapeMismatch, "data length " + std::to_string(values_.size()) +
                                                " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }
  static Tensor scalar(Scalar value) { return Tensor(Shape{}, value); }

  bool is_set() const { return values_.size() > 0; }
  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return values_.size(); }

  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  /// Flat view, the natural target for Eigen coefficient-wise expressions.
  Vector& vec() { return values_; }
  const Vector& vec() const { return values_; }

  MatrixMap matrix(Index rows, Index cols) {
    check_matrix(rows, cols);
    return MatrixMap(values_.data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    check_matrix(rows, cols);
    return ConstMatrixMap(values_.data(), rows, cols);
  }
  /// 2-D view of a rank-2 tensor.
  MatrixMap matrix() { return matrix(dim(0), dim(1)); }
  ConstMatrixMap matrix() const { return matrix(dim(0), dim(1)); }

  Scalar& operator[](Index flat) { return values_[flat]; }
  Scalar operator[](Index flat) const { return values_[flat]; }

  template <typename... Ix>
  Scalar& operator()(Ix... ix) {
    return values_[offset({static_cast<Index>(ix)...})];
  }
  template <typename... Ix>
  Scalar operator()(Ix... ix) const {
    return values_[offset({static_cast<Index>(ix)...})];
  }

  Index offset(std::initializer_list<Index> index) const {
    Index flat = 0;
    std::size_t axis = 0;
    for (Index i : index) flat = flat * shape_[axis++] + i;
    return flat;
  }

  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), values_);
  }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, values_.template cast<To>());
  }

  void set_zero() { values_.setZero(); }
  bool all_finite() const { return values_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

 private:
  void check_extents() const {
    for (Index e : shape_) {
      if (e <= 0) throw Error(ErrorCode::ShapeMismatch, "non-positive extent in " + shape_string(shape_));
    }
  }
  void check_matrix(Index rows, Index cols) const {
    if (rows * cols != values_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "cannot view " + shape_string(shape_) + " as " +
                                                std::to_string(rows) + "x" + std::to_string(cols));
    }
  }

  Shape shape_;
  Vector values_;
};

}  // namespace strlab
