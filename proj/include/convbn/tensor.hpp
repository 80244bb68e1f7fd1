// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace convbn {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

std::size_t dtype_size(DType dtype);
std::string_view dtype_name(DType dtype);
DType parse_dtype(std::string_view name);

/// Ordered list of non-negative extents, rank <= 8. Rank 0 has numel 1.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 8;

  Shape() = default;
  Shape(std::initializer_list<std::int64_t> extents);
  explicit Shape(std::vector<std::int64_t> extents);

  std::size_t rank() const noexcept { return extents_.size(); }
  std::int64_t operator[](std::size_t axis) const { return extents_[axis]; }
  const std::vector<std::int64_t>& extents() const noexcept { return extents_; }
  std::size_t numel() const noexcept;
  std::string str() const;

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::int64_t> extents_;
};

/// Immutable dense row-major tensor.
///
/// Values are held as doubles regardless of dtype; an F32 tensor only ever
/// holds values exactly representable in binary32 (rounded at construction),
/// so every kernel accumulates in f64 and rounds once on output. Copies share
/// storage.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, DType dtype = DType::F64);

  static Tensor zeros(Shape shape, DType dtype = DType::F64);
  static Tensor full(Shape shape, double value, DType dtype = DType::F64);
  static Tensor scalar(double value, DType dtype = DType::F64);

  DType dtype() const noexcept { return dtype_; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.rank(); }
  std::int64_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t numel() const noexcept { return data_->size(); }
  std::size_t nbytes() const noexcept { return numel() * dtype_size(dtype_); }

  std::span<const double> values() const noexcept { return *data_; }
  const double* data() const noexcept { return data_->data(); }
  double operator[](std::size_t flat) const { return (*data_)[flat]; }
  double at(std::initializer_list<std::int64_t> index) const;
  std::vector<double> to_vector() const { return *data_; }

  /// Same storage, new shape of equal numel.
  Tensor reshape(Shape shape) const;
  Tensor to(DType dtype) const;

  /// Identity of the underlying buffer; equal for tensors sharing storage.
  const void* storage_id() const noexcept { return data_.get(); }

 private:
  DType dtype_ = DType::F64;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
};

/// Rounds every value through binary32 when dtype is F32.
void round_to_dtype(std::span<double> values, DType dtype);

/// Wider of the two dtypes.
DType promote(DType a, DType b);

/// Bitwise equality of shape, dtype and values.
bool bitwise_equal(const Tensor& a, const Tensor& b);

double max_abs(const Tensor& t);
double max_abs_diff(const Tensor& a, const Tensor& b);

/// max|a - b| / max(max|a|, max|b|); zero when both tensors are zero.
double normwise_rel_diff(const Tensor& a, const Tensor& b);

}  // namespace convbn
