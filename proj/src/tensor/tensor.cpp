// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "convbn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "convbn/errors.hpp"

namespace convbn {

std::size_t dtype_size(DType dtype) { return dtype == DType::F32 ? 4 : 8; }

std::string_view dtype_name(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

DType parse_dtype(std::string_view name) {
  if (name == "f32") return DType::F32;
  if (name == "f64") return DType::F64;
  throw InputError("unknown dtype '" + std::string(name) + "' (expected f32 or f64)");
}

Shape::Shape(std::initializer_list<std::int64_t> extents)
    : Shape(std::vector<std::int64_t>(extents)) {}

Shape::Shape(std::vector<std::int64_t> extents) : extents_(std::move(extents)) {
  if (extents_.size() > kMaxRank) {
    throw ShapeError("rank " + std::to_string(extents_.size()) + " exceeds maximum of 8");
  }
  for (auto e : extents_) {
    if (e < 0) throw ShapeError("negative extent in shape " + str());
  }
}

std::size_t Shape::numel() const noexcept {
  std::size_t n = 1;
  for (auto e : extents_) n *= static_cast<std::size_t>(e);
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < extents_.size(); ++i) {
    if (i) os << ',';
    os << extents_[i];
  }
  os << ']';
  return os.str();
}

void round_to_dtype(std::span<double> values, DType dtype) {
  if (dtype != DType::F32) return;
  for (auto& v : values) v = static_cast<double>(static_cast<float>(v));
}

DType promote(DType a, DType b) {
  return (a == DType::F64 || b == DType::F64) ? DType::F64 : DType::F32;
}

Tensor::Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

Tensor::Tensor(Shape shape, std::vector<double> values, DType dtype)
    : dtype_(dtype), shape_(std::move(shape)) {
  if (values.size() != shape_.numel()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_.str());
  }
  round_to_dtype(values, dtype_);
  data_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  const auto n = shape.numel();
  return Tensor(std::move(shape), std::vector<double>(n, value), dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return Tensor(Shape{}, {value}, dtype); }

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != rank()) {
    throw ShapeError("index of rank " + std::to_string(index.size()) + " into tensor " +
                     shape_.str());
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= shape_[axis]) throw ShapeError("index out of range for " + shape_.str());
    flat = flat * static_cast<std::size_t>(shape_[axis]) + static_cast<std::size_t>(i);
    ++axis;
  }
  return (*data_)[flat];
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape.numel() != numel()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  Tensor t = *this;
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::to(DType dtype) const {
  if (dtype == dtype_) return *this;
  return Tensor(shape_, *data_, dtype);
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype() || a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), a.numel() * sizeof(double)) == 0;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("cannot compare " + a.shape().str() + " with " + b.shape().str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double normwise_rel_diff(const Tensor& a, const Tensor& b) {
  const double diff = max_abs_diff(a, b);
  const double scale = std::max(max_abs(a), max_abs(b));
  if (scale == 0.0) return diff;
  return diff / scale;
}

}  // namespace convbn
