// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "convbn/tensor_ops.hpp"

#include <cmath>

#include "convbn/errors.hpp"

namespace convbn {
namespace {

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch between " + a.str() + " and " + b.str());
}

// For every axis of `big`, the stride into `small` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& small, const Shape& big) {
  const std::size_t offset = big.rank() - small.rank();
  std::vector<std::size_t> small_strides(small.rank(), 1);
  for (std::size_t k = small.rank(); k-- > 1;) {
    small_strides[k - 1] = small_strides[k] * static_cast<std::size_t>(small[k]);
  }
  std::vector<std::size_t> strides(big.rank(), 0);
  for (std::size_t k = offset; k < big.rank(); ++k) {
    const std::size_t axis = k - offset;
    strides[k] = (small[axis] == 1 && big[k] != 1) ? 0 : small_strides[axis];
  }
  return strides;
}

// Calls fn(big_flat, small_flat) for every element of `big` in row-major order.
template <typename Fn>
void for_each_broadcast(const Shape& small, const Shape& big, Fn&& fn) {
  const auto strides = broadcast_strides(small, big);
  const std::size_t rank = big.rank();
  const std::size_t n = big.numel();
  std::vector<std::int64_t> counter(rank, 0);
  std::size_t small_flat = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    fn(flat, small_flat);
    for (std::size_t k = rank; k-- > 0;) {
      if (++counter[k] < big[k]) {
        small_flat += strides[k];
        break;
      }
      small_flat -= strides[k] * static_cast<std::size_t>(big[k] - 1);
      counter[k] = 0;
    }
  }
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t rank = std::max(a.rank(), b.rank());
  std::vector<std::int64_t> out(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    const std::int64_t ea = k + a.rank() >= rank ? a[k + a.rank() - rank] : 1;
    const std::int64_t eb = k + b.rank() >= rank ? b[k + b.rank() - rank] : 1;
    if (ea != eb && ea != 1 && eb != 1) mismatch(op, a, b);
    out[k] = ea == 1 ? eb : ea;
  }
  return Shape(std::move(out));
}

}  // namespace

bool broadcastable(const Shape& from, const Shape& to) {
  if (from.rank() > to.rank()) return false;
  const std::size_t offset = to.rank() - from.rank();
  for (std::size_t k = 0; k < from.rank(); ++k) {
    if (from[k] != to[k + offset] && from[k] != 1) return false;
  }
  return true;
}

Tensor broadcast_to(const Tensor& t, const Shape& target) {
  if (!broadcastable(t.shape(), target)) mismatch("broadcast_to", t.shape(), target);
  if (t.shape() == target) return t;
  std::vector<double> out(target.numel());
  const auto src = t.values();
  for_each_broadcast(t.shape(), target,
                     [&](std::size_t big, std::size_t small) { out[big] = src[small]; });
  return Tensor(target, std::move(out), t.dtype());
}

Tensor reduce_to(const Tensor& t, const Shape& target) {
  if (!broadcastable(target, t.shape())) mismatch("reduce_to", t.shape(), target);
  if (t.shape() == target) return t;
  std::vector<double> out(target.numel(), 0.0);
  const auto src = t.values();
  for_each_broadcast(target, t.shape(),
                     [&](std::size_t big, std::size_t small) { out[small] += src[big]; });
  return Tensor(target, std::move(out), t.dtype());
}

Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b) {
  static constexpr const char* kNames[] = {"add", "sub", "mul", "div"};
  const char* name = kNames[static_cast<int>(op)];
  const Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  const Tensor lhs = broadcast_to(a, out_shape);
  const Tensor rhs = broadcast_to(b, out_shape);
  if (op == BinaryOp::Div) {
    for (double v : rhs.values()) {
      if (v == 0.0) throw DomainError("div: division by exact zero");
    }
  }
  std::vector<double> out(out_shape.numel());
  kernels::active().binary(op, lhs.data(), rhs.data(), out.data(), out.size());
  return Tensor(out_shape, std::move(out), promote(a.dtype(), b.dtype()));
}

Tensor rsqrt(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(a[i] > 0.0)) {
      throw DomainError("rsqrt: non-positive argument " + std::to_string(a[i]) + " at index " +
                        std::to_string(i));
    }
    out[i] = 1.0 / std::sqrt(a[i]);
  }
  return Tensor(a.shape(), std::move(out), a.dtype());
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return Tensor(a.shape(), std::move(out), a.dtype());
}

Tensor ones_like(const Tensor& a) { return Tensor::full(a.shape(), 1.0, a.dtype()); }
Tensor zeros_like(const Tensor& a) { return Tensor::zeros(a.shape(), a.dtype()); }

double sum(const Tensor& a) { return kernels::active().sum(a.data(), a.numel()); }

double dot(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) mismatch("dot", a.shape(), b.shape());
  return kernels::active().dot(a.data(), b.data(), a.numel());
}

}  // namespace convbn
