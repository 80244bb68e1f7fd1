// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "convbn/kernels.hpp"
#include "convbn/tensor.hpp"

namespace convbn {

/// True when `from` can be replicated to `to` under right-aligned broadcasting.
bool broadcastable(const Shape& from, const Shape& to);

/// Replicates t to the target shape. Throws ShapeError naming both shapes.
Tensor broadcast_to(const Tensor& t, const Shape& target);

/// Sums t over every broadcast axis; the adjoint of broadcast_to.
Tensor reduce_to(const Tensor& t, const Shape& target);

using kernels::BinaryOp;

/// Elementwise binary op after implicit broadcast of both operands.
/// Div by an exact zero throws DomainError.
Tensor elementwise(BinaryOp op, const Tensor& a, const Tensor& b);
/// 1/sqrt(x); throws DomainError for any x <= 0.
Tensor rsqrt(const Tensor& a);

inline Tensor add(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Add, a, b); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Sub, a, b); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Mul, a, b); }
inline Tensor div(const Tensor& a, const Tensor& b) { return elementwise(BinaryOp::Div, a, b); }

Tensor scale(const Tensor& a, double s);
Tensor ones_like(const Tensor& a);
Tensor zeros_like(const Tensor& a);

double sum(const Tensor& a);
double dot(const Tensor& a, const Tensor& b);

}  // namespace convbn
