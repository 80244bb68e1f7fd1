// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <string>

#include "convbn/errors.hpp"
#include "convbn/nn_ops.hpp"
#include "convbn/tensor_ops.hpp"

namespace convbn::nn {

ReluForward relu_forward(const Tensor& x) {
  std::vector<double> y(x.numel());
  auto mask = std::make_shared<std::vector<std::uint8_t>>(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool on = x[i] > 0.0;
    (*mask)[i] = on ? 1 : 0;
    y[i] = on ? x[i] : 0.0;
  }
  return {Tensor(x.shape(), std::move(y), x.dtype()), std::move(mask)};
}

Tensor relu_backward(const Tensor& dy, const Mask& mask) {
  if (!mask || mask->size() != dy.numel()) throw ShapeError("relu backward: mask size mismatch");
  std::vector<double> dx(dy.numel());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = (*mask)[i] ? dy[i] : 0.0;
  return Tensor(dy.shape(), std::move(dx), dy.dtype());
}

Tensor global_avg_pool_forward(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects [N, C, H, W], got " + x.shape().str());
  const auto nc = static_cast<std::size_t>(x.dim(0) * x.dim(1));
  const auto hw = static_cast<std::size_t>(x.dim(2) * x.dim(3));
  if (hw == 0) throw ShapeError("global_avg_pool over an empty spatial extent");
  const auto& k = kernels::active();
  std::vector<double> y(nc);
  for (std::size_t i = 0; i < nc; ++i) y[i] = k.sum(x.data() + i * hw, hw) / static_cast<double>(hw);
  return Tensor(Shape{x.dim(0), x.dim(1)}, std::move(y), x.dtype());
}

Tensor global_avg_pool_backward(const Tensor& dy, const Shape& x_shape) {
  if (x_shape.rank() != 4 || dy.shape() != Shape{x_shape[0], x_shape[1]}) {
    throw ShapeError("global_avg_pool backward: dY " + dy.shape().str() + " vs input " + x_shape.str());
  }
  const auto hw = static_cast<std::size_t>(x_shape[2] * x_shape[3]);
  std::vector<double> dx(x_shape.numel());
  for (std::size_t i = 0; i < dy.numel(); ++i) {
    std::fill_n(dx.begin() + static_cast<std::ptrdiff_t>(i * hw), hw, dy[i] / static_cast<double>(hw));
  }
  return Tensor(x_shape, std::move(dx), dy.dtype());
}

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1) ||
      bias.shape() != Shape{weight.dim(0)}) {
    throw ShapeError("linear: incompatible shapes x " + x.shape().str() + ", W " +
                     weight.shape().str() + ", b " + bias.shape().str());
  }
  const auto n = static_cast<std::size_t>(x.dim(0));
  const auto f = static_cast<std::size_t>(x.dim(1));
  const auto k_out = static_cast<std::size_t>(weight.dim(0));
  const auto& k = kernels::active();
  std::vector<double> y(n * k_out);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < k_out; ++o) {
      y[i * k_out + o] = k.dot(x.data() + i * f, weight.data() + o * f, f) + bias[o];
    }
  }
  return Tensor(Shape{x.dim(0), weight.dim(0)}, std::move(y), promote(x.dtype(), weight.dtype()));
}

LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy) {
  const auto n = static_cast<std::size_t>(x.dim(0));
  const auto f = static_cast<std::size_t>(x.dim(1));
  const auto k_out = static_cast<std::size_t>(weight.dim(0));
  if (dy.shape() != Shape{x.dim(0), weight.dim(0)}) {
    throw ShapeError("linear backward: dY " + dy.shape().str() + " does not match output");
  }
  std::vector<double> dx(n * f, 0.0), dw(k_out * f, 0.0), db(k_out, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < k_out; ++o) {
      const double g = dy[i * k_out + o];
      db[o] += g;
      for (std::size_t j = 0; j < f; ++j) {
        dx[i * f + j] += g * weight[o * f + j];
        dw[o * f + j] += g * x[i * f + j];
      }
    }
  }
  const DType dt = promote(x.dtype(), weight.dtype());
  return {Tensor(x.shape(), std::move(dx), dt), Tensor(weight.shape(), std::move(dw), dt),
          Tensor(Shape{weight.dim(0)}, std::move(db), dt)};
}

SoftmaxXent softmax_xent(const Tensor& logits, std::span<const std::int64_t> labels) {
  if (logits.rank() != 2 || static_cast<std::size_t>(logits.dim(0)) != labels.size()) {
    throw ShapeError("softmax_xent: logits " + logits.shape().str() + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const auto n = static_cast<std::size_t>(logits.dim(0));
  const auto k = static_cast<std::size_t>(logits.dim(1));
  if (n == 0) throw InputError("softmax_xent: empty batch");
  std::vector<double> grad(n * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw InputError("softmax_xent: label " + std::to_string(label) + " out of range [0, " +
                       std::to_string(k) + ")");
    }
    const double* row = logits.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double log_denom = std::log(denom);
    loss += log_denom - (row[label] - mx);
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(row[j] - mx - log_denom);
      grad[i * k + j] = (p - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) / static_cast<double>(n);
    }
  }
  return {loss / static_cast<double>(n), Tensor(logits.shape(), std::move(grad), logits.dtype())};
}

}  // namespace convbn::nn
