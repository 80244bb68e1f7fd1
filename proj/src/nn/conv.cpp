// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <string>

#include "convbn/errors.hpp"
#include "convbn/nn_ops.hpp"

namespace convbn::nn {
namespace {

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.rank() != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                     s.str());
  }
}

}  // namespace

kernels::Conv2dGeometry conv2d_geometry(const Shape& x, const Shape& weight, Pair stride,
                                        Pair padding) {
  require_rank(x, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (x[1] != weight[1]) {
    throw ShapeError("conv2d channel mismatch: input " + x.str() + " vs weight " + weight.str());
  }
  if (weight[2] < 1 || weight[3] < 1) throw ShapeError("conv2d kernel extents must be >= 1");
  if (stride[0] < 1 || stride[1] < 1) throw ShapeError("conv2d stride must be positive");
  if (padding[0] < 0 || padding[1] < 0) throw ShapeError("conv2d padding must be non-negative");
  kernels::Conv2dGeometry g;
  g.batch = x[0];
  g.in_channels = x[1];
  g.in_h = x[2];
  g.in_w = x[3];
  g.out_channels = weight[0];
  g.kernel_h = weight[2];
  g.kernel_w = weight[3];
  g.stride_h = stride[0];
  g.stride_w = stride[1];
  g.pad_h = padding[0];
  g.pad_w = padding[1];
  const auto span_h = g.in_h + 2 * g.pad_h - g.kernel_h;
  const auto span_w = g.in_w + 2 * g.pad_w - g.kernel_w;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d output extent would be non-positive for input " + x.str() +
                     " and weight " + weight.str());
  }
  g.out_h = span_h / g.stride_h + 1;
  g.out_w = span_w / g.stride_w + 1;
  return g;
}

Shape conv2d_output_shape(const Shape& x, const ConvParams& p) {
  const auto g = conv2d_geometry(x, p.weight.shape(), p.stride, p.padding);
  return Shape{g.batch, g.out_channels, g.out_h, g.out_w};
}

Tensor conv2d_forward(const Tensor& x, const ConvParams& p) {
  const auto g = conv2d_geometry(x.shape(), p.weight.shape(), p.stride, p.padding);
  if (p.bias && p.bias->shape() != Shape{g.out_channels}) {
    throw ShapeError("conv2d bias shape " + p.bias->shape().str() + " does not match C_out " +
                     std::to_string(g.out_channels));
  }
  std::vector<double> y(static_cast<std::size_t>(g.batch * g.out_channels * g.out_h * g.out_w));
  kernels::active().conv2d_forward(g, x.data(), p.weight.data(), p.bias ? p.bias->data() : nullptr,
                                   y.data());
  return Tensor(Shape{g.batch, g.out_channels, g.out_h, g.out_w}, std::move(y),
                promote(x.dtype(), p.weight.dtype()));
}

Tensor conv2d_backward_data(const Shape& x_shape, const ConvParams& p, const Tensor& dy) {
  const auto g = conv2d_geometry(x_shape, p.weight.shape(), p.stride, p.padding);
  if (dy.shape() != Shape{g.batch, g.out_channels, g.out_h, g.out_w}) {
    throw ShapeError("conv2d backward: dY shape " + dy.shape().str() + " does not match output");
  }
  std::vector<double> dx(x_shape.numel());
  kernels::active().conv2d_backward_data(g, dy.data(), p.weight.data(), dx.data());
  return Tensor(x_shape, std::move(dx), promote(dy.dtype(), p.weight.dtype()));
}

Tensor conv2d_backward_weight(const Tensor& x, const ConvParams& p, const Tensor& dy) {
  const auto g = conv2d_geometry(x.shape(), p.weight.shape(), p.stride, p.padding);
  if (dy.shape() != Shape{g.batch, g.out_channels, g.out_h, g.out_w}) {
    throw ShapeError("conv2d backward: dY shape " + dy.shape().str() + " does not match output");
  }
  std::vector<double> dw(p.weight.numel());
  kernels::active().conv2d_backward_weight(g, x.data(), dy.data(), dw.data());
  return Tensor(p.weight.shape(), std::move(dw), promote(x.dtype(), dy.dtype()));
}

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& dy) {
  return {conv2d_backward_data(x.shape(), p, dy), conv2d_backward_weight(x, p, dy),
          channel_sum(dy)};
}

}  // namespace convbn::nn
