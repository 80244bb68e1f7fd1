// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "convbn/kernels.hpp"
#include "convbn/tensor.hpp"

namespace convbn::nn {

inline constexpr double kDefaultEps = 1e-5;
inline constexpr double kDefaultMomentum = 0.1;

using Pair = std::array<std::int64_t, 2>;

/// weight [C_out, C_in, k_h, k_w]; bias [C_out] or absent (treated as zeros).
struct ConvParams {
  Tensor weight;
  std::optional<Tensor> bias;
  Pair stride{1, 1};
  Pair padding{0, 0};

  std::int64_t out_channels() const { return weight.dim(0); }
  std::int64_t in_channels() const { return weight.dim(1); }
};

/// Per-channel affine parameters and tracked statistics, all [C].
struct BNParams {
  Tensor gamma;
  Tensor beta;
  Tensor running_mean;
  Tensor running_var;
  double eps = kDefaultEps;
  double momentum = kDefaultMomentum;

  std::int64_t channels() const { return gamma.dim(0); }
};

/// Biased per-channel batch moments over (N, H, W).
struct BatchStats {
  Tensor mean;
  Tensor var;
};

struct RunningStats {
  Tensor mean;
  Tensor var;
};

// ---- convolution -----------------------------------------------------------

kernels::Conv2dGeometry conv2d_geometry(const Shape& x, const Shape& weight, Pair stride,
                                        Pair padding);
Shape conv2d_output_shape(const Shape& x, const ConvParams& p);

/// Cross-correlation: y[n,o,i,j] = b[o] + sum_{c,u,v} w[o,c,u,v] x[n,c,i*s-p+u,j*s-p+v].
Tensor conv2d_forward(const Tensor& x, const ConvParams& p);

/// Transposed convolution of dy with p.weight (the input gradient).
Tensor conv2d_backward_data(const Shape& x_shape, const ConvParams& p, const Tensor& dy);
Tensor conv2d_backward_weight(const Tensor& x, const ConvParams& p, const Tensor& dy);

struct ConvGrads {
  Tensor dx;
  Tensor dweight;
  Tensor dbias;
};

ConvGrads conv2d_backward(const Tensor& x, const ConvParams& p, const Tensor& dy);

// ---- per-channel helpers over [N, C, H, W] ----------------------------------

Tensor channel_sum(const Tensor& t);
Tensor channel_dot(const Tensor& a, const Tensor& b);
/// (t + shift[c]) * scale[c] + offset[c]; the three vectors are [C].
Tensor channel_affine(const Tensor& t, std::span<const double> shift, std::span<const double> scale,
                      std::span<const double> offset, DType dtype);

// ---- batch normalization ---------------------------------------------------

/// Z = gamma (Y - running_mean) / sqrt(running_var + eps) + beta.
Tensor bn_eval_forward(const Tensor& y, const BNParams& p);

struct BNGrads {
  Tensor dy;
  Tensor dgamma;
  Tensor dbeta;
};

BNGrads bn_eval_backward(const Tensor& dz, const Tensor& y, const BNParams& p);

struct BNTrainForward {
  Tensor z;
  BatchStats stats;
  RunningStats running;  // updated, inputs untouched
  Tensor xhat;           // (Y - mean) / sqrt(var + eps)
};

/// Normalizes with batch moments; running stats follow r + momentum * (batch - r).
BNTrainForward bn_train_forward(const Tensor& y, const BNParams& p);

BNGrads bn_train_backward(const Tensor& dz, const Tensor& y, const BatchStats& stats,
                          const BNParams& p);
BNGrads bn_train_backward_from_xhat(const Tensor& dz, const Tensor& xhat, const BatchStats& stats,
                                    const BNParams& p);

// ---- auxiliary layers ------------------------------------------------------

using Mask = std::shared_ptr<const std::vector<std::uint8_t>>;

struct ReluForward {
  Tensor y;
  Mask mask;  // 1 where input > 0
};

ReluForward relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& dy, const Mask& mask);

/// [N, C, H, W] -> [N, C].
Tensor global_avg_pool_forward(const Tensor& x);
Tensor global_avg_pool_backward(const Tensor& dy, const Shape& x_shape);

/// y = x W^T + b with x [N, F], W [K, F], b [K].
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct LinearGrads {
  Tensor dx;
  Tensor dweight;
  Tensor dbias;
};

LinearGrads linear_backward(const Tensor& x, const Tensor& weight, const Tensor& dy);

struct SoftmaxXent {
  double loss;     // mean over the batch
  Tensor dlogits;  // gradient of the mean loss
};

SoftmaxXent softmax_xent(const Tensor& logits, std::span<const std::int64_t> labels);

}  // namespace convbn::nn
