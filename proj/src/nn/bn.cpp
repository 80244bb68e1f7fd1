// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>

#include "convbn/errors.hpp"
#include "convbn/nn_ops.hpp"

namespace convbn::nn {
namespace {

struct Layout {
  std::size_t outer;
  std::size_t channels;
  std::size_t inner;
};

Layout layout_of(const Shape& s) {
  if (s.rank() != 4) throw ShapeError("expected an [N, C, H, W] tensor, got " + s.str());
  return {static_cast<std::size_t>(s[0]), static_cast<std::size_t>(s[1]),
          static_cast<std::size_t>(s[2] * s[3])};
}

void check_bn(const Shape& y, const BNParams& p) {
  const auto l = layout_of(y);
  const Shape expected{static_cast<std::int64_t>(l.channels)};
  for (const Tensor* t : {&p.gamma, &p.beta, &p.running_mean, &p.running_var}) {
    if (t->shape() != expected) {
      throw ShapeError("batch-norm parameter shape " + t->shape().str() +
                       " does not match channels of " + y.str());
    }
  }
  if (!(p.eps > 0.0)) throw DomainError("batch-norm eps must be positive");
}

std::vector<double> inv_std(const Tensor& var, double eps) {
  std::vector<double> out(var.numel());
  for (std::size_t c = 0; c < out.size(); ++c) {
    const double v = var[c] + eps;
    if (!(v > 0.0)) throw DomainError("rsqrt: non-positive variance + eps in channel " + std::to_string(c));
    out[c] = 1.0 / std::sqrt(v);
  }
  return out;
}

std::vector<double> negated(const Tensor& t) {
  std::vector<double> out(t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = -t[i];
  return out;
}

}  // namespace

Tensor channel_sum(const Tensor& t) {
  const auto l = layout_of(t.shape());
  const auto& k = kernels::active();
  std::vector<double> out(l.channels, 0.0);
  for (std::size_t n = 0; n < l.outer; ++n) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      out[c] += k.sum(t.data() + (n * l.channels + c) * l.inner, l.inner);
    }
  }
  return Tensor(Shape{static_cast<std::int64_t>(l.channels)}, std::move(out), t.dtype());
}

Tensor channel_dot(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("channel_dot shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  }
  const auto l = layout_of(a.shape());
  const auto& k = kernels::active();
  std::vector<double> out(l.channels, 0.0);
  for (std::size_t n = 0; n < l.outer; ++n) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t off = (n * l.channels + c) * l.inner;
      out[c] += k.dot(a.data() + off, b.data() + off, l.inner);
    }
  }
  return Tensor(Shape{static_cast<std::int64_t>(l.channels)}, std::move(out),
                promote(a.dtype(), b.dtype()));
}

Tensor channel_affine(const Tensor& t, std::span<const double> shift, std::span<const double> scale,
                      std::span<const double> offset, DType dtype) {
  const auto l = layout_of(t.shape());
  if (shift.size() != l.channels || scale.size() != l.channels || offset.size() != l.channels) {
    throw ShapeError("channel_affine coefficient count does not match channels of " +
                     t.shape().str());
  }
  std::vector<double> out(t.numel());
  kernels::active().channel_affine(t.data(), shift.data(), scale.data(), offset.data(), out.data(),
                                   l.outer, l.channels, l.inner);
  return Tensor(t.shape(), std::move(out), dtype);
}

Tensor bn_eval_forward(const Tensor& y, const BNParams& p) {
  check_bn(y.shape(), p);
  const auto inv = inv_std(p.running_var, p.eps);
  std::vector<double> coeff(inv.size());
  for (std::size_t c = 0; c < coeff.size(); ++c) coeff[c] = p.gamma[c] * inv[c];
  return channel_affine(y, negated(p.running_mean), coeff, p.beta.values(),
                        promote(y.dtype(), p.gamma.dtype()));
}

BNGrads bn_eval_backward(const Tensor& dz, const Tensor& y, const BNParams& p) {
  check_bn(y.shape(), p);
  if (dz.shape() != y.shape()) {
    throw ShapeError("bn backward: dZ " + dz.shape().str() + " vs Y " + y.shape().str());
  }
  const auto inv = inv_std(p.running_var, p.eps);
  const std::size_t channels = inv.size();
  std::vector<double> coeff(channels), zeros(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) coeff[c] = p.gamma[c] * inv[c];
  const DType dt = promote(dz.dtype(), p.gamma.dtype());
  const Tensor xhat = channel_affine(y, negated(p.running_mean), inv, zeros, DType::F64);
  return {channel_affine(dz, zeros, coeff, zeros, dt), channel_dot(dz, xhat).to(dt),
          channel_sum(dz)};
}

BNTrainForward bn_train_forward(const Tensor& y, const BNParams& p) {
  check_bn(y.shape(), p);
  const auto l = layout_of(y.shape());
  const std::size_t m = l.outer * l.inner;
  if (m == 0) throw DegenerateBatchError("batch-norm over zero elements per channel");
  const std::size_t channels = l.channels;
  const DType dt = promote(y.dtype(), p.gamma.dtype());

  const Tensor sums = channel_sum(y);
  std::vector<double> mean(channels), neg_mean(channels), ones(channels, 1.0), zeros(channels, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    mean[c] = sums[c] / static_cast<double>(m);
    neg_mean[c] = -mean[c];
  }
  const Tensor centered = channel_affine(y, neg_mean, ones, zeros, DType::F64);
  const Tensor sq = channel_dot(centered, centered);
  std::vector<double> var(channels);
  for (std::size_t c = 0; c < channels; ++c) var[c] = sq[c] / static_cast<double>(m);

  const Tensor var_t(Shape{static_cast<std::int64_t>(channels)}, var, DType::F64);
  const auto inv = inv_std(var_t, p.eps);
  std::vector<double> coeff(channels);
  for (std::size_t c = 0; c < channels; ++c) coeff[c] = p.gamma[c] * inv[c];

  std::vector<double> rm(channels), rv(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    rm[c] = p.running_mean[c] + p.momentum * (mean[c] - p.running_mean[c]);
    rv[c] = p.running_var[c] + p.momentum * (var[c] - p.running_var[c]);
  }
  const Shape cs{static_cast<std::int64_t>(channels)};
  BNTrainForward out{
      channel_affine(y, neg_mean, coeff, p.beta.values(), dt),
      {Tensor(cs, mean, dt), Tensor(cs, var, dt)},
      {Tensor(cs, std::move(rm), p.running_mean.dtype()),
       Tensor(cs, std::move(rv), p.running_var.dtype())},
      channel_affine(y, neg_mean, inv, zeros, dt),
  };
  return out;
}

BNGrads bn_train_backward_from_xhat(const Tensor& dz, const Tensor& xhat, const BatchStats& stats,
                                    const BNParams& p) {
  check_bn(xhat.shape(), p);
  if (dz.shape() != xhat.shape()) {
    throw ShapeError("bn backward: dZ " + dz.shape().str() + " vs x_hat " + xhat.shape().str());
  }
  const auto l = layout_of(dz.shape());
  const std::size_t m = l.outer * l.inner;
  if (m < 2) throw DegenerateBatchError("batch-norm backward needs at least 2 elements per channel");
  const auto inv = inv_std(stats.var, p.eps);
  const Tensor dbeta = channel_sum(dz);
  const Tensor dgamma = channel_dot(dz, xhat);
  const double inv_m = 1.0 / static_cast<double>(m);

  std::vector<double> dy(dz.numel());
  for (std::size_t n = 0; n < l.outer; ++n) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const double k = p.gamma[c] * inv[c];
      const double mean_dz = dbeta[c] * inv_m;
      const double mean_dzx = dgamma[c] * inv_m;
      const std::size_t off = (n * l.channels + c) * l.inner;
      for (std::size_t i = 0; i < l.inner; ++i) {
        dy[off + i] = k * (dz[off + i] - mean_dz - xhat[off + i] * mean_dzx);
      }
    }
  }
  const DType dt = promote(dz.dtype(), p.gamma.dtype());
  return {Tensor(dz.shape(), std::move(dy), dt), dgamma.to(dt), dbeta.to(dt)};
}

BNGrads bn_train_backward(const Tensor& dz, const Tensor& y, const BatchStats& stats,
                          const BNParams& p) {
  check_bn(y.shape(), p);
  const auto inv = inv_std(stats.var, p.eps);
  std::vector<double> zeros(inv.size(), 0.0);
  const Tensor xhat = channel_affine(y, negated(stats.mean), inv, zeros, DType::F64);
  return bn_train_backward_from_xhat(dz, xhat, stats, p);
}

}  // namespace convbn::nn
