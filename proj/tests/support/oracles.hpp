// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Independent reference computations for tests. Nothing here calls the
// kernel tables, so a kernel bug cannot hide behind its own oracle.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "convbn/nn_ops.hpp"
#include "convbn/rng.hpp"
#include "convbn/tensor.hpp"

namespace convbn::testing {

inline std::size_t idx4(const Shape& s, std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
  return static_cast<std::size_t>(((a * s[1] + b) * s[2] + c) * s[3] + d);
}

/// Direct loop convolution with the reference summation order over (c, u, v).
inline Tensor brute_conv2d(const Tensor& x, const Tensor& w, const std::optional<Tensor>& b,
                           nn::Pair stride, nn::Pair pad) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  const std::int64_t ho = (xs[2] + 2 * pad[0] - ws[2]) / stride[0] + 1;
  const std::int64_t wo = (xs[3] + 2 * pad[1] - ws[3]) / stride[1] + 1;
  const Shape ys{xs[0], ws[0], ho, wo};
  std::vector<double> y(ys.numel());
  for (std::int64_t n = 0; n < xs[0]; ++n)
    for (std::int64_t o = 0; o < ws[0]; ++o)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
          double acc = 0.0;
          for (std::int64_t c = 0; c < xs[1]; ++c)
            for (std::int64_t u = 0; u < ws[2]; ++u)
              for (std::int64_t v = 0; v < ws[3]; ++v) {
                const std::int64_t r = i * stride[0] - pad[0] + u;
                const std::int64_t q = j * stride[1] - pad[1] + v;
                if (r < 0 || r >= xs[2] || q < 0 || q >= xs[3]) continue;
                acc += w[idx4(ws, o, c, u, v)] * x[idx4(xs, n, c, r, q)];
              }
          y[idx4(ys, n, o, i, j)] = b ? acc + (*b)[static_cast<std::size_t>(o)] : acc;
        }
  return Tensor(ys, std::move(y), x.dtype());
}

inline Tensor with_value(const Tensor& t, std::size_t flat, double v) {
  auto values = t.to_vector();
  values[flat] = v;
  return Tensor(t.shape(), std::move(values), t.dtype());
}

/// Central differences of a scalar function, one component at a time.
inline Tensor finite_difference(const std::function<double(const Tensor&)>& f, const Tensor& at,
                                double h = 1e-5) {
  std::vector<double> g(at.numel());
  for (std::size_t k = 0; k < at.numel(); ++k) {
    const double plus = f(with_value(at, k, at[k] + h));
    const double minus = f(with_value(at, k, at[k] - h));
    g[k] = (plus - minus) / (2.0 * h);
  }
  return Tensor(at.shape(), std::move(g));
}

/// Plain loop dot product, used as the projection loss sum(r * out).
inline double loop_dot(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) acc += a[k] * b[k];
  return acc;
}

/// Normwise relative error with an absolute floor for near-zero gradients.
inline double grad_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-8) {
  double diff = 0.0, scale = floor;
  for (std::size_t k = 0; k < analytic.numel(); ++k) {
    diff = std::max(diff, std::abs(analytic[k] - numeric[k]));
    scale = std::max({scale, std::abs(analytic[k]), std::abs(numeric[k])});
  }
  return diff / scale;
}

struct RandomBlock {
  Tensor x;
  nn::ConvParams conv;
  nn::BNParams bn;
};

/// Random block with shapes up to [2, c_max, hw_max, hw_max] and kernels up to 3x3.
inline RandomBlock random_block(Rng& rng, std::int64_t c_max = 8, std::int64_t hw_max = 16,
                                bool allow_no_bias = true) {
  const std::int64_t n = rng.uniform_int(1, 2);
  const std::int64_t cin = rng.uniform_int(1, c_max);
  const std::int64_t cout = rng.uniform_int(1, c_max);
  const std::int64_t kh = rng.uniform_int(1, 3), kw = rng.uniform_int(1, 3);
  const std::int64_t sh = rng.uniform_int(1, 2), sw = rng.uniform_int(1, 2);
  const std::int64_t ph = rng.uniform_int(0, kh - 1), pw = rng.uniform_int(0, kw - 1);
  const std::int64_t h = rng.uniform_int(kh, hw_max), w = rng.uniform_int(kw, hw_max);
  RandomBlock r;
  r.x = rng.normal_tensor(Shape{n, cin, h, w});
  r.conv.weight = rng.normal_tensor(Shape{cout, cin, kh, kw}, 0.0, 0.5);
  if (!allow_no_bias || rng.uniform() < 0.7) r.conv.bias = rng.normal_tensor(Shape{cout}, 0.0, 0.5);
  r.conv.stride = {sh, sw};
  r.conv.padding = {ph, pw};
  r.bn.gamma = rng.uniform_tensor(Shape{cout}, 0.5, 1.5);
  r.bn.beta = rng.normal_tensor(Shape{cout}, 0.0, 0.3);
  r.bn.running_mean = rng.normal_tensor(Shape{cout}, 0.0, 0.5);
  r.bn.running_var = rng.uniform_tensor(Shape{cout}, 0.5, 2.0);
  return r;
}

}  // namespace convbn::testing
