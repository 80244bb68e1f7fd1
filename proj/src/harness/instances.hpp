// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>

#include "convbn/nn_ops.hpp"
#include "convbn/rng.hpp"

namespace convbn::harness::detail {

struct BlockInstance {
  Tensor x;
  nn::ConvParams conv;
  nn::BNParams bn;

  std::string describe() const;
};

/// Shapes up to [2, c_max, hw_max, hw_max], kernels up to 3x3, stride <= 2.
BlockInstance random_block(Rng& rng, std::int64_t c_max, std::int64_t hw_max);

/// Normwise relative difference with an absolute floor on the scale.
inline double rel_error(const Tensor& a, const Tensor& b, double floor = 0.0) {
  double diff = 0.0, scale = floor;
  for (std::size_t k = 0; k < a.numel(); ++k) {
    diff = std::max(diff, std::abs(a[k] - b[k]));
    scale = std::max({scale, std::abs(a[k]), std::abs(b[k])});
  }
  if (diff == 0.0) return 0.0;
  return scale > 0.0 ? diff / scale : INFINITY;
}

/// Central differences of f, one component at a time.
Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& at, double h);

double inner(const Tensor& a, const Tensor& b);

}  // namespace convbn::harness::detail
