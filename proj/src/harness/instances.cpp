// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "instances.hpp"

#include <sstream>

namespace convbn::harness::detail {

std::string BlockInstance::describe() const {
  std::ostringstream os;
  os << "conv x" << x.shape().str() << " w" << conv.weight.shape().str() << " stride " << conv.stride[0] << 'x'
     << conv.stride[1] << " pad " << conv.padding[0] << 'x' << conv.padding[1] << (conv.bias ? " bias" : " no-bias");
  return os.str();
}

BlockInstance random_block(Rng& rng, std::int64_t c_max, std::int64_t hw_max) {
  const std::int64_t n = rng.uniform_int(1, 2);
  const std::int64_t cin = rng.uniform_int(1, c_max);
  const std::int64_t cout = rng.uniform_int(1, c_max);
  const std::int64_t kh = rng.uniform_int(1, 3), kw = rng.uniform_int(1, 3);
  const std::int64_t sh = rng.uniform_int(1, 2), sw = rng.uniform_int(1, 2);
  const std::int64_t ph = rng.uniform_int(0, kh - 1), pw = rng.uniform_int(0, kw - 1);
  // At least two positions per channel so batch statistics are defined.
  const std::int64_t h = rng.uniform_int(std::max<std::int64_t>(kh, 2), hw_max);
  const std::int64_t w = rng.uniform_int(std::max<std::int64_t>(kw, 2), hw_max);
  BlockInstance b;
  b.x = rng.normal_tensor(Shape{n, cin, h, w});
  b.conv.weight = rng.normal_tensor(Shape{cout, cin, kh, kw}, 0.0, 0.5);
  if (rng.uniform() < 0.7) b.conv.bias = rng.normal_tensor(Shape{cout}, 0.0, 0.5);
  b.conv.stride = {sh, sw};
  b.conv.padding = {ph, pw};
  b.bn.gamma = rng.uniform_tensor(Shape{cout}, 0.5, 1.5);
  b.bn.beta = rng.normal_tensor(Shape{cout}, 0.0, 0.3);
  b.bn.running_mean = rng.normal_tensor(Shape{cout}, 0.0, 0.5);
  b.bn.running_var = rng.uniform_tensor(Shape{cout}, 0.5, 2.0);
  return b;
}

Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& at, double h) {
  std::vector<double> g(at.numel());
  auto v = at.to_vector();
  for (std::size_t k = 0; k < at.numel(); ++k) {
    const double orig = v[k];
    v[k] = orig + h;
    const double plus = f(Tensor(at.shape(), v, at.dtype()));
    v[k] = orig - h;
    const double minus = f(Tensor(at.shape(), v, at.dtype()));
    v[k] = orig;
    g[k] = (plus - minus) / (2.0 * h);
  }
  return Tensor(at.shape(), std::move(g));
}

double inner(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.numel(); ++k) acc += a[k] * b[k];
  return acc;
}

}  // namespace convbn::harness::detail
