// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "convbn/rng.hpp"

#include <cmath>
#include <numbers>

#include "convbn/errors.hpp"

namespace convbn {

std::uint64_t Rng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw InputError("uniform_int: empty range");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(next_u64() % span);
}

Tensor Rng::normal_tensor(const Shape& shape, double mean, double stddev, DType dtype) {
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = normal(mean, stddev);
  return Tensor(shape, std::move(v), dtype);
}

Tensor Rng::uniform_tensor(const Shape& shape, double lo, double hi, DType dtype) {
  std::vector<double> v(shape.numel());
  for (auto& x : v) x = uniform(lo, hi);
  return Tensor(shape, std::move(v), dtype);
}

}  // namespace convbn
