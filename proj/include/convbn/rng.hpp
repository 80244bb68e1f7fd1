// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "convbn/tensor.hpp"

namespace convbn {

/// SplitMix64 generator. The stream is fixed so seeds reproduce across
/// implementations:
///
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   return z ^ (z >> 31)
///
/// uniform() = (next_u64() >> 11) * 2^-53, in [0, 1).
/// normal() uses one Box-Muller draw per call: u1 = 1 - uniform(),
/// u2 = uniform(), sqrt(-2 ln u1) * cos(2 pi u2).
/// uniform_int(lo, hi) = lo + next_u64() % (hi - lo + 1).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  Tensor normal_tensor(const Shape& shape, double mean = 0.0, double stddev = 1.0,
                       DType dtype = DType::F64);
  Tensor uniform_tensor(const Shape& shape, double lo, double hi, DType dtype = DType::F64);

 private:
  std::uint64_t state_;
};

}  // namespace convbn
