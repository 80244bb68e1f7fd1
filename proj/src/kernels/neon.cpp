// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// AArch64 NEON kernels for the elementwise and reduction entries. The
// convolutions reuse the scalar reference.

#include <arm_neon.h>

#include "convbn/kernels.hpp"

namespace convbn::kernels {
namespace {

void channel_affine(const double* in, const double* shift, const double* scale,
                    const double* offset, double* out, std::size_t outer, std::size_t channels,
                    std::size_t inner) {
  for (std::size_t n = 0; n < outer; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const float64x2_t s = vdupq_n_f64(shift[c]);
      const float64x2_t k = vdupq_n_f64(scale[c]);
      const float64x2_t b = vdupq_n_f64(offset[c]);
      std::size_t i = 0;
      for (; i + 2 <= inner; i += 2) {
        const float64x2_t v = vld1q_f64(in + i);
        vst1q_f64(out + i, vaddq_f64(vmulq_f64(vaddq_f64(v, s), k), b));
      }
      for (; i < inner; ++i) out[i] = (in[i] + shift[c]) * scale[c] + offset[c];
      in += inner;
      out += inner;
    }
  }
}

void binary(BinaryOp op, const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t x = vld1q_f64(a + i);
    const float64x2_t y = vld1q_f64(b + i);
    float64x2_t r;
    switch (op) {
      case BinaryOp::Add: r = vaddq_f64(x, y); break;
      case BinaryOp::Sub: r = vsubq_f64(x, y); break;
      case BinaryOp::Mul: r = vmulq_f64(x, y); break;
      default: r = vdivq_f64(x, y); break;
    }
    vst1q_f64(out + i, r);
  }
  for (; i < n; ++i) {
    switch (op) {
      case BinaryOp::Add: out[i] = a[i] + b[i]; break;
      case BinaryOp::Sub: out[i] = a[i] - b[i]; break;
      case BinaryOp::Mul: out[i] = a[i] * b[i]; break;
      default: out[i] = a[i] / b[i]; break;
    }
  }
}

double sum(const double* a, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vld1q_f64(a + i));
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i];
  return (vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1)) + tail;
}

double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) acc = vaddq_f64(acc, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return (vgetq_lane_f64(acc, 0) + vgetq_lane_f64(acc, 1)) + tail;
}

}  // namespace

const KernelTable* neon_table() {
  static const KernelTable table = [] {
    KernelTable t = scalar_table();
    t.name = "neon";
    t.channel_affine = channel_affine;
    t.binary = binary;
    t.sum = sum;
    t.dot = dot;
    return t;
  }();
  return &table;
}

}  // namespace convbn::kernels
