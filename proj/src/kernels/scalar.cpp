// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reference kernels. Loop orders here define the summation order every other
// backend must reproduce.

#include "convbn/kernels.hpp"

namespace convbn::kernels {
namespace {

void conv2d_forward(const Conv2dGeometry& g, const double* x, const double* w,
                    const double* bias, double* y) {
  const std::int64_t in_plane = g.in_h * g.in_w;
  const std::int64_t w_per_out = g.in_channels * g.kernel_h * g.kernel_w;
  for (std::int64_t n = 0; n < g.batch; ++n) {
    const double* xn = x + n * g.in_channels * in_plane;
    for (std::int64_t o = 0; o < g.out_channels; ++o) {
      const double* wo = w + o * w_per_out;
      for (std::int64_t i = 0; i < g.out_h; ++i) {
        for (std::int64_t j = 0; j < g.out_w; ++j) {
          double acc = 0.0;
          for (std::int64_t c = 0; c < g.in_channels; ++c) {
            for (std::int64_t u = 0; u < g.kernel_h; ++u) {
              const std::int64_t yy = i * g.stride_h - g.pad_h + u;
              if (yy < 0 || yy >= g.in_h) continue;
              for (std::int64_t v = 0; v < g.kernel_w; ++v) {
                const std::int64_t xx = j * g.stride_w - g.pad_w + v;
                if (xx < 0 || xx >= g.in_w) continue;
                acc += wo[(c * g.kernel_h + u) * g.kernel_w + v] *
                       xn[c * in_plane + yy * g.in_w + xx];
              }
            }
          }
          *y++ = bias ? acc + bias[o] : acc;
        }
      }
    }
  }
}

void conv2d_backward_data(const Conv2dGeometry& g, const double* dy, const double* w,
                          double* dx) {
  const std::int64_t out_plane = g.out_h * g.out_w;
  for (std::int64_t n = 0; n < g.batch; ++n) {
    const double* dyn = dy + n * g.out_channels * out_plane;
    for (std::int64_t c = 0; c < g.in_channels; ++c) {
      for (std::int64_t yy = 0; yy < g.in_h; ++yy) {
        for (std::int64_t xx = 0; xx < g.in_w; ++xx) {
          double acc = 0.0;
          for (std::int64_t o = 0; o < g.out_channels; ++o) {
            const double* wo = w + (o * g.in_channels + c) * g.kernel_h * g.kernel_w;
            for (std::int64_t u = 0; u < g.kernel_h; ++u) {
              const std::int64_t ti = yy + g.pad_h - u;
              if (ti < 0 || ti % g.stride_h != 0) continue;
              const std::int64_t i = ti / g.stride_h;
              if (i >= g.out_h) continue;
              for (std::int64_t v = 0; v < g.kernel_w; ++v) {
                const std::int64_t tj = xx + g.pad_w - v;
                if (tj < 0 || tj % g.stride_w != 0) continue;
                const std::int64_t j = tj / g.stride_w;
                if (j >= g.out_w) continue;
                acc += wo[u * g.kernel_w + v] * dyn[o * out_plane + i * g.out_w + j];
              }
            }
          }
          *dx++ = acc;
        }
      }
    }
  }
}

void conv2d_backward_weight(const Conv2dGeometry& g, const double* x, const double* dy,
                            double* dw) {
  const std::int64_t in_plane = g.in_h * g.in_w;
  const std::int64_t out_plane = g.out_h * g.out_w;
  for (std::int64_t o = 0; o < g.out_channels; ++o) {
    for (std::int64_t c = 0; c < g.in_channels; ++c) {
      for (std::int64_t u = 0; u < g.kernel_h; ++u) {
        for (std::int64_t v = 0; v < g.kernel_w; ++v) {
          double acc = 0.0;
          for (std::int64_t n = 0; n < g.batch; ++n) {
            const double* xc = x + (n * g.in_channels + c) * in_plane;
            const double* dyo = dy + (n * g.out_channels + o) * out_plane;
            for (std::int64_t i = 0; i < g.out_h; ++i) {
              const std::int64_t yy = i * g.stride_h - g.pad_h + u;
              if (yy < 0 || yy >= g.in_h) continue;
              for (std::int64_t j = 0; j < g.out_w; ++j) {
                const std::int64_t xx = j * g.stride_w - g.pad_w + v;
                if (xx < 0 || xx >= g.in_w) continue;
                acc += dyo[i * g.out_w + j] * xc[yy * g.in_w + xx];
              }
            }
          }
          *dw++ = acc;
        }
      }
    }
  }
}

void channel_affine(const double* in, const double* shift, const double* scale,
                    const double* offset, double* out, std::size_t outer, std::size_t channels,
                    std::size_t inner) {
  for (std::size_t n = 0; n < outer; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double s = shift[c], k = scale[c], b = offset[c];
      for (std::size_t i = 0; i < inner; ++i) *out++ = (*in++ + s) * k + b;
    }
  }
}

void binary(BinaryOp op, const double* a, const double* b, double* out, std::size_t n) {
  switch (op) {
    case BinaryOp::Add:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
      break;
    case BinaryOp::Sub:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
      break;
    case BinaryOp::Mul:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
      break;
    case BinaryOp::Div:
      for (std::size_t i = 0; i < n; ++i) out[i] = a[i] / b[i];
      break;
  }
}

double sum(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{
      "scalar", conv2d_forward, conv2d_backward_data, conv2d_backward_weight,
      channel_affine, binary, sum, dot,
  };
  return table;
}

}  // namespace convbn::kernels
