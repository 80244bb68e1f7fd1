// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Inner-loop kernels over contiguous f64 buffers. Every backend implements
// the same table; the scalar table is the reference. Convolution and
// elementwise kernels in every backend reproduce the reference summation
// order exactly, so their results are bitwise identical to scalar. Only the
// plain reductions (sum, dot) reassociate across lanes.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace convbn::kernels {

enum class BinaryOp : std::uint8_t { Add, Sub, Mul, Div };

struct Conv2dGeometry {
  std::int64_t batch = 0;
  std::int64_t in_channels = 0;
  std::int64_t in_h = 0;
  std::int64_t in_w = 0;
  std::int64_t out_channels = 0;
  std::int64_t kernel_h = 0;
  std::int64_t kernel_w = 0;
  std::int64_t stride_h = 1;
  std::int64_t stride_w = 1;
  std::int64_t pad_h = 0;
  std::int64_t pad_w = 0;
  std::int64_t out_h = 0;
  std::int64_t out_w = 0;
};

struct KernelTable {
  std::string_view name;

  // y[n,o,i,j] = (sum over c,u,v of w*x) + bias[o]; bias may be null.
  void (*conv2d_forward)(const Conv2dGeometry& g, const double* x, const double* w,
                         const double* bias, double* y);
  // dx[n,c,y,x] = sum over o,u,v of w[o,c,u,v] * dy[n,o,i,j].
  void (*conv2d_backward_data)(const Conv2dGeometry& g, const double* dy, const double* w,
                               double* dx);
  // dw[o,c,u,v] = sum over n,i,j of dy[n,o,i,j] * x[n,c,...].
  void (*conv2d_backward_weight)(const Conv2dGeometry& g, const double* x, const double* dy,
                                 double* dw);
  // out[n,c,k] = (in[n,c,k] + shift[c]) * scale[c] + offset[c].
  void (*channel_affine)(const double* in, const double* shift, const double* scale,
                         const double* offset, double* out, std::size_t outer,
                         std::size_t channels, std::size_t inner);
  void (*binary)(BinaryOp op, const double* a, const double* b, double* out, std::size_t n);
  double (*sum)(const double* a, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
};

enum class Backend : std::uint8_t { Auto, Scalar, Avx2, Neon };

const KernelTable& scalar_table();
/// Null when the backend was not compiled in or the CPU lacks the extension.
const KernelTable* avx2_table();
const KernelTable* neon_table();

/// Tables usable on this machine, scalar first.
std::vector<const KernelTable*> available_tables();

/// Active table. Chosen on first use: the CONVBN_KERNELS environment variable
/// (scalar|avx2|neon) when set, otherwise the widest supported backend.
const KernelTable& active();
void select(Backend backend);
Backend parse_backend(std::string_view name);

}  // namespace convbn::kernels
