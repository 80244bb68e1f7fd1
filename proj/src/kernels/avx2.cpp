// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// AVX2 kernels (compiled with -mavx2, no FMA). Convolutions work on a
// zero-padded copy of their input so the inner loops are branch-free. Each
// lane accumulates in the same order as the scalar reference; the extra
// terms contributed by padding are exact zeros, which leave an accumulator
// that starts at +0.0 unchanged, so results match scalar bit for bit.

#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "convbn/kernels.hpp"

namespace convbn::kernels {
namespace {

using i64 = std::int64_t;

inline __m256d load_strided(const double* p, i64 stride) {
  if (stride == 1) return _mm256_loadu_pd(p);
  return _mm256_set_pd(p[3 * stride], p[2 * stride], p[stride], p[0]);
}

// x padded by (pad_h, pad_w) on each side, layout NCHW.
std::vector<double> pad_input(const Conv2dGeometry& g, const double* x, i64 hp, i64 wp) {
  std::vector<double> xp(static_cast<std::size_t>(g.batch * g.in_channels * hp * wp), 0.0);
  for (i64 nc = 0; nc < g.batch * g.in_channels; ++nc) {
    for (i64 r = 0; r < g.in_h; ++r) {
      std::copy_n(x + (nc * g.in_h + r) * g.in_w, g.in_w,
                  xp.data() + (nc * hp + r + g.pad_h) * wp + g.pad_w);
    }
  }
  return xp;
}

// Computes output channels [o, o+Q) for one output row.
template <int Q>
void forward_row(const Conv2dGeometry& g, const double* xp_n, i64 hp, i64 wp, const double* w,
                 const double* bias, i64 o, i64 i, double* y_n) {
  const i64 ksize = g.kernel_h * g.kernel_w;
  const i64 w_per_out = g.in_channels * ksize;
  const i64 out_plane = g.out_h * g.out_w;
  i64 j = 0;
  for (; j + 4 <= g.out_w; j += 4) {
    __m256d acc[Q];
    for (int q = 0; q < Q; ++q) acc[q] = _mm256_setzero_pd();
    for (i64 c = 0; c < g.in_channels; ++c) {
      for (i64 u = 0; u < g.kernel_h; ++u) {
        const double* row = xp_n + (c * hp + i * g.stride_h + u) * wp + j * g.stride_w;
        const double* wk = w + o * w_per_out + c * ksize + u * g.kernel_w;
        for (i64 v = 0; v < g.kernel_w; ++v) {
          const __m256d xv = load_strided(row + v, g.stride_w);
          for (int q = 0; q < Q; ++q) {
            const __m256d wv = _mm256_broadcast_sd(wk + q * w_per_out + v);
            acc[q] = _mm256_add_pd(acc[q], _mm256_mul_pd(wv, xv));
          }
        }
      }
    }
    for (int q = 0; q < Q; ++q) {
      __m256d r = acc[q];
      if (bias) r = _mm256_add_pd(r, _mm256_broadcast_sd(bias + o + q));
      _mm256_storeu_pd(y_n + (o + q) * out_plane + i * g.out_w + j, r);
    }
  }
  for (; j < g.out_w; ++j) {
    for (int q = 0; q < Q; ++q) {
      const double* wo = w + (o + q) * w_per_out;
      double acc = 0.0;
      for (i64 c = 0; c < g.in_channels; ++c) {
        for (i64 u = 0; u < g.kernel_h; ++u) {
          const double* row = xp_n + (c * hp + i * g.stride_h + u) * wp + j * g.stride_w;
          for (i64 v = 0; v < g.kernel_w; ++v) acc += wo[(c * g.kernel_h + u) * g.kernel_w + v] * row[v];
        }
      }
      y_n[(o + q) * out_plane + i * g.out_w + j] = bias ? acc + bias[o + q] : acc;
    }
  }
}

void conv2d_forward(const Conv2dGeometry& g, const double* x, const double* w,
                    const double* bias, double* y) {
  const i64 hp = g.in_h + 2 * g.pad_h;
  const i64 wp = g.in_w + 2 * g.pad_w;
  const auto xp = pad_input(g, x, hp, wp);
  for (i64 n = 0; n < g.batch; ++n) {
    const double* xp_n = xp.data() + n * g.in_channels * hp * wp;
    double* y_n = y + n * g.out_channels * g.out_h * g.out_w;
    for (i64 i = 0; i < g.out_h; ++i) {
      i64 o = 0;
      for (; o + 4 <= g.out_channels; o += 4) forward_row<4>(g, xp_n, hp, wp, w, bias, o, i, y_n);
      for (; o < g.out_channels; ++o) forward_row<1>(g, xp_n, hp, wp, w, bias, o, i, y_n);
    }
  }
}

// Input channels [c, c+Q) for one input row, gathering from the dilated,
// padded gradient `dyd` of size [N, C_out, hd, wd].
template <int Q>
void backward_data_row(const Conv2dGeometry& g, const double* dyd_n, i64 hd, i64 wd,
                       const double* w, i64 c, i64 yy, double* dx_n) {
  const i64 ksize = g.kernel_h * g.kernel_w;
  const i64 in_plane = g.in_h * g.in_w;
  const i64 row_base = yy + g.pad_h + g.kernel_h - 1;
  const i64 col_base = g.pad_w + g.kernel_w - 1;
  i64 xx = 0;
  for (; xx + 4 <= g.in_w; xx += 4) {
    __m256d acc[Q];
    for (int q = 0; q < Q; ++q) acc[q] = _mm256_setzero_pd();
    for (i64 o = 0; o < g.out_channels; ++o) {
      const double* wk = w + (o * g.in_channels + c) * ksize;
      for (i64 u = 0; u < g.kernel_h; ++u) {
        const double* row = dyd_n + (o * hd + row_base - u) * wd + xx + col_base;
        for (i64 v = 0; v < g.kernel_w; ++v) {
          const __m256d dv = _mm256_loadu_pd(row - v);
          for (int q = 0; q < Q; ++q) {
            const __m256d wv = _mm256_broadcast_sd(wk + q * ksize + u * g.kernel_w + v);
            acc[q] = _mm256_add_pd(acc[q], _mm256_mul_pd(wv, dv));
          }
        }
      }
    }
    for (int q = 0; q < Q; ++q) _mm256_storeu_pd(dx_n + (c + q) * in_plane + yy * g.in_w + xx, acc[q]);
  }
  for (; xx < g.in_w; ++xx) {
    for (int q = 0; q < Q; ++q) {
      double acc = 0.0;
      for (i64 o = 0; o < g.out_channels; ++o) {
        const double* wk = w + (o * g.in_channels + c + q) * ksize;
        for (i64 u = 0; u < g.kernel_h; ++u) {
          const double* row = dyd_n + (o * hd + row_base - u) * wd + xx + col_base;
          for (i64 v = 0; v < g.kernel_w; ++v) acc += wk[u * g.kernel_w + v] * row[-v];
        }
      }
      dx_n[(c + q) * in_plane + yy * g.in_w + xx] = acc;
    }
  }
}

void conv2d_backward_data(const Conv2dGeometry& g, const double* dy, const double* w,
                          double* dx) {
  const i64 hd = std::max((g.out_h - 1) * g.stride_h + g.kernel_h, g.in_h + g.pad_h + g.kernel_h - 1);
  const i64 wd = std::max((g.out_w - 1) * g.stride_w + g.kernel_w, g.in_w + g.pad_w + g.kernel_w - 1);
  std::vector<double> dyd(static_cast<std::size_t>(g.batch * g.out_channels * hd * wd), 0.0);
  for (i64 no = 0; no < g.batch * g.out_channels; ++no) {
    for (i64 i = 0; i < g.out_h; ++i) {
      for (i64 j = 0; j < g.out_w; ++j) {
        dyd[static_cast<std::size_t>((no * hd + g.kernel_h - 1 + i * g.stride_h) * wd + g.kernel_w - 1 +
                                     j * g.stride_w)] = dy[(no * g.out_h + i) * g.out_w + j];
      }
    }
  }
  for (i64 n = 0; n < g.batch; ++n) {
    const double* dyd_n = dyd.data() + n * g.out_channels * hd * wd;
    double* dx_n = dx + n * g.in_channels * g.in_h * g.in_w;
    for (i64 yy = 0; yy < g.in_h; ++yy) {
      i64 c = 0;
      for (; c + 4 <= g.in_channels; c += 4) backward_data_row<4>(g, dyd_n, hd, wd, w, c, yy, dx_n);
      for (; c < g.in_channels; ++c) backward_data_row<1>(g, dyd_n, hd, wd, w, c, yy, dx_n);
    }
  }
}

// Output channels [o, o+Q), input channels [c, c+4) against the padded
// channels-last copy `xt` of size [N, hp, wp, cp].
template <int Q>
void backward_weight_block(const Conv2dGeometry& g, const double* xt, i64 hp, i64 wp, i64 cp,
                           const double* dy, i64 o, i64 c, double* dw) {
  const i64 out_plane = g.out_h * g.out_w;
  const i64 lanes = std::min<i64>(4, g.in_channels - c);
  for (i64 u = 0; u < g.kernel_h; ++u) {
    for (i64 v = 0; v < g.kernel_w; ++v) {
      __m256d acc[Q];
      for (int q = 0; q < Q; ++q) acc[q] = _mm256_setzero_pd();
      for (i64 n = 0; n < g.batch; ++n) {
        const double* dyn = dy + (n * g.out_channels + o) * out_plane;
        const double* xtn = xt + n * hp * wp * cp + c;
        for (i64 i = 0; i < g.out_h; ++i) {
          const double* xrow = xtn + ((i * g.stride_h + u) * wp + v) * cp;
          const double* dyrow = dyn + i * g.out_w;
          for (i64 j = 0; j < g.out_w; ++j) {
            const __m256d xv = _mm256_loadu_pd(xrow + j * g.stride_w * cp);
            for (int q = 0; q < Q; ++q) {
              const __m256d dv = _mm256_broadcast_sd(dyrow + q * out_plane + j);
              acc[q] = _mm256_add_pd(acc[q], _mm256_mul_pd(dv, xv));
            }
          }
        }
      }
      alignas(32) double lane[4];
      for (int q = 0; q < Q; ++q) {
        _mm256_store_pd(lane, acc[q]);
        for (i64 l = 0; l < lanes; ++l) {
          dw[(((o + q) * g.in_channels + c + l) * g.kernel_h + u) * g.kernel_w + v] = lane[l];
        }
      }
    }
  }
}

void conv2d_backward_weight(const Conv2dGeometry& g, const double* x, const double* dy,
                            double* dw) {
  const i64 hp = g.in_h + 2 * g.pad_h;
  const i64 wp = g.in_w + 2 * g.pad_w;
  const i64 cp = (g.in_channels + 3) / 4 * 4;
  std::vector<double> xt(static_cast<std::size_t>(g.batch * hp * wp * cp), 0.0);
  for (i64 n = 0; n < g.batch; ++n) {
    for (i64 c = 0; c < g.in_channels; ++c) {
      const double* src = x + (n * g.in_channels + c) * g.in_h * g.in_w;
      for (i64 r = 0; r < g.in_h; ++r) {
        double* dst = xt.data() + ((n * hp + r + g.pad_h) * wp + g.pad_w) * cp + c;
        for (i64 k = 0; k < g.in_w; ++k) dst[k * cp] = src[r * g.in_w + k];
      }
    }
  }
  for (i64 c = 0; c < g.in_channels; c += 4) {
    i64 o = 0;
    for (; o + 4 <= g.out_channels; o += 4) backward_weight_block<4>(g, xt.data(), hp, wp, cp, dy, o, c, dw);
    for (; o < g.out_channels; ++o) backward_weight_block<1>(g, xt.data(), hp, wp, cp, dy, o, c, dw);
  }
}

void channel_affine(const double* in, const double* shift, const double* scale,
                    const double* offset, double* out, std::size_t outer, std::size_t channels,
                    std::size_t inner) {
  for (std::size_t n = 0; n < outer; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const __m256d s = _mm256_broadcast_sd(shift + c);
      const __m256d k = _mm256_broadcast_sd(scale + c);
      const __m256d b = _mm256_broadcast_sd(offset + c);
      std::size_t i = 0;
      for (; i + 4 <= inner; i += 4) {
        const __m256d v = _mm256_loadu_pd(in + i);
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_mul_pd(_mm256_add_pd(v, s), k), b));
      }
      for (; i < inner; ++i) out[i] = (in[i] + shift[c]) * scale[c] + offset[c];
      in += inner;
      out += inner;
    }
  }
}

template <typename VecOp, typename ScalarOp>
void binary_loop(const double* a, const double* b, double* out, std::size_t n, VecOp vop,
                 ScalarOp sop) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, vop(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = sop(a[i], b[i]);
}

void binary(BinaryOp op, const double* a, const double* b, double* out, std::size_t n) {
  switch (op) {
    case BinaryOp::Add:
      binary_loop(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_add_pd(x, y); },
                  [](double x, double y) { return x + y; });
      break;
    case BinaryOp::Sub:
      binary_loop(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_sub_pd(x, y); },
                  [](double x, double y) { return x - y; });
      break;
    case BinaryOp::Mul:
      binary_loop(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_mul_pd(x, y); },
                  [](double x, double y) { return x * y; });
      break;
    case BinaryOp::Div:
      binary_loop(a, b, out, n, [](__m256d x, __m256d y) { return _mm256_div_pd(x, y); },
                  [](double x, double y) { return x / y; });
      break;
  }
}

double hsum(__m256d v) {
  alignas(32) double lane[4];
  _mm256_store_pd(lane, v);
  return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

double sum(const double* a, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(a + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(a + i + 4));
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i];
  return hsum(_mm256_add_pd(acc0, acc1)) + tail;
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return hsum(_mm256_add_pd(acc0, acc1)) + tail;
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{
      "avx2", conv2d_forward, conv2d_backward_data, conv2d_backward_weight,
      channel_affine, binary, sum, dot,
  };
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &table : nullptr;
}

}  // namespace convbn::kernels
