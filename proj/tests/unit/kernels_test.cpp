// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Every available SIMD table against the scalar reference. Convolutions,
// channel_affine and binary keep the scalar summation order and must match
// bit for bit; sum and dot reassociate and match to a tolerance.

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "convbn/kernels.hpp"
#include "convbn/rng.hpp"

namespace convbn::kernels {
namespace {

std::vector<double> random_values(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Conv2dGeometry random_geometry(Rng& rng) {
  Conv2dGeometry g;
  g.batch = rng.uniform_int(1, 3);
  g.in_channels = rng.uniform_int(1, 9);
  g.out_channels = rng.uniform_int(1, 11);
  g.kernel_h = rng.uniform_int(1, 4);
  g.kernel_w = rng.uniform_int(1, 4);
  g.stride_h = rng.uniform_int(1, 3);
  g.stride_w = rng.uniform_int(1, 3);
  g.pad_h = rng.uniform_int(0, g.kernel_h);
  g.pad_w = rng.uniform_int(0, g.kernel_w);
  g.in_h = rng.uniform_int(g.kernel_h, 13);
  g.in_w = rng.uniform_int(g.kernel_w, 13);
  g.out_h = (g.in_h + 2 * g.pad_h - g.kernel_h) / g.stride_h + 1;
  g.out_w = (g.in_w + 2 * g.pad_w - g.kernel_w) / g.stride_w + 1;
  return g;
}

class KernelEquivalence : public ::testing::TestWithParam<const KernelTable*> {};

TEST_P(KernelEquivalence, ConvolutionsMatchScalarBitwise) {
  const KernelTable& ref = scalar_table();
  const KernelTable& simd = *GetParam();
  Rng rng(2024);
  for (int trial = 0; trial < 150; ++trial) {
    const Conv2dGeometry g = random_geometry(rng);
    const auto nx = static_cast<std::size_t>(g.batch * g.in_channels * g.in_h * g.in_w);
    const auto nw = static_cast<std::size_t>(g.out_channels * g.in_channels * g.kernel_h * g.kernel_w);
    const auto ny = static_cast<std::size_t>(g.batch * g.out_channels * g.out_h * g.out_w);
    const auto x = random_values(rng, nx), w = random_values(rng, nw), dy = random_values(rng, ny);
    const auto bias = random_values(rng, static_cast<std::size_t>(g.out_channels));

    std::vector<double> y0(ny), y1(ny), y2(ny), y3(ny);
    ref.conv2d_forward(g, x.data(), w.data(), bias.data(), y0.data());
    simd.conv2d_forward(g, x.data(), w.data(), bias.data(), y1.data());
    ref.conv2d_forward(g, x.data(), w.data(), nullptr, y2.data());
    simd.conv2d_forward(g, x.data(), w.data(), nullptr, y3.data());
    EXPECT_TRUE(same_bits(y0, y1)) << "forward, trial " << trial;
    EXPECT_TRUE(same_bits(y2, y3)) << "forward without bias, trial " << trial;

    std::vector<double> dx0(nx), dx1(nx);
    ref.conv2d_backward_data(g, dy.data(), w.data(), dx0.data());
    simd.conv2d_backward_data(g, dy.data(), w.data(), dx1.data());
    EXPECT_TRUE(same_bits(dx0, dx1)) << "backward data, trial " << trial;

    std::vector<double> dw0(nw), dw1(nw);
    ref.conv2d_backward_weight(g, x.data(), dy.data(), dw0.data());
    simd.conv2d_backward_weight(g, x.data(), dy.data(), dw1.data());
    EXPECT_TRUE(same_bits(dw0, dw1)) << "backward weight, trial " << trial;
  }
}

TEST_P(KernelEquivalence, ElementwiseMatchScalarBitwise) {
  const KernelTable& ref = scalar_table();
  const KernelTable& simd = *GetParam();
  Rng rng(77);
  for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 33u, 1000u}) {
    const auto a = random_values(rng, n);
    auto b = random_values(rng, n);
    for (auto& v : b) v = v == 0.0 ? 1.0 : v;
    for (BinaryOp op : {BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div}) {
      std::vector<double> o0(n), o1(n);
      ref.binary(op, a.data(), b.data(), o0.data(), n);
      simd.binary(op, a.data(), b.data(), o1.data(), n);
      EXPECT_TRUE(same_bits(o0, o1)) << "binary op " << static_cast<int>(op) << " n=" << n;
    }
  }
  for (int trial = 0; trial < 40; ++trial) {
    const auto outer = static_cast<std::size_t>(rng.uniform_int(1, 3));
    const auto channels = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto inner = static_cast<std::size_t>(rng.uniform_int(1, 37));
    const auto in = random_values(rng, outer * channels * inner);
    const auto shift = random_values(rng, channels), sc = random_values(rng, channels),
               off = random_values(rng, channels);
    std::vector<double> o0(in.size()), o1(in.size());
    ref.channel_affine(in.data(), shift.data(), sc.data(), off.data(), o0.data(), outer, channels, inner);
    simd.channel_affine(in.data(), shift.data(), sc.data(), off.data(), o1.data(), outer, channels, inner);
    EXPECT_TRUE(same_bits(o0, o1)) << "channel_affine trial " << trial;
  }
}

TEST_P(KernelEquivalence, ReductionsMatchScalarToTolerance) {
  const KernelTable& ref = scalar_table();
  const KernelTable& simd = *GetParam();
  Rng rng(91);
  for (std::size_t n : {0u, 1u, 5u, 8u, 9u, 64u, 1001u, 100000u}) {
    const auto a = random_values(rng, n), b = random_values(rng, n);
    double abs_sum = 0.0, abs_dot = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      abs_sum += std::abs(a[k]);
      abs_dot += std::abs(a[k] * b[k]);
    }
    const double tol = 4.0 * static_cast<double>(n + 1) * 1.1e-16;
    EXPECT_LE(std::abs(ref.sum(a.data(), n) - simd.sum(a.data(), n)), tol * abs_sum + 1e-300) << n;
    EXPECT_LE(std::abs(ref.dot(a.data(), b.data(), n) - simd.dot(a.data(), b.data(), n)),
              tol * abs_dot + 1e-300)
        << n;
  }
}

std::vector<const KernelTable*> simd_tables() {
  std::vector<const KernelTable*> out;
  for (const KernelTable* t : available_tables())
    if (t != &scalar_table()) out.push_back(t);
  return out;
}

INSTANTIATE_TEST_SUITE_P(Available, KernelEquivalence, ::testing::ValuesIn(simd_tables()),
                         [](const auto& info) { return std::string(info.param->name); });
GTEST_ALLOW_UNINSTANTIATED_PARAMETERIZED_TEST(KernelEquivalence);

TEST(KernelDispatch, SelectAndParse) {
  EXPECT_EQ(parse_backend("scalar"), Backend::Scalar);
  EXPECT_EQ(parse_backend("avx2"), Backend::Avx2);
  EXPECT_EQ(parse_backend("auto"), Backend::Auto);
  EXPECT_ANY_THROW(parse_backend("sse9"));
  const KernelTable& before = active();
  select(Backend::Scalar);
  EXPECT_EQ(&active(), &scalar_table());
  select(Backend::Auto);
  EXPECT_FALSE(available_tables().empty());
  (void)before;
}

}  // namespace
}  // namespace convbn::kernels
