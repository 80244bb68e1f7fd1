// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Graph builders for tests, experiments and the shipped fixture files.
// Parameter names equal node ids.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convbn/graph.hpp"
#include "convbn/rng.hpp"

namespace convbn::fixtures {

class GraphBuilder {
 public:
  std::string input(const std::string& id, std::int64_t c, std::int64_t h, std::int64_t w);
  std::string conv(const std::string& id, const std::string& in, std::int64_t cin, std::int64_t cout,
                   std::int64_t k, std::int64_t stride = 1, std::int64_t pad = 0, bool bias = false,
                   graph::OpKind op = graph::OpKind::Conv2d);
  std::string bn(const std::string& id, const std::string& in, std::int64_t c,
                 graph::OpKind op = graph::OpKind::Bn2d);
  std::string relu(const std::string& id, const std::string& in);
  std::string add(const std::string& id, std::vector<std::string> ins);
  std::string pool(const std::string& id, const std::string& in);
  std::string linear(const std::string& id, const std::string& in, std::int64_t fin, std::int64_t fout);
  std::string identity(const std::string& id, const std::string& in);
  std::string output(const std::string& id, const std::string& in);

  graph::Graph finish();

 private:
  graph::Graph g_;
};

/// Materializes every parameter from its node attrs:
///   conv weight N(0, sqrt(2 / fan_in)), conv bias N(0, 0.1),
///   gamma U(0.5, 1.5), beta N(0, 0.1), running_mean N(0, 0.5),
///   running_var U(0.5, 2), linear weight N(0, sqrt(1 / fan_in)), bias 0.
void init_params(graph::Graph& g, Rng& rng, DType dtype = DType::F64);

/// input -> conv -> bn -> output.
graph::Graph single_block(std::int64_t cin, std::int64_t cout, std::int64_t h, std::int64_t w,
                          std::int64_t k, std::int64_t stride, std::int64_t pad, bool bias);

/// input -> (conv -> bn -> relu) x2 -> pool -> linear -> output.
graph::Graph toy_chain(std::int64_t in_channels = 3, std::int64_t hw = 8, std::int64_t c1 = 4,
                       std::int64_t c2 = 8, std::int64_t classes = 3);

/// Seven convolutions: five eligible conv->bn pairs (c1, c2, c4, c6, c7), one
/// conv feeding both a bn and an add (c3), one conv without bn (c5).
graph::Graph seven_pattern();

/// Matcher coverage: conv1d->bn1d and conv3d->bn3d pairs, a conv2d->bn1d
/// mismatch, and one eligible conv2d->bn2d pair. Not executable.
graph::Graph mixed_dims();

/// `depth` conv(3x3)-bn-relu layers of `width` channels, then pool + linear.
graph::Graph conv_stack(std::int64_t in_channels, std::int64_t width, std::int64_t depth, std::int64_t hw,
                        std::int64_t classes);

/// ResNet-50 topology (bottlenecks [3, 4, 6, 3], widths 64..512, 224x224
/// input). The stem max-pool is folded into a stride-4 stem convolution.
/// Shape-only: call init_params before executing.
graph::Graph resnet50();

/// Small executable residual network with the same block structure: a stem
/// and two bottlenecks, the second with a strided projection shortcut.
graph::Graph tiny_resnet(std::int64_t hw = 8);

/// Name -> builder, for the fixture export command.
std::vector<std::string> fixture_names();
graph::Graph build_fixture(const std::string& name);

}  // namespace convbn::fixtures
