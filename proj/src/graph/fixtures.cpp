// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "convbn/fixtures.hpp"

#include <cmath>

#include "convbn/errors.hpp"

namespace convbn::fixtures {

using graph::Graph;
using graph::Json;
using graph::Node;
using graph::OpKind;

std::string GraphBuilder::input(const std::string& id, std::int64_t c, std::int64_t h, std::int64_t w) {
  g_.add_node(Node{id, OpKind::Input, {}, std::nullopt, Json{{"shape", {c, h, w}}}, {}});
  return id;
}

std::string GraphBuilder::conv(const std::string& id, const std::string& in, std::int64_t cin, std::int64_t cout,
                               std::int64_t k, std::int64_t stride, std::int64_t pad, bool bias, OpKind op) {
  const int dims = graph::spatial_dims(op);
  Json kernel = Json::array(), strides = Json::array(), pads = Json::array();
  for (int d = 0; d < dims; ++d) {
    kernel.push_back(k);
    strides.push_back(stride);
    pads.push_back(pad);
  }
  Json attrs{{"in_channels", cin}, {"out_channels", cout}, {"kernel", kernel},
             {"stride", strides},  {"padding", pads},      {"bias", bias}};
  g_.add_node(Node{id, op, {in}, id, std::move(attrs), {}});
  return id;
}

std::string GraphBuilder::bn(const std::string& id, const std::string& in, std::int64_t c, OpKind op) {
  Json attrs{{"num_features", c}, {"eps", nn::kDefaultEps}, {"momentum", nn::kDefaultMomentum}};
  g_.add_node(Node{id, op, {in}, id, std::move(attrs), {}});
  return id;
}

std::string GraphBuilder::relu(const std::string& id, const std::string& in) {
  g_.add_node(Node{id, OpKind::Relu, {in}, std::nullopt, Json::object(), {}});
  return id;
}

std::string GraphBuilder::add(const std::string& id, std::vector<std::string> ins) {
  g_.add_node(Node{id, OpKind::Add, std::move(ins), std::nullopt, Json::object(), {}});
  return id;
}

std::string GraphBuilder::pool(const std::string& id, const std::string& in) {
  g_.add_node(Node{id, OpKind::GlobalAvgPool, {in}, std::nullopt, Json::object(), {}});
  return id;
}

std::string GraphBuilder::linear(const std::string& id, const std::string& in, std::int64_t fin,
                                 std::int64_t fout) {
  g_.add_node(Node{id, OpKind::Linear, {in}, id, Json{{"in_features", fin}, {"out_features", fout}}, {}});
  return id;
}

std::string GraphBuilder::identity(const std::string& id, const std::string& in) {
  g_.add_node(Node{id, OpKind::Identity, {in}, std::nullopt, Json::object(), {}});
  return id;
}

std::string GraphBuilder::output(const std::string& id, const std::string& in) {
  g_.add_node(Node{id, OpKind::Output, {in}, std::nullopt, Json::object(), {}});
  return id;
}

Graph GraphBuilder::finish() {
  g_.validate();
  return std::move(g_);
}

void init_params(Graph& g, Rng& rng, DType dtype) {
  for (const Node& n : g.nodes()) {
    if (!n.param) continue;
    const std::string& p = *n.param;
    if (n.op == OpKind::Conv2d) {
      const std::int64_t co = n.attrs.at("out_channels"), ci = n.attrs.at("in_channels");
      const auto k = n.attrs.at("kernel").get<std::vector<std::int64_t>>();
      const double fan_in = static_cast<double>(ci * k[0] * k[1]);
      g.params()[p + ".weight"] = rng.normal_tensor(Shape{co, ci, k[0], k[1]}, 0.0, std::sqrt(2.0 / fan_in), dtype);
      if (n.attrs.value("bias", false)) g.params()[p + ".bias"] = rng.normal_tensor(Shape{co}, 0.0, 0.1, dtype);
    } else if (n.op == OpKind::Bn2d) {
      const std::int64_t c = n.attrs.at("num_features");
      g.params()[p + ".gamma"] = rng.uniform_tensor(Shape{c}, 0.5, 1.5, dtype);
      g.params()[p + ".beta"] = rng.normal_tensor(Shape{c}, 0.0, 0.1, dtype);
      g.params()[p + ".running_mean"] = rng.normal_tensor(Shape{c}, 0.0, 0.5, dtype);
      g.params()[p + ".running_var"] = rng.uniform_tensor(Shape{c}, 0.5, 2.0, dtype);
    } else if (n.op == OpKind::Linear) {
      const std::int64_t o = n.attrs.at("out_features"), i = n.attrs.at("in_features");
      g.params()[p + ".weight"] = rng.normal_tensor(Shape{o, i}, 0.0, std::sqrt(1.0 / static_cast<double>(i)), dtype);
      g.params()[p + ".bias"] = Tensor::zeros(Shape{o}, dtype);
    }
  }
}

Graph single_block(std::int64_t cin, std::int64_t cout, std::int64_t h, std::int64_t w, std::int64_t k,
                   std::int64_t stride, std::int64_t pad, bool bias) {
  GraphBuilder b;
  b.input("x", cin, h, w);
  b.conv("conv", "x", cin, cout, k, stride, pad, bias);
  b.bn("bn", "conv", cout);
  b.output("out", "bn");
  return b.finish();
}

Graph toy_chain(std::int64_t in_channels, std::int64_t hw, std::int64_t c1, std::int64_t c2, std::int64_t classes) {
  GraphBuilder b;
  b.input("x", in_channels, hw, hw);
  b.conv("c1", "x", in_channels, c1, 3, 1, 1, true);
  b.bn("b1", "c1", c1);
  b.relu("r1", "b1");
  b.conv("c2", "r1", c1, c2, 3, 2, 1, false);
  b.bn("b2", "c2", c2);
  b.relu("r2", "b2");
  b.pool("pool", "r2");
  b.linear("fc", "pool", c2, classes);
  b.output("out", "fc");
  return b.finish();
}

Graph seven_pattern() {
  GraphBuilder b;
  b.input("x", 3, 12, 12);
  b.conv("c1", "x", 3, 6, 3, 1, 1, true);
  b.bn("b1", "c1", 6);
  b.relu("r1", "b1");
  b.conv("c2", "r1", 6, 6, 3, 1, 1, false);
  b.bn("b2", "c2", 6);
  b.relu("r2", "b2");
  // c3 feeds both its bn and the residual add.
  b.conv("c3", "r2", 6, 6, 3, 1, 1, true);
  b.bn("b3", "c3", 6);
  b.add("sum", {"b3", "c3"});
  b.relu("r3", "sum");
  b.conv("c4", "r3", 6, 8, 3, 2, 1, false);
  b.bn("b4", "c4", 8);
  b.relu("r4", "b4");
  // c5 has no bn.
  b.conv("c5", "r4", 8, 8, 1, 1, 0, true);
  b.relu("r5", "c5");
  b.conv("c6", "r5", 8, 8, 3, 1, 1, true);
  b.bn("b6", "c6", 8);
  b.relu("r6", "b6");
  b.conv("c7", "r6", 8, 8, 3, 1, 1, false);
  b.bn("b7", "c7", 8);
  b.pool("pool", "b7");
  b.linear("fc", "pool", 8, 4);
  b.output("out", "fc");
  return b.finish();
}

Graph mixed_dims() {
  GraphBuilder b;
  b.input("x", 2, 8, 8);
  b.conv("k1", "x", 2, 4, 3, 1, 1, false, OpKind::Conv1d);
  b.bn("n1", "k1", 4, OpKind::Bn1d);
  b.conv("k3", "n1", 4, 4, 3, 1, 1, false, OpKind::Conv3d);
  b.bn("n3", "k3", 4, OpKind::Bn3d);
  b.conv("k2", "n3", 4, 4, 3, 1, 1, false, OpKind::Conv2d);
  b.bn("n2", "k2", 4, OpKind::Bn1d);
  b.conv("k4", "n2", 4, 4, 3, 1, 1, false, OpKind::Conv2d);
  b.bn("n4", "k4", 4, OpKind::Bn2d);
  b.output("out", "n4");
  return b.finish();
}

Graph conv_stack(std::int64_t in_channels, std::int64_t width, std::int64_t depth, std::int64_t hw,
                 std::int64_t classes) {
  GraphBuilder b;
  std::string cur = b.input("x", in_channels, hw, hw);
  std::int64_t c = in_channels;
  for (std::int64_t l = 1; l <= depth; ++l) {
    const std::string s = std::to_string(l);
    b.conv("conv" + s, cur, c, width, 3, 1, 1, false);
    b.bn("bn" + s, "conv" + s, width);
    cur = b.relu("relu" + s, "bn" + s);
    c = width;
  }
  b.pool("pool", cur);
  b.linear("fc", "pool", width, classes);
  b.output("out", "fc");
  return b.finish();
}

namespace {

// Bottleneck: 1x1 reduce, 3x3 (strided), 1x1 expand, optional projection.
std::string bottleneck(GraphBuilder& b, const std::string& name, const std::string& in, std::int64_t cin,
                       std::int64_t width, std::int64_t stride, bool project) {
  const std::int64_t cout = 4 * width;
  b.conv(name + ".conv1", in, cin, width, 1);
  b.bn(name + ".bn1", name + ".conv1", width);
  b.relu(name + ".relu1", name + ".bn1");
  b.conv(name + ".conv2", name + ".relu1", width, width, 3, stride, 1);
  b.bn(name + ".bn2", name + ".conv2", width);
  b.relu(name + ".relu2", name + ".bn2");
  b.conv(name + ".conv3", name + ".relu2", width, cout, 1);
  b.bn(name + ".bn3", name + ".conv3", cout);
  std::string shortcut = in;
  if (project) {
    b.conv(name + ".down", in, cin, cout, 1, stride, 0);
    shortcut = b.bn(name + ".down_bn", name + ".down", cout);
  }
  b.add(name + ".add", {name + ".bn3", shortcut});
  return b.relu(name + ".out", name + ".add");
}

}  // namespace

Graph resnet50() {
  GraphBuilder b;
  b.input("x", 3, 224, 224);
  b.conv("stem", "x", 3, 64, 7, 4, 3);
  b.bn("stem_bn", "stem", 64);
  std::string cur = b.relu("stem_relu", "stem_bn");
  const std::int64_t blocks[4] = {3, 4, 6, 3};
  const std::int64_t widths[4] = {64, 128, 256, 512};
  std::int64_t c = 64;
  for (int s = 0; s < 4; ++s) {
    for (std::int64_t k = 0; k < blocks[s]; ++k) {
      const std::int64_t stride = (s > 0 && k == 0) ? 2 : 1;
      const std::string name = "layer" + std::to_string(s + 1) + "." + std::to_string(k);
      cur = bottleneck(b, name, cur, c, widths[s], stride, k == 0);
      c = 4 * widths[s];
    }
  }
  b.pool("pool", cur);
  b.linear("fc", "pool", c, 1000);
  b.output("out", "fc");
  return b.finish();
}

Graph tiny_resnet(std::int64_t hw) {
  GraphBuilder b;
  b.input("x", 3, hw, hw);
  b.conv("stem", "x", 3, 8, 3, 1, 1);
  b.bn("stem_bn", "stem", 8);
  std::string cur = b.relu("stem_relu", "stem_bn");
  cur = bottleneck(b, "block1", cur, 8, 2, 1, false);
  cur = bottleneck(b, "block2", cur, 8, 4, 2, true);
  b.pool("pool", cur);
  b.linear("fc", "pool", 16, 5);
  b.output("out", "fc");
  return b.finish();
}

std::vector<std::string> fixture_names() {
  return {"toy_chain", "seven_pattern", "mixed_dims", "conv_stack", "tiny_resnet", "resnet50"};
}

Graph build_fixture(const std::string& name) {
  if (name == "toy_chain") return toy_chain();
  if (name == "seven_pattern") return seven_pattern();
  if (name == "mixed_dims") return mixed_dims();
  if (name == "conv_stack") return conv_stack(3, 16, 4, 32, 10);
  if (name == "tiny_resnet") return tiny_resnet();
  if (name == "resnet50") return resnet50();
  throw InputError("unknown fixture '" + name + "'");
}

}  // namespace convbn::fixtures
