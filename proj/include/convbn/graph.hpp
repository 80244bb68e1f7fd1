// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Computation-graph IR.
//
// JSON schema "cbn-graph/1":
//
//   {
//     "format": "cbn-graph/1",
//     "params_file": "model.cbnt",          // optional, relative to the JSON file
//     "nodes": [ {"id": "c1", "op": "conv2d", "inputs": ["x"], "param": "c1",
//                 "attrs": {...}}, ... ],
//     "reserved_bns": [ ... ]               // written by the rewrite pass
//   }
//
// Node attrs by op:
//   input            shape: per-sample extents [C, H, W]
//   conv1d/2d/3d     in_channels, out_channels, kernel, stride, padding, bias;
//                    after a rewrite also fusion ("tune" | "deploy") and bn_param
//   bn1d/2d/3d       num_features, eps, momentum
//   linear           in_features, out_features
//   relu, add, global_avg_pool, identity, output   none
//
// Parameter names for a node with param P:
//   conv    P.weight, P.bias (if attrs.bias), P.weight_coeff, P.bias_delta (Tune)
//   bn      P.gamma, P.beta, P.running_mean, P.running_var
//   linear  P.weight [out, in], P.bias [out]

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "convbn/convbn_block.hpp"
#include "convbn/nn_ops.hpp"
#include "convbn/tensor.hpp"
#include "convbn/tensor_io.hpp"

namespace convbn::graph {

using Json = nlohmann::json;

inline constexpr std::string_view kFormat = "cbn-graph/1";

enum class OpKind {
  Input,
  Output,
  Conv1d,
  Conv2d,
  Conv3d,
  Bn1d,
  Bn2d,
  Bn3d,
  Relu,
  Add,
  GlobalAvgPool,
  Linear,
  Identity,
};

std::string_view op_name(OpKind op);
/// SchemaError for unknown names.
OpKind parse_op(std::string_view name);
bool is_conv(OpKind op);
bool is_bn(OpKind op);
/// 1, 2 or 3 for conv/bn kinds, 0 otherwise.
int spatial_dims(OpKind op);

struct Node {
  std::string id;
  OpKind op = OpKind::Identity;
  std::vector<std::string> inputs;
  std::optional<std::string> param;
  Json attrs = Json::object();
  std::vector<std::string> users;  // derived, in node order
};

/// A BN parameter set detached by the rewrite pass, with what revert needs.
struct ReservedBn {
  std::string conv_id;
  std::string bn_id;
  Mode mode = Mode::Tune;
  OpKind bn_op = OpKind::Bn2d;
  std::string bn_param;
  Json bn_attrs = Json::object();
  Json conv_attrs = Json::object();  // conv attrs before the rewrite
  bool conv_had_bias = false;
  /// Tune: running_mean, running_var.
  /// Deploy: weight, bias (if conv_had_bias), gamma, beta, running_mean,
  /// running_var, fused_weight, fused_bias.
  TensorMap tensors;
};

class Graph {
 public:
  Graph() = default;

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Node& node(const std::string& id) const;
  Node& node(const std::string& id);
  bool has_node(const std::string& id) const { return index_.count(id) != 0; }

  /// Appends a node; call validate() once construction is done.
  void add_node(Node node);
  /// Replaces a node in place, keeping its position.
  void replace_node(const Node& node);

  /// Recomputes users, then checks arity, references and acyclicity.
  void validate();
  /// Stable topological order (ties broken by node order).
  std::vector<std::string> topo_order() const;
  const std::string& input_id() const;
  const std::string& output_id() const;

  TensorMap& params() noexcept { return params_; }
  const TensorMap& params() const noexcept { return params_; }
  const Tensor& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return params_.count(name) != 0; }

  std::vector<ReservedBn>& reserved_bns() noexcept { return reserved_; }
  const std::vector<ReservedBn>& reserved_bns() const noexcept { return reserved_; }

  std::string params_file;

 private:
  void reindex();

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> index_;
  TensorMap params_;
  std::vector<ReservedBn> reserved_;
  std::string input_id_;
  std::string output_id_;
};

/// Parses and validates graph JSON (parameters are not loaded).
Graph load_graph(const Json& doc);
Json dump_graph(const Graph& g);

/// Reads JSON from `path` and, if params_file is set, the CBNT container it
/// names (resolved relative to the JSON file).
Graph load_graph_file(const std::filesystem::path& path);
/// Writes JSON and, if params_file is set, the parameter container next to it.
void save_graph_file(const Graph& g, const std::filesystem::path& path);

/// Parameter store plus reserved tensors under "reserved/<bn_param>/<name>".
TensorMap export_params(const Graph& g);
/// Inverse of export_params; reserved tensors go back to their entries.
void import_params(Graph& g, const TensorMap& tensors);

/// Checks that every param_ref resolves with shapes consistent with attrs.
void check_params(const Graph& g);

/// Names the optimizer may update: conv weight/bias, bn gamma/beta and
/// linear weight/bias; statistics and Tune buffers are excluded.
std::vector<std::string> trainable_params(const Graph& g);

// ---- attribute helpers -------------------------------------------------------

nn::ConvParams conv_params(const Graph& g, const Node& n);
nn::BNParams bn_params(const Graph& g, const Node& n);

/// Output shape of every node for a full input shape [N, C, H, W].
/// ShapeError naming the node on failure.
std::map<std::string, Shape> infer_shapes(const Graph& g, const Shape& input_shape);

}  // namespace convbn::graph
