// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Whole-graph forward/backward over the IR.
//
// Per-node saved tensors (what backward reads):
//   conv2d           X                  (plain, or Deploy-fused parameters)
//   conv2d, Tune     X, weight_fused, bias_fused
//   bn2d, Eval       Y
//   bn2d, Train      xhat, batch_mean, batch_var
//   relu             out                (its output; the mask is out > 0)
//   linear           X
//   everything else  nothing

#pragma once

#include <map>
#include <string>
#include <vector>

#include "convbn/graph.hpp"

namespace convbn::graph {

/// Statistics used by plain bn2d nodes.
enum class BnMode { Train, Eval };

struct SavedEntry {
  std::string name;
  Tensor tensor;
};

struct NodeTape {
  std::string node_id;
  std::vector<SavedEntry> saved;
  Shape input_shape;  // shape bookkeeping only, not a retained tensor
};

struct ForwardResult {
  Tensor output;
  std::vector<NodeTape> tape;  // topological order
  /// Train-mode bn nodes: updated running statistics keyed by param name.
  std::map<std::string, nn::RunningStats> running_updates;
  BnMode bn_mode = BnMode::Eval;
  Shape input_shape;
};

/// ShapeError naming the node on any mismatch.
ForwardResult execute_forward(const Graph& g, const Tensor& x, BnMode bn_mode = BnMode::Eval);

struct BackwardResult {
  Tensor dx;
  TensorMap grads;  // keyed by parameter name
};

BackwardResult execute_backward(const Graph& g, const ForwardResult& fwd, const Tensor& dout);

/// Writes Train-mode running statistics back into the parameter store.
void apply_running_updates(Graph& g, const ForwardResult& fwd);

}  // namespace convbn::graph
