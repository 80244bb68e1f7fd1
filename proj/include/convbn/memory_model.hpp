// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Saved-for-backward accounting per mode.
//
// count_saved works on the plain (un-rewritten) graph: for Tune and Deploy
// it applies the pair matcher virtually. A tensor retained by several nodes
// (for example a block input read by two convolutions, or a relu output that
// is also the next conv's X) is counted once, at the first node in
// topological order; later references carry shared_with. Snapshot tensors
// kept for revert are reported separately and excluded from the totals.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "convbn/convbn_block.hpp"
#include "convbn/executor.hpp"
#include "convbn/graph.hpp"

namespace convbn::memory {

struct SavedRecord {
  std::string name;
  std::int64_t elements = 0;
  std::int64_t bytes = 0;
  std::string shared_with;  // node that already counted this tensor
};

struct NodeFootprint {
  std::string node_id;
  std::string op;
  std::vector<SavedRecord> saved;
  std::int64_t elements = 0;  // counted records only
  std::int64_t bytes = 0;
};

struct FootprintReport {
  Mode mode = Mode::Eval;
  DType dtype = DType::F32;
  Shape input_shape;
  std::vector<NodeFootprint> nodes;  // topological order, nodes that save something
  std::int64_t total_elements = 0;
  std::int64_t total_bytes = 0;
  std::int64_t snapshot_elements = 0;
  std::int64_t snapshot_bytes = 0;

  graph::Json to_json() const;
  std::string to_table() const;
};

/// Analytic count. ShapeError naming the node if shapes cannot be inferred.
FootprintReport count_saved(const graph::Graph& g, Mode mode, const Shape& input_shape,
                            DType dtype = DType::F32);

/// Footprint of an actual forward pass, from the executor tape. `executed`
/// is the graph that ran (already rewritten for Tune/Deploy).
FootprintReport instrumented_footprint(const graph::Graph& executed, const graph::ForwardResult& fwd, Mode mode,
                                       DType dtype = DType::F32);

struct Discrepancy {
  std::string node_id;
  std::string detail;
};

struct VerifyResult {
  FootprintReport analytic;
  FootprintReport instrumented;
  std::vector<Discrepancy> discrepancies;
  bool ok() const { return discrepancies.empty(); }
};

/// Rewrites a copy of the plain graph `g` for `mode`, executes it on `x`
/// and compares the retained tensors with count_saved name for name.
VerifyResult verify_against_engine(const graph::Graph& g, Mode mode, const Tensor& x, DType dtype = DType::F32);

/// Eval, Tune and Deploy footprints side by side.
struct ModeComparison {
  FootprintReport eval;
  FootprintReport tune;
  FootprintReport deploy;
  double tune_over_eval() const;
  double deploy_over_eval() const;
  graph::Json to_json() const;
  std::string to_table() const;
};

ModeComparison compare_modes(const graph::Graph& g, const Shape& input_shape, DType dtype = DType::F32);

}  // namespace convbn::memory
