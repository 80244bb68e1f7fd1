// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Conv -> BN pattern matching and the Tune/Deploy rewrite pass.

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "convbn/graph.hpp"

namespace convbn::graph {

enum class SkipReason { MultiConsumer, NoBnFollower, UnsupportedDim };
std::string_view skip_reason_name(SkipReason r);

struct ConvBnPair {
  std::string conv_id;
  std::string bn_id;
};

struct Skipped {
  std::string node_id;
  SkipReason reason;
};

/// Every conv node is a candidate. A pair matches when the BN node's sole
/// input is a conv of the same dimensionality with exactly one user; 1d/3d
/// matches are reported as unsupported_dim.
struct PairSearch {
  std::vector<ConvBnPair> pairs;
  std::vector<Skipped> skipped;
};

PairSearch find_convbn_pairs(const Graph& g);

struct RewriteEntry {
  std::string conv_id;
  std::string bn_id;
  Mode mode;
};

struct RewriteReport {
  std::string action;  // "turn_on:tune", "turn_on:deploy", "revert"
  std::vector<RewriteEntry> rewritten;
  std::vector<Skipped> skipped;

  Json to_json() const;
};

/// Rewrites every eligible 2D pair. Tune keeps gamma/beta live under the BN
/// parameter name and adds <conv>.weight_coeff / <conv>.bias_delta buffers;
/// Deploy replaces the conv weight and bias by the fused values. In both
/// cases the BN node becomes an identity with the same id and its detached
/// parameters move to reserved_bns. ModeError for Train or Eval.
RewriteReport turn_on(Graph& g, Mode mode);

/// Undoes every rewrite recorded in reserved_bns. Deploy pairs whose fused
/// parameters are unchanged are restored bitwise from the snapshot; trained
/// fused parameters are mapped back through the inverse transform.
RewriteReport revert(Graph& g);

/// revert, then turn_on(target) for Tune/Deploy. Train and Eval leave the
/// plain conv/BN wiring (the executor picks the BN statistics mode).
RewriteReport switch_mode(Graph& g, Mode target);

}  // namespace convbn::graph
