// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Experiment drivers behind the command-line tool. Every driver is
// deterministic given its seed; wall-clock data goes to the report's
// nondeterministic section only.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "convbn/report.hpp"
#include "convbn/tensor_io.hpp"
#include "convbn/train.hpp"

namespace convbn::harness {

// ---- verify -------------------------------------------------------------------

struct VerifyOptions {
  std::uint64_t seed = 42;
  int instances = 50;
  /// Self-test: perturb w' by 1e-3 in the Tune path of one instance.
  bool inject_fault = false;
  int fault_instance = 7;
};

/// Eval/Tune forward and backward agreement, Deploy fusion and gradient
/// scaling, conv/scale associativity and the broadcast adjoint identity.
ExperimentReport cmd_verify(const VerifyOptions& opt);

// ---- gradcheck ----------------------------------------------------------------

struct GradcheckOptions {
  std::uint64_t seed = 42;
  int instances = 20;
  double h = 1e-5;
  double threshold = 1e-5;
  /// Tune vs Eval analytic gradient agreement.
  double cross_mode_threshold = 1e-9;
};

/// Central differences on every input and parameter of every backward op and
/// of the block in all four modes, plus zero-input instances.
ExperimentReport cmd_gradcheck(const GradcheckOptions& opt);

// ---- stability ----------------------------------------------------------------

struct StabilityOptions {
  std::uint64_t seed = 42;
  /// Explicit per-channel coefficients; empty means sample `channels` values
  /// log-uniformly from [lo, hi].
  std::vector<double> coeffs;
  double lo = 0.1;
  double hi = 10.0;
  int channels = 8;
  double one_step_tolerance = 1e-8;
  int steps = 50;
  double lr = 0.01;
};

/// "0.1,1,10" or "loguniform:0.1:10". InputError on zeros or bad text.
void parse_coeff_spec(const std::string& text, StabilityOptions& opt);

ExperimentReport cmd_stability(const StabilityOptions& opt);

// ---- coeffs -------------------------------------------------------------------

struct CoeffsOptions {
  int bins = 30;
  std::optional<double> lo;
  std::optional<double> hi;
  double default_eps = 1e-5;
};

/// Per layer `<layer>.gamma`, `<layer>.running_var` and optional scalar
/// `<layer>.eps`. InputError listing the expected names when incomplete.
ExperimentReport cmd_coeffs(const TensorMap& stats, const CoeffsOptions& opt);

// ---- bench --------------------------------------------------------------------

struct BenchOptions {
  std::uint64_t seed = 42;
  std::vector<std::int64_t> batches{16, 32, 64};
  std::vector<std::int64_t> sizes{32, 48, 64};
  std::int64_t in_channels = 3;
  std::int64_t width = 8;
  std::int64_t depth = 4;
  std::int64_t classes = 10;
  DType dtype = DType::F32;
  int warmup = 2;
  int repeats = 9;  // multiple of 3 balances the rotated mode order
  double min_sample_ms = 1.0;
  /// Adds the one-layer overhead-dominated sanity cell.
  bool sanity_cell = true;
};

ExperimentReport cmd_bench(const BenchOptions& opt);
/// Eval/Tune/Deploy time and memory columns, one row per grid cell.
std::string bench_table(const ExperimentReport& bench);
std::string bench_csv(const ExperimentReport& bench);

// ---- train --------------------------------------------------------------------

/// The toy conv-bn classifier used by train and stability.
graph::Graph toy_net(const Dataset& data, std::uint64_t seed);

ExperimentReport cmd_train(const graph::Graph& g, const Dataset& data, const TrainConfig& cfg);

struct EquivalenceOptions {
  std::uint64_t seed = 42;
  std::int64_t steps = 200;
  double loss_gap = 1e-4;       // f32 run
  double param_rel = 1e-6;      // f64 run
};

/// Paired Eval and Tune runs with identical seeds, weight decay disabled.
ExperimentReport train_equivalence(const EquivalenceOptions& opt);

/// A Train phase followed by a Tune phase against a paired Train-only run:
/// the loss jump at the switch is compared with the mean step-to-step change.
ExperimentReport train_switch(std::uint64_t seed, std::int64_t steps_per_phase = 100);

}  // namespace convbn::harness
