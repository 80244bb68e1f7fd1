// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Datasets and the SGD training loop over the graph executor.

#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "convbn/convbn_block.hpp"
#include "convbn/graph.hpp"
#include "convbn/rng.hpp"

namespace convbn::harness {

struct Dataset {
  Tensor images;                     // [N, C, H, W]
  std::vector<std::int64_t> labels;  // [N], values in [0, classes)
  std::int64_t classes = 0;
};

/// Seeded Gaussian blobs: one N(0, 1) template image per class, samples are
/// template + N(0, noise^2) pixel noise.
struct BlobSpec {
  std::int64_t classes = 3;
  std::int64_t channels = 3;
  std::int64_t hw = 8;
  std::int64_t samples = 512;
  double noise = 1.0;
};

Dataset make_blobs(const BlobSpec& spec, std::uint64_t seed);

/// CBNT container with `images` [N, C, H, W] and integer-valued `labels` [N].
Dataset load_dataset(const std::filesystem::path& path);

struct Batch {
  Tensor x;
  std::vector<std::int64_t> y;
};

/// `size` samples drawn with replacement.
Batch sample_batch(const Dataset& data, std::int64_t size, Rng& rng, DType dtype);

struct Phase {
  Mode mode = Mode::Eval;
  std::int64_t steps = 0;
};

/// "train:100,tune:100" -> phases. InputError on malformed text.
std::vector<Phase> parse_phases(const std::string& text);

struct TrainConfig {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::int64_t batch = 16;
  std::vector<Phase> phases{{Mode::Eval, 200}};
  /// The phase list is run this many times (alternation schedules).
  std::int64_t cycles = 1;
  /// Train-mode forward passes over fresh batches before step 0, to settle
  /// the running statistics.
  std::int64_t calibration_batches = 0;
  std::uint64_t seed = 0;
  DType dtype = DType::F64;
  /// Exclude BN gamma/beta (also under Tune) and conv biases from updates.
  bool freeze_bn_affine = false;
  bool freeze_conv_bias = false;

  /// InputError unless lr >= 0, momentum in [0, 1), batch >= 1, steps >= 1.
  void validate() const;
  std::int64_t total_steps() const;
};

struct StepRecord {
  std::int64_t step = 0;
  Mode mode = Mode::Eval;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<std::int64_t> switch_steps;  // first step of each new phase
  graph::Graph graph;                      // final state
};

/// Trains `g` in place of a copy. Parameters are cast to `dtype` first.
/// A non-finite loss throws Error naming the step and mode.
TrainResult train(graph::Graph g, const Dataset& data, const TrainConfig& cfg);

/// Names updated by the optimizer under `cfg`'s freeze flags.
std::vector<std::string> optimizer_params(const graph::Graph& g, const TrainConfig& cfg);

}  // namespace convbn::harness
