// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cmath>

#include "convbn/fixtures.hpp"
#include "convbn/errors.hpp"
#include "convbn/harness.hpp"

namespace convbn::harness {
namespace {

Json loss_curve(const TrainResult& r) {
  Json a = Json::array();
  for (const auto& s : r.steps) a.push_back(s.loss);
  return a;
}

Json config_json(const TrainConfig& cfg) {
  Json phases = Json::array();
  for (const auto& p : cfg.phases) phases.push_back({{"mode", mode_name(p.mode)}, {"steps", p.steps}});
  return {{"lr", cfg.lr},
          {"momentum", cfg.momentum},
          {"weight_decay", cfg.weight_decay},
          {"batch", cfg.batch},
          {"phases", phases},
          {"cycles", cfg.cycles},
          {"calibration_batches", cfg.calibration_batches},
          {"seed", cfg.seed},
          {"dtype", dtype_name(cfg.dtype)},
          {"freeze_bn_affine", cfg.freeze_bn_affine},
          {"freeze_conv_bias", cfg.freeze_conv_bias}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

graph::Graph toy_net(const Dataset& data, std::uint64_t seed) {
  const Shape& s = data.images.shape();
  if (s[2] != s[3]) throw ShapeError("toy net expects square images, got " + s.str());
  graph::Graph g = fixtures::toy_chain(s[1], s[2], 4, 8, data.classes);
  Rng rng(seed);
  fixtures::init_params(g, rng);
  return g;
}

ExperimentReport cmd_train(const graph::Graph& g, const Dataset& data, const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult res = train(g, data, cfg);
  ExperimentReport r;
  r.experiment = "train";
  r.config = config_json(cfg);
  Json acc = Json::array(), modes = Json::array();
  for (const auto& s : res.steps) {
    acc.push_back(s.accuracy);
    modes.push_back(mode_name(s.mode));
  }
  r.metrics = {{"loss", loss_curve(res)},
               {"accuracy", acc},
               {"mode", modes},
               {"switch_steps", res.switch_steps},
               {"final_loss", res.steps.back().loss}};
  r.nondeterministic["seconds"] = seconds_since(t0);
  return r;
}

ExperimentReport train_equivalence(const EquivalenceOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset data = make_blobs(BlobSpec{}, opt.seed);
  const graph::Graph g = toy_net(data, opt.seed);
  TrainConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  cfg.calibration_batches = 4;
  cfg.seed = opt.seed;

  ExperimentReport r;
  r.experiment = "train_equivalence";
  r.config = config_json(cfg);
  r.config["steps"] = opt.steps;

  auto run = [&](Mode mode, DType dtype) {
    TrainConfig c = cfg;
    c.dtype = dtype;
    c.phases = {{mode, opt.steps}};
    return train(g, data, c);
  };
  auto max_gap = [](const TrainResult& a, const TrainResult& b) {
    double gap = 0.0;
    for (std::size_t k = 0; k < a.steps.size(); ++k) gap = std::max(gap, std::abs(a.steps[k].loss - b.steps[k].loss));
    return gap;
  };

  const auto e32 = run(Mode::Eval, DType::F32);
  const auto t32 = run(Mode::Tune, DType::F32);
  const double gap32 = max_gap(e32, t32);
  r.metrics["f32"] = {{"eval_loss", loss_curve(e32)}, {"tune_loss", loss_curve(t32)}, {"max_loss_gap", gap32}};
  r.check("f32_max_step_loss_gap", gap32, Compare::LessEqual, opt.loss_gap, std::to_string(opt.steps) + " steps");

  const auto e64 = run(Mode::Eval, DType::F64);
  const auto t64 = run(Mode::Tune, DType::F64);
  double worst = 0.0;
  std::string worst_name;
  Json per_param = Json::object();
  for (const auto& name : optimizer_params(e64.graph, cfg)) {
    const Tensor& a = e64.graph.param(name);
    const Tensor& b = t64.graph.param(name);
    const double e = normwise_rel_diff(a, b);
    per_param[name] = e;
    if (!(e <= worst)) {
      worst = e;
      worst_name = name;
    }
  }
  r.metrics["f64"] = {{"max_loss_gap", max_gap(e64, t64)}, {"final_param_rel", per_param}};
  r.check("f64_final_param_rel", worst, Compare::LessEqual, opt.param_rel, "worst " + worst_name);
  r.nondeterministic["seconds"] = seconds_since(t0);
  return r;
}

ExperimentReport train_switch(std::uint64_t seed, std::int64_t steps_per_phase) {
  if (steps_per_phase < 21) throw InputError("train_switch: need at least 21 steps per phase");
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset data = make_blobs(BlobSpec{}, seed);
  const graph::Graph g = toy_net(data, seed);
  TrainConfig cfg;
  cfg.seed = seed;
  cfg.phases = {{Mode::Train, steps_per_phase}, {Mode::Tune, steps_per_phase}};
  const auto switched = train(g, data, cfg);
  cfg.phases = {{Mode::Train, 2 * steps_per_phase}};
  const auto plain = train(g, data, cfg);

  const auto n = static_cast<std::size_t>(steps_per_phase);
  const double jump = std::abs(switched.steps[n].loss - switched.steps[n - 1].loss);
  const double paired_jump = std::abs(plain.steps[n].loss - plain.steps[n - 1].loss);
  double variation = 0.0;
  for (std::size_t k = n - 20; k < n; ++k) variation += std::abs(plain.steps[k].loss - plain.steps[k - 1].loss);
  variation /= 20.0;

  ExperimentReport r;
  r.experiment = "train_switch";
  r.config = config_json(cfg);
  r.config["phases"] = {{{"mode", "train"}, {"steps", steps_per_phase}}, {{"mode", "tune"}, {"steps", steps_per_phase}}};
  r.metrics = {{"switched_loss", loss_curve(switched)},
               {"paired_loss", loss_curve(plain)},
               {"switch_step", steps_per_phase},
               {"jump", jump},
               {"paired_jump", paired_jump},
               {"running_variation", variation}};
  r.check("switch_jump_over_variation", variation > 0.0 ? jump / variation : INFINITY, Compare::LessEqual, 10.0,
          "step " + std::to_string(steps_per_phase));
  r.nondeterministic["seconds"] = seconds_since(t0);
  return r;
}

}  // namespace convbn::harness
