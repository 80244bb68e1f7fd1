// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "convbn/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "convbn/errors.hpp"
#include "convbn/executor.hpp"
#include "convbn/rewrite.hpp"
#include "convbn/tensor_io.hpp"

namespace convbn::harness {

Dataset make_blobs(const BlobSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2 || spec.channels < 1 || spec.hw < 1 || spec.samples < 1 || !(spec.noise >= 0.0)) {
    throw InputError("blob dataset: need classes >= 2, channels/hw/samples >= 1, noise >= 0");
  }
  Rng rng(seed);
  const Shape one{spec.channels, spec.hw, spec.hw};
  std::vector<Tensor> templates;
  for (std::int64_t k = 0; k < spec.classes; ++k) templates.push_back(rng.normal_tensor(one));
  const std::size_t per = one.numel();
  Dataset d;
  d.classes = spec.classes;
  std::vector<double> pixels(static_cast<std::size_t>(spec.samples) * per);
  for (std::int64_t i = 0; i < spec.samples; ++i) {
    const std::int64_t label = rng.uniform_int(0, spec.classes - 1);
    d.labels.push_back(label);
    const Tensor& t = templates[static_cast<std::size_t>(label)];
    for (std::size_t k = 0; k < per; ++k) pixels[static_cast<std::size_t>(i) * per + k] = t[k] + spec.noise * rng.normal();
  }
  d.images = Tensor(Shape{spec.samples, spec.channels, spec.hw, spec.hw}, std::move(pixels));
  return d;
}

Dataset load_dataset(const std::filesystem::path& path) {
  const TensorMap m = read_tensors(path);
  if (!m.count("images") || !m.count("labels")) {
    throw InputError("dataset " + path.string() + ": expected tensors 'images' [N, C, H, W] and 'labels' [N]");
  }
  Dataset d;
  d.images = m.at("images").to(DType::F64);
  const Tensor& lab = m.at("labels");
  if (d.images.rank() != 4 || lab.rank() != 1 || lab.dim(0) != d.images.dim(0) || lab.numel() == 0) {
    throw ShapeError("dataset " + path.string() + ": images " + d.images.shape().str() + " vs labels " +
                     lab.shape().str());
  }
  for (double v : lab.values()) {
    if (!(v >= 0.0) || v != std::floor(v)) throw InputError("dataset labels must be non-negative integers");
    d.labels.push_back(static_cast<std::int64_t>(v));
  }
  d.classes = *std::max_element(d.labels.begin(), d.labels.end()) + 1;
  return d;
}

Batch sample_batch(const Dataset& data, std::int64_t size, Rng& rng, DType dtype) {
  const Shape& s = data.images.shape();
  const std::size_t per = s.numel() / static_cast<std::size_t>(s[0]);
  std::vector<double> pixels(static_cast<std::size_t>(size) * per);
  Batch b;
  for (std::int64_t i = 0; i < size; ++i) {
    const auto k = static_cast<std::size_t>(rng.uniform_int(0, s[0] - 1));
    std::copy_n(data.images.data() + k * per, per, pixels.begin() + static_cast<std::ptrdiff_t>(i * per));
    b.y.push_back(data.labels[k]);
  }
  b.x = Tensor(Shape{size, s[1], s[2], s[3]}, std::move(pixels), dtype);
  return b;
}

std::vector<Phase> parse_phases(const std::string& text) {
  std::vector<Phase> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw InputError("phase '" + item + "': expected <mode>:<steps>");
    Phase p;
    p.mode = parse_mode(item.substr(0, colon));
    try {
      p.steps = std::stoll(item.substr(colon + 1));
    } catch (const std::exception&) {
      throw InputError("phase '" + item + "': bad step count");
    }
    if (p.steps < 1) throw InputError("phase '" + item + "': steps must be >= 1");
    out.push_back(p);
  }
  if (out.empty()) throw InputError("empty phase list");
  return out;
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InputError("learning rate must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InputError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw InputError("weight decay must be >= 0");
  if (batch < 1) throw InputError("batch size must be >= 1");
  if (cycles < 1) throw InputError("cycles must be >= 1");
  if (calibration_batches < 0) throw InputError("calibration batches must be >= 0");
  if (phases.empty()) throw InputError("no training phases");
  for (const Phase& p : phases)
    if (p.steps < 1) throw InputError("every phase needs steps >= 1");
}

std::int64_t TrainConfig::total_steps() const {
  std::int64_t n = 0;
  for (const Phase& p : phases) n += p.steps;
  return n * cycles;
}

std::vector<std::string> optimizer_params(const graph::Graph& g, const TrainConfig& cfg) {
  std::set<std::string> frozen;
  for (const graph::Node& n : g.nodes()) {
    if (graph::is_conv(n.op)) {
      if (cfg.freeze_conv_bias) frozen.insert(*n.param + ".bias");
      if (cfg.freeze_bn_affine && n.attrs.contains("bn_param")) {
        const auto q = n.attrs.at("bn_param").get<std::string>();
        frozen.insert(q + ".gamma");
        frozen.insert(q + ".beta");
      }
    } else if (graph::is_bn(n.op) && cfg.freeze_bn_affine) {
      frozen.insert(*n.param + ".gamma");
      frozen.insert(*n.param + ".beta");
    }
  }
  std::vector<std::string> out;
  for (const auto& name : graph::trainable_params(g))
    if (!frozen.count(name)) out.push_back(name);
  return out;
}

namespace {

void enter_mode(graph::Graph& g, Mode mode) {
  if (mode == Mode::Tune || mode == Mode::Deploy) {
    graph::switch_mode(g, mode);
  } else if (!g.reserved_bns().empty()) {
    graph::revert(g);
  }
}

double accuracy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  const auto k = static_cast<std::size_t>(logits.dim(1));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double* row = logits.data() + i * k;
    if (static_cast<std::int64_t>(std::max_element(row, row + k) - row) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace

TrainResult train(graph::Graph g, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  for (auto& [name, t] : g.params()) t = t.to(cfg.dtype);

  if (cfg.calibration_batches > 0) {
    enter_mode(g, Mode::Train);
    Rng crng(cfg.seed ^ 0xC0FFEE1234567ULL);
    for (std::int64_t i = 0; i < cfg.calibration_batches; ++i) {
      const Batch b = sample_batch(data, cfg.batch, crng, cfg.dtype);
      graph::apply_running_updates(g, graph::execute_forward(g, b.x, graph::BnMode::Train));
    }
  }

  Rng rng(cfg.seed);
  std::map<std::string, std::vector<double>> velocity;
  TrainResult result;
  std::int64_t step = 0;
  bool first = true;
  Mode current = Mode::Eval;
  for (std::int64_t cycle = 0; cycle < cfg.cycles; ++cycle) {
    for (const Phase& phase : cfg.phases) {
      if (first || phase.mode != current) {
        // Deploy renames what the conv weight/bias slots mean; stale momentum
        // would be applied in the wrong parameterization.
        if (!first && (phase.mode == Mode::Deploy || current == Mode::Deploy)) velocity.clear();
        enter_mode(g, phase.mode);
        if (!first) result.switch_steps.push_back(step);
        current = phase.mode;
        first = false;
      }
      const auto bn_mode = current == Mode::Train ? graph::BnMode::Train : graph::BnMode::Eval;
      const auto names = optimizer_params(g, cfg);
      for (std::int64_t s = 0; s < phase.steps; ++s, ++step) {
        const Batch b = sample_batch(data, cfg.batch, rng, cfg.dtype);
        const auto fwd = graph::execute_forward(g, b.x, bn_mode);
        const auto xent = nn::softmax_xent(fwd.output, b.y);
        if (!std::isfinite(xent.loss)) {
          throw Error("non-finite loss at step " + std::to_string(step) + " in " +
                      std::string(mode_name(current)) + " mode");
        }
        const auto bwd = graph::execute_backward(g, fwd, xent.dlogits);
        if (bn_mode == graph::BnMode::Train) graph::apply_running_updates(g, fwd);
        for (const auto& name : names) {
          const Tensor& p = g.param(name);
          const Tensor& grad = bwd.grads.at(name);
          auto& v = velocity[name];
          if (v.empty()) v.assign(p.numel(), 0.0);
          std::vector<double> next(p.numel());
          for (std::size_t k = 0; k < p.numel(); ++k) {
            v[k] = cfg.momentum * v[k] + (grad[k] + cfg.weight_decay * p[k]);
            next[k] = p[k] - cfg.lr * v[k];
          }
          g.params()[name] = Tensor(p.shape(), std::move(next), p.dtype());
        }
        result.steps.push_back({step, current, xent.loss, accuracy(fwd.output, b.y)});
      }
    }
  }
  result.graph = std::move(g);
  return result;
}

}  // namespace convbn::harness
