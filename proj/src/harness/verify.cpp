// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <string>

#include "convbn/convbn_block.hpp"
#include "convbn/errors.hpp"
#include "convbn/harness.hpp"
#include "convbn/tensor_ops.hpp"
#include "instances.hpp"

namespace convbn::harness {
namespace {

struct Tracker {
  double threshold = 0.0;
  double worst = 0.0;
  std::uint64_t worst_seed = 0;
  int worst_instance = -1;
  std::vector<std::string> failures;

  void observe(double v, int instance, std::uint64_t seed, const std::string& what) {
    if (!std::isfinite(v) || v > threshold) {
      failures.push_back("instance " + std::to_string(instance) + " (seed " + std::to_string(seed) + "): " + what);
    }
    const bool now_bad = !std::isfinite(v), was_bad = !std::isfinite(worst);
    if (worst_instance < 0 || (now_bad && !was_bad) || (!was_bad && v > worst)) {
      worst = v;
      worst_seed = seed;
      worst_instance = instance;
    }
  }
};

/// Per-output-channel relative difference, worst channel.
double per_channel_rel(const Tensor& a, const Tensor& b) {
  const auto co = static_cast<std::size_t>(a.dim(0));
  const std::size_t per = a.numel() / co;
  double worst = 0.0;
  for (std::size_t o = 0; o < co; ++o) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t k = o * per; k < (o + 1) * per; ++k) {
      diff = std::max(diff, std::abs(a[k] - b[k]));
      scale = std::max({scale, std::abs(a[k]), std::abs(b[k])});
    }
    if (diff > 0.0) worst = std::max(worst, scale > 0.0 ? diff / scale : INFINITY);
  }
  return worst;
}

Shape random_shape(Rng& rng, std::size_t rank) {
  std::vector<std::int64_t> e;
  for (std::size_t i = 0; i < rank; ++i) e.push_back(rng.uniform_int(1, 5));
  return Shape(std::move(e));
}

/// A shape that broadcasts to `to`: a suffix of it with some extents set to 1.
Shape broadcast_source(Rng& rng, const Shape& to) {
  const auto rank = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(to.rank())));
  std::vector<std::int64_t> e;
  for (std::size_t i = to.rank() - rank; i < to.rank(); ++i) e.push_back(rng.uniform() < 0.4 ? 1 : to[i]);
  return Shape(std::move(e));
}

}  // namespace

ExperimentReport cmd_verify(const VerifyOptions& opt) {
  if (opt.instances < 1) throw InputError("verify: instances must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport r;
  r.experiment = "verify";
  r.config = {{"seed", opt.seed}, {"instances", opt.instances}, {"inject_fault", opt.inject_fault}};
  if (opt.inject_fault) r.config["fault_instance"] = opt.fault_instance;

  std::map<std::string, Tracker> t;
  for (const auto& [name, threshold] :
       {std::pair{"eval_tune_forward_max_abs", 1e-10}, {"eval_tune_backward_rel", 1e-9},
        {"deploy_forward_max_abs", 1e-10}, {"deploy_gradient_scaling_rel", 1e-10},
        {"conv_scale_associativity_rel", 1e-10}, {"broadcast_adjoint_rel", 1e-10}}) {
    t[name].threshold = threshold;
  }
  Json per_grad = Json::object();
  std::map<std::string, double> grad_worst;

  for (int i = 0; i < opt.instances; ++i) {
    const std::uint64_t seed = opt.seed + static_cast<std::uint64_t>(i);
    Rng rng(seed);
    const auto inst = detail::random_block(rng, 8, 16);
    const auto buffers = make_tune_buffers(inst.bn.running_mean, inst.bn.running_var, inst.bn.eps);
    const bool faulty = opt.inject_fault && i == opt.fault_instance;

    const auto ev = eval_forward(inst.x, inst.conv, inst.bn);
    auto tu = tune_forward(inst.x, inst.conv, inst.bn.gamma, inst.bn.beta, buffers);
    if (faulty) {
      // Tune path with a corrupted w'.
      auto fused = fuse_with_buffers(inst.conv.weight, inst.conv.bias, inst.bn.gamma, inst.bn.beta, buffers);
      auto w = fused.weight.to_vector();
      w[0] += 1e-3;
      nn::ConvParams bad{Tensor(fused.weight.shape(), std::move(w)), fused.bias, inst.conv.stride, inst.conv.padding};
      tu.z = nn::conv2d_forward(inst.x, bad);
      tu.saved.tensors["weight_fused"] = bad.weight;
    }
    const std::string block = inst.describe();
    t["eval_tune_forward_max_abs"].observe(max_abs_diff(ev.z, tu.z), i, seed, block);

    const Tensor dz = rng.normal_tensor(ev.z.shape());
    const auto ge = eval_backward(ev.saved, dz, inst.conv, inst.bn);
    const auto gt = tune_backward(tu.saved, dz, inst.conv, inst.bn.gamma, buffers);
    const std::pair<const char*, double> parts[] = {
        {"dx", detail::rel_error(ge.dx, gt.dx)},         {"dweight", detail::rel_error(ge.dweight, gt.dweight)},
        {"dbias", detail::rel_error(ge.dbias, gt.dbias)}, {"dgamma", detail::rel_error(*ge.dgamma, *gt.dgamma)},
        {"dbeta", detail::rel_error(*ge.dbeta, *gt.dbeta)}};
    double worst_part = 0.0;
    std::string worst_name = "dx";
    for (const auto& [name, v] : parts) {
      grad_worst[name] = std::max(grad_worst[name], v);
      if (!(v <= worst_part)) {
        worst_part = v;
        worst_name = name;
      }
    }
    t["eval_tune_backward_rel"].observe(worst_part, i, seed, worst_name + " of " + block);

    const auto fused = fuse_params(inst.conv.weight, inst.conv.bias, inst.bn.gamma, inst.bn.beta,
                                   inst.bn.running_mean, inst.bn.running_var, inst.bn.eps);
    const nn::ConvParams fp{fused.weight, fused.bias, inst.conv.stride, inst.conv.padding};
    const auto de = deploy_forward(inst.x, fp);
    t["deploy_forward_max_abs"].observe(max_abs_diff(de.z, ev.z), i, seed, block);
    const auto gd = deploy_backward(de.saved, dz, fp);
    const Tensor c = mul(inst.bn.gamma, rsqrt(add(inst.bn.running_var, Tensor::full(Shape{inst.bn.channels()}, inst.bn.eps))));
    const Tensor scaled = mul(gd.dweight, c.reshape(Shape{c.dim(0), 1, 1, 1}));
    t["deploy_gradient_scaling_rel"].observe(per_channel_rel(scaled, ge.dweight), i, seed, block);

    // (x * w) c == x * (c w), bias included on both sides.
    const Tensor s = rng.uniform_tensor(Shape{inst.conv.out_channels()}, 0.1, 10.0);
    const Tensor lhs = nn::channel_affine(nn::conv2d_forward(inst.x, inst.conv),
                                          std::vector<double>(s.numel(), 0.0), s.values(),
                                          std::vector<double>(s.numel(), 0.0), DType::F64);
    nn::ConvParams sc = inst.conv;
    sc.weight = mul(inst.conv.weight, s.reshape(Shape{s.dim(0), 1, 1, 1}));
    if (sc.bias) sc.bias = mul(*sc.bias, s);
    const Tensor rhs = nn::conv2d_forward(inst.x, sc);
    t["conv_scale_associativity_rel"].observe(max_abs_diff(lhs, rhs) / std::max(1.0, max_abs(lhs)), i, seed,
                                                  block);

    // <broadcast(a), b> == <a, reduce(b)>
    const Shape to = random_shape(rng, static_cast<std::size_t>(rng.uniform_int(1, 4)));
    const Shape from = broadcast_source(rng, to);
    const Tensor a = rng.normal_tensor(from);
    const Tensor b = rng.normal_tensor(to);
    const double left = detail::inner(broadcast_to(a, to), b);
    const double right = detail::inner(a, reduce_to(b, from));
    const double scale = std::max(1.0, std::max(std::abs(left), std::abs(right)));
    t["broadcast_adjoint_rel"].observe(std::abs(left - right) / scale, i, seed, from.str() + " -> " + to.str());
  }

  Json failures = Json::object();
  for (const auto& [name, tr] : t) {
    std::string detail = "worst instance " + std::to_string(tr.worst_instance) + " (seed " +
                         std::to_string(tr.worst_seed) + ")";
    if (!tr.failures.empty()) {
      detail = "failed: " + tr.failures.front();
      if (tr.failures.size() > 1) detail += " and " + std::to_string(tr.failures.size() - 1) + " more";
      failures[name] = tr.failures;
    }
    r.check(name, tr.worst, Compare::LessEqual, tr.threshold, detail);
  }
  for (const auto& [name, v] : grad_worst) per_grad[name] = v;
  r.metrics["eval_tune_backward_rel_by_gradient"] = per_grad;
  if (!failures.empty()) r.metrics["failures"] = failures;
  r.nondeterministic["seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace convbn::harness
