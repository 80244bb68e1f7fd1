// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cmath>
#include <sstream>

#include "convbn/convbn_block.hpp"
#include "convbn/fixtures.hpp"
#include "convbn/errors.hpp"
#include "convbn/harness.hpp"
#include "convbn/tensor_ops.hpp"

namespace convbn::harness {
namespace {

void check_coeffs(const std::vector<double>& c) {
  for (double v : c) {
    if (v == 0.0) throw InputError("coefficient 0 is not allowed: the Deploy gradient divides by gamma");
    if (!std::isfinite(v)) throw InputError("coefficients must be finite");
  }
}

std::vector<double> draw_coeffs(const StabilityOptions& opt, Rng& rng, std::size_t n) {
  std::vector<double> out;
  for (std::size_t k = 0; k < n; ++k) {
    out.push_back(opt.coeffs.empty() ? std::exp(rng.uniform(std::log(opt.lo), std::log(opt.hi)))
                                     : opt.coeffs[k % opt.coeffs.size()]);
  }
  return out;
}

/// gamma such that gamma * rsqrt(var + eps) == c per channel.
Tensor gamma_for(const std::vector<double>& c, const Tensor& var, double eps) {
  std::vector<double> g(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) g[k] = c[k] * std::sqrt(var[k] + eps);
  return Tensor(var.shape(), std::move(g), var.dtype());
}

void set_coefficients(graph::Graph& g, const StabilityOptions& opt, Rng& rng) {
  for (const auto& n : g.nodes()) {
    if (!graph::is_bn(n.op)) continue;
    const auto bn = graph::bn_params(g, n);
    const auto c = draw_coeffs(opt, rng, static_cast<std::size_t>(bn.channels()));
    g.params()[*n.param + ".gamma"] = gamma_for(c, bn.running_var, bn.eps);
  }
}

/// Fused first-layer weight of a graph in Eval (plain) or Deploy form.
Tensor first_fused_weight(const graph::Graph& g) {
  const auto& conv = g.node("c1");
  if (g.node("b1").op == graph::OpKind::Identity) return g.param(*conv.param + ".weight");
  const auto cp = graph::conv_params(g, conv);
  const auto bn = graph::bn_params(g, g.node("b1"));
  return fuse_params(cp.weight, cp.bias, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.eps).weight;
}

/// Coefficient of variation of per-output-channel norms.
double channel_dispersion(const Tensor& delta) {
  const auto co = static_cast<std::size_t>(delta.dim(0));
  const std::size_t per = delta.numel() / co;
  std::vector<double> norms;
  double mean = 0.0;
  for (std::size_t o = 0; o < co; ++o) {
    double s = 0.0;
    for (std::size_t k = o * per; k < (o + 1) * per; ++k) s += delta[k] * delta[k];
    norms.push_back(std::sqrt(s));
    mean += norms.back();
  }
  mean /= static_cast<double>(co);
  double var = 0.0;
  for (double v : norms) var += (v - mean) * (v - mean);
  return mean > 0.0 ? std::sqrt(var / static_cast<double>(co)) / mean : 0.0;
}

struct PairedRun {
  graph::Graph start;
  TrainResult eval;
  TrainResult deploy;
  double max_loss_gap = 0.0;
};

PairedRun paired_run(const StabilityOptions& opt, const std::vector<double>* fixed, Rng& rng, const Dataset& data) {
  graph::Graph g = toy_net(data, opt.seed);
  StabilityOptions o = opt;
  if (fixed) o.coeffs = *fixed;
  set_coefficients(g, o, rng);
  TrainConfig cfg;
  cfg.lr = opt.lr;
  cfg.batch = 16;
  cfg.seed = opt.seed;
  cfg.freeze_bn_affine = true;
  cfg.freeze_conv_bias = true;
  PairedRun out;
  out.start = g;
  cfg.phases = {{Mode::Eval, opt.steps}};
  out.eval = train(g, data, cfg);
  cfg.phases = {{Mode::Deploy, opt.steps}};
  out.deploy = train(g, data, cfg);
  for (std::size_t k = 0; k < out.eval.steps.size(); ++k) {
    out.max_loss_gap = std::max(out.max_loss_gap, std::abs(out.eval.steps[k].loss - out.deploy.steps[k].loss));
  }
  return out;
}

Json losses(const TrainResult& r) {
  Json a = Json::array();
  for (const auto& s : r.steps) a.push_back(s.loss);
  return a;
}

}  // namespace

void parse_coeff_spec(const std::string& text, StabilityOptions& opt) {
  if (text.rfind("loguniform:", 0) == 0) {
    std::stringstream ss(text.substr(11));
    char colon = 0;
    double lo = 0, hi = 0;
    if (!(ss >> lo >> colon >> hi) || colon != ':' || !(lo > 0.0) || !(hi >= lo)) {
      throw InputError("coefficient range '" + text + "': expected loguniform:<lo>:<hi> with 0 < lo <= hi");
    }
    opt.coeffs.clear();
    opt.lo = lo;
    opt.hi = hi;
    return;
  }
  std::vector<double> c;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      c.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InputError("coefficient list '" + text + "': bad value '" + item + "'");
    }
  }
  if (c.empty()) throw InputError("empty coefficient list");
  check_coeffs(c);
  opt.coeffs = std::move(c);
}

ExperimentReport cmd_stability(const StabilityOptions& opt) {
  check_coeffs(opt.coeffs);
  if (opt.coeffs.empty() && !(opt.lo > 0.0 && opt.hi >= opt.lo)) throw InputError("need 0 < lo <= hi");
  if (opt.steps < 1 || !(opt.lr > 0.0)) throw InputError("stability: steps >= 1 and lr > 0 required");
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport r;
  r.experiment = "stability";
  r.config = {{"seed", opt.seed}, {"steps", opt.steps}, {"lr", opt.lr}};
  if (opt.coeffs.empty()) {
    r.config["coeffs"] = {{"loguniform", {opt.lo, opt.hi}}, {"channels", opt.channels}};
  } else {
    r.config["coeffs"] = opt.coeffs;
  }
  Rng rng(opt.seed);

  // (a) one SGD step on the raw weight (Eval) vs on the fused weight (Deploy).
  const std::size_t m = opt.coeffs.empty() ? static_cast<std::size_t>(opt.channels) : opt.coeffs.size();
  const auto c = draw_coeffs(opt, rng, m);
  const auto co = static_cast<std::int64_t>(m);
  const Tensor x = rng.normal_tensor(Shape{2, 3, 8, 8});
  nn::ConvParams conv{rng.normal_tensor(Shape{co, 3, 3, 3}, 0.0, 0.5), rng.normal_tensor(Shape{co}, 0.0, 0.5),
                      {1, 1}, {1, 1}};
  nn::BNParams bn;
  bn.running_mean = rng.normal_tensor(Shape{co}, 0.0, 0.5);
  bn.running_var = rng.uniform_tensor(Shape{co}, 0.5, 2.0);
  bn.beta = rng.normal_tensor(Shape{co}, 0.0, 0.3);
  bn.gamma = gamma_for(c, bn.running_var, bn.eps);
  const auto fused = fuse_params(conv.weight, conv.bias, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.eps);
  const nn::ConvParams fp{fused.weight, fused.bias, conv.stride, conv.padding};
  const auto ev = eval_forward(x, conv, bn);
  const Tensor dz = rng.normal_tensor(ev.z.shape());
  const auto ge = eval_backward(ev.saved, dz, conv, bn);
  const auto gd = deploy_backward(deploy_forward(x, fp).saved, dz, fp);
  const double eta = opt.lr;
  const Tensor w_eval = sub(conv.weight, scale(ge.dweight, eta));
  const Tensor wf_eval = fuse_params(w_eval, conv.bias, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.eps).weight;
  const Tensor d_eval = sub(wf_eval, fused.weight);
  const Tensor d_deploy = sub(sub(fused.weight, scale(gd.dweight, eta)), fused.weight);
  const std::size_t per = d_eval.numel() / m;
  Json ratios = Json::array();
  double worst = 0.0;
  std::size_t worst_ch = 0;
  for (std::size_t o = 0; o < m; ++o) {
    double num = 0.0, den = 0.0;
    for (std::size_t k = o * per; k < (o + 1) * per; ++k) {
      num += d_eval[k] * d_deploy[k];
      den += d_deploy[k] * d_deploy[k];
    }
    const double ratio = den > 0.0 ? num / den : NAN;
    const double err = std::abs(ratio / (c[o] * c[o]) - 1.0);
    ratios.push_back({{"c", c[o]}, {"ratio", ratio}, {"c_squared", c[o] * c[o]}, {"rel_error", err}});
    if (!(err <= worst)) {
      worst = err;
      worst_ch = o;
    }
  }
  r.metrics["one_step"] = ratios;
  r.check("one_step_ratio_rel", worst, Compare::LessEqual, opt.one_step_tolerance,
          "channel " + std::to_string(worst_ch) + ", c = " + std::to_string(c[worst_ch]));

  // (b) multi-step training from identical fused state.
  const Dataset data = make_blobs(BlobSpec{}, opt.seed);
  const auto run = paired_run(opt, nullptr, rng, data);
  const Tensor w0 = first_fused_weight(run.start);
  const double disp_eval = channel_dispersion(sub(first_fused_weight(run.eval.graph), w0));
  const double disp_deploy = channel_dispersion(sub(first_fused_weight(run.deploy.graph), w0));
  r.metrics["multi_step"] = {{"eval_loss", losses(run.eval)},
                             {"deploy_loss", losses(run.deploy)},
                             {"max_loss_gap", run.max_loss_gap},
                             {"final_loss_eval", run.eval.steps.back().loss},
                             {"final_loss_deploy", run.deploy.steps.back().loss},
                             {"layer1_update_norm_dispersion", {{"eval", disp_eval}, {"deploy", disp_deploy}}}};

  // Identity coefficients: the two parameterizations coincide.
  const std::vector<double> ones{1.0};
  Rng rng1(opt.seed);
  const auto ident = paired_run(opt, &ones, rng1, data);
  r.metrics["identity_max_loss_gap"] = ident.max_loss_gap;
  r.check("identity_coeff_loss_gap", ident.max_loss_gap, Compare::LessEqual, 1e-9, "c = 1 in every channel");

  r.nondeterministic["seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace convbn::harness
