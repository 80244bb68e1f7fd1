// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "convbn/convbn_block.hpp"
#include "convbn/errors.hpp"
#include "convbn/harness.hpp"
#include "convbn/tensor_ops.hpp"
#include "instances.hpp"

namespace convbn::harness {
namespace {

using detail::inner;
using detail::numeric_grad;

struct Check {
  std::string param;
  Tensor analytic;
  Tensor numeric;
  bool structural_zero = false;
};

struct Worst {
  double err = 0.0;
  std::string where;
  int flagged = 0;
  bool seen = false;
};

constexpr double kFloor = 1e-8;

void record(Worst& w, const std::vector<Check>& checks, int instance, std::uint64_t seed) {
  double scale = kFloor;
  for (const auto& c : checks)
    if (!c.structural_zero) scale = std::max({scale, max_abs(c.analytic), max_abs(c.numeric)});
  for (const auto& c : checks) {
    double e;
    if (c.structural_zero) {
      // Identically zero gradient: measured against the instance's gradient scale.
      e = std::max(max_abs(c.analytic), max_abs(c.numeric)) / scale;
    } else {
      e = detail::rel_error(c.analytic, c.numeric, kFloor);
    }
    const bool finite = std::isfinite(e);
    if (!finite) ++w.flagged;
    if (!w.seen || (!finite && std::isfinite(w.err)) || (std::isfinite(w.err) && e > w.err)) {
      w.err = e;
      w.where = c.param + ", instance " + std::to_string(instance) + " (seed " + std::to_string(seed) + ")";
      w.seen = true;
    }
  }
}

Tensor relu_safe(Rng& rng, const Shape& s) {
  auto v = rng.normal_tensor(s).to_vector();
  for (double& x : v) x = std::copysign(std::max(std::abs(x), 0.01), x);
  return Tensor(s, std::move(v));
}

nn::ConvParams with_weight(nn::ConvParams p, const Tensor& w) {
  p.weight = w;
  return p;
}

nn::ConvParams with_bias(nn::ConvParams p, const Tensor& b) {
  p.bias = b;
  return p;
}

nn::BNParams with_affine(nn::BNParams p, const Tensor* gamma, const Tensor* beta) {
  if (gamma) p.gamma = *gamma;
  if (beta) p.beta = *beta;
  return p;
}

/// Block loss <r, z> and all analytic gradients for one mode.
std::vector<Check> block_checks(Mode mode, const detail::BlockInstance& in, Rng& rng, double h,
                                BlockGrads* out_grads = nullptr) {
  const auto buffers = make_tune_buffers(in.bn.running_mean, in.bn.running_var, in.bn.eps);
  nn::ConvParams conv = in.conv;
  if (mode == Mode::Deploy) {
    const auto f = fuse_params(in.conv.weight, in.conv.bias, in.bn.gamma, in.bn.beta, in.bn.running_mean,
                               in.bn.running_var, in.bn.eps);
    conv.weight = f.weight;
    conv.bias = f.bias;
  } else if (!conv.bias) {
    conv.bias = Tensor::zeros(Shape{conv.out_channels()});
  }
  auto fwd = [&](const Tensor& x, const nn::ConvParams& cp, const nn::BNParams& bn) -> BlockForward {
    switch (mode) {
      case Mode::Train: return train_forward(x, cp, bn);
      case Mode::Eval: return eval_forward(x, cp, bn);
      case Mode::Tune: return tune_forward(x, cp, bn.gamma, bn.beta, buffers);
      case Mode::Deploy: return deploy_forward(x, cp);
    }
    throw ModeError("unknown mode");
  };
  const auto base = fwd(in.x, conv, in.bn);
  const Tensor r = rng.normal_tensor(base.z.shape());
  BlockGrads g;
  switch (mode) {
    case Mode::Train: g = train_backward(base.saved, r, conv, in.bn); break;
    case Mode::Eval: g = eval_backward(base.saved, r, conv, in.bn); break;
    case Mode::Tune: g = tune_backward(base.saved, r, conv, in.bn.gamma, buffers); break;
    case Mode::Deploy: g = deploy_backward(base.saved, r, conv); break;
  }
  std::vector<Check> out;
  out.push_back({"x", g.dx, numeric_grad([&](const Tensor& t) { return inner(r, fwd(t, conv, in.bn).z); }, in.x, h)});
  out.push_back({"weight", g.dweight, numeric_grad([&](const Tensor& t) {
                   return inner(r, fwd(in.x, with_weight(conv, t), in.bn).z);
                 }, conv.weight, h)});
  out.push_back({"bias", g.dbias, numeric_grad([&](const Tensor& t) {
                   return inner(r, fwd(in.x, with_bias(conv, t), in.bn).z);
                 }, *conv.bias, h), mode == Mode::Train});
  if (mode != Mode::Deploy) {
    out.push_back({"gamma", *g.dgamma, numeric_grad([&](const Tensor& t) {
                     return inner(r, fwd(in.x, conv, with_affine(in.bn, &t, nullptr)).z);
                   }, in.bn.gamma, h)});
    out.push_back({"beta", *g.dbeta, numeric_grad([&](const Tensor& t) {
                     return inner(r, fwd(in.x, conv, with_affine(in.bn, nullptr, &t)).z);
                   }, in.bn.beta, h)});
  }
  if (out_grads) *out_grads = g;
  return out;
}

using CaseFn = std::function<std::vector<Check>(Rng&, double)>;

std::vector<std::pair<std::string, CaseFn>> op_cases() {
  std::vector<std::pair<std::string, CaseFn>> cases;
  cases.emplace_back("conv2d", [](Rng& rng, double h) {
    const auto in = detail::random_block(rng, 3, 6);
    nn::ConvParams p = in.conv;
    if (!p.bias) p.bias = Tensor::zeros(Shape{p.out_channels()});
    const Tensor r = rng.normal_tensor(nn::conv2d_output_shape(in.x.shape(), p));
    const auto g = nn::conv2d_backward(in.x, p, r);
    return std::vector<Check>{
        {"x", g.dx, numeric_grad([&](const Tensor& t) { return inner(r, nn::conv2d_forward(t, p)); }, in.x, h)},
        {"weight", g.dweight, numeric_grad([&](const Tensor& t) {
           return inner(r, nn::conv2d_forward(in.x, with_weight(p, t)));
         }, p.weight, h)},
        {"bias", g.dbias, numeric_grad([&](const Tensor& t) {
           return inner(r, nn::conv2d_forward(in.x, with_bias(p, t)));
         }, *p.bias, h)}};
  });
  for (const bool train : {false, true}) {
    cases.emplace_back(train ? "bn_train" : "bn_eval", [train](Rng& rng, double h) {
      const std::int64_t c = rng.uniform_int(1, 4);
      const Shape s{rng.uniform_int(1, 3), c, rng.uniform_int(2, 5), rng.uniform_int(1, 5)};
      const Tensor y = rng.normal_tensor(s, 0.5, 1.5);
      nn::BNParams p{rng.uniform_tensor(Shape{c}, 0.5, 1.5), rng.normal_tensor(Shape{c}, 0.0, 0.3),
                     rng.normal_tensor(Shape{c}, 0.0, 0.5), rng.uniform_tensor(Shape{c}, 0.5, 2.0)};
      const Tensor r = rng.normal_tensor(s);
      auto f = [&](const Tensor& yy, const nn::BNParams& pp) {
        return train ? nn::bn_train_forward(yy, pp).z : nn::bn_eval_forward(yy, pp);
      };
      nn::BNGrads g;
      if (train) {
        g = nn::bn_train_backward(r, y, nn::bn_train_forward(y, p).stats, p);
      } else {
        g = nn::bn_eval_backward(r, y, p);
      }
      return std::vector<Check>{
          {"y", g.dy, numeric_grad([&](const Tensor& t) { return inner(r, f(t, p)); }, y, h)},
          {"gamma", g.dgamma, numeric_grad([&](const Tensor& t) {
             return inner(r, f(y, with_affine(p, &t, nullptr)));
           }, p.gamma, h)},
          {"beta", g.dbeta, numeric_grad([&](const Tensor& t) {
             return inner(r, f(y, with_affine(p, nullptr, &t)));
           }, p.beta, h)}};
    });
  }
  cases.emplace_back("relu", [](Rng& rng, double h) {
    const Shape s{rng.uniform_int(1, 3), rng.uniform_int(1, 4), rng.uniform_int(1, 5), rng.uniform_int(1, 5)};
    const Tensor x = relu_safe(rng, s);
    const Tensor r = rng.normal_tensor(s);
    const auto g = nn::relu_backward(r, nn::relu_forward(x).mask);
    return std::vector<Check>{
        {"x", g, numeric_grad([&](const Tensor& t) { return inner(r, nn::relu_forward(t).y); }, x, h)}};
  });
  cases.emplace_back("global_avg_pool", [](Rng& rng, double h) {
    const Shape s{rng.uniform_int(1, 3), rng.uniform_int(1, 4), rng.uniform_int(1, 5), rng.uniform_int(1, 5)};
    const Tensor x = rng.normal_tensor(s);
    const Tensor r = rng.normal_tensor(Shape{s[0], s[1]});
    const auto g = nn::global_avg_pool_backward(r, s);
    return std::vector<Check>{
        {"x", g, numeric_grad([&](const Tensor& t) { return inner(r, nn::global_avg_pool_forward(t)); }, x, h)}};
  });
  cases.emplace_back("linear", [](Rng& rng, double h) {
    const std::int64_t n = rng.uniform_int(1, 3), f = rng.uniform_int(1, 6), k = rng.uniform_int(1, 5);
    const Tensor x = rng.normal_tensor(Shape{n, f});
    const Tensor w = rng.normal_tensor(Shape{k, f}, 0.0, 0.5);
    const Tensor b = rng.normal_tensor(Shape{k}, 0.0, 0.5);
    const Tensor r = rng.normal_tensor(Shape{n, k});
    const auto g = nn::linear_backward(x, w, r);
    return std::vector<Check>{
        {"x", g.dx, numeric_grad([&](const Tensor& t) { return inner(r, nn::linear_forward(t, w, b)); }, x, h)},
        {"weight", g.dweight, numeric_grad([&](const Tensor& t) { return inner(r, nn::linear_forward(x, t, b)); }, w, h)},
        {"bias", g.dbias, numeric_grad([&](const Tensor& t) { return inner(r, nn::linear_forward(x, w, t)); }, b, h)}};
  });
  cases.emplace_back("softmax_xent", [](Rng& rng, double h) {
    const std::int64_t n = rng.uniform_int(1, 4), k = rng.uniform_int(2, 5);
    const Tensor logits = rng.normal_tensor(Shape{n, k}, 0.0, 2.0);
    std::vector<std::int64_t> labels;
    for (std::int64_t i = 0; i < n; ++i) labels.push_back(rng.uniform_int(0, k - 1));
    const auto s = nn::softmax_xent(logits, labels);
    return std::vector<Check>{
        {"logits", s.dlogits, numeric_grad([&](const Tensor& t) { return nn::softmax_xent(t, labels).loss; }, logits, h)}};
  });
  for (const Mode mode : {Mode::Train, Mode::Eval, Mode::Tune, Mode::Deploy}) {
    cases.emplace_back("block_" + std::string(mode_name(mode)), [mode](Rng& rng, double h) {
      const auto in = detail::random_block(rng, 3, 6);
      return block_checks(mode, in, rng, h);
    });
  }
  return cases;
}

}  // namespace

ExperimentReport cmd_gradcheck(const GradcheckOptions& opt) {
  if (opt.instances < 1) throw InputError("gradcheck: instances must be >= 1");
  if (!(opt.h > 0.0)) throw InputError("gradcheck: step must be > 0");
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport r;
  r.experiment = "gradcheck";
  r.config = {{"seed", opt.seed}, {"instances", opt.instances}, {"h", opt.h}, {"threshold", opt.threshold},
              {"dtype", "f64"}};

  Json per_case = Json::object();
  std::uint64_t stream = 0;
  for (const auto& [name, fn] : op_cases()) {
    Worst w;
    for (int i = 0; i < opt.instances; ++i) {
      const std::uint64_t seed = opt.seed + 1000 * ++stream;
      Rng rng(seed);
      record(w, fn(rng, opt.h), i, seed);
    }
    per_case[name] = {{"max_rel_error", std::isfinite(w.err) ? Json(w.err) : Json("non-finite")},
                      {"worst", w.where}, {"non_finite", w.flagged}};
    r.check("fd_" + name, w.flagged ? NAN : w.err, Compare::LessEqual, opt.threshold, w.where);
  }
  r.metrics["per_case"] = per_case;

  // Tune analytic gradients against Eval's on the same instances.
  double cross = 0.0;
  std::string cross_where;
  for (int i = 0; i < opt.instances; ++i) {
    const std::uint64_t seed = opt.seed + 7919 * static_cast<std::uint64_t>(i + 1);
    Rng rng(seed);
    const auto in = detail::random_block(rng, 3, 6);
    const auto buffers = make_tune_buffers(in.bn.running_mean, in.bn.running_var, in.bn.eps);
    const auto ev = eval_forward(in.x, in.conv, in.bn);
    const auto tu = tune_forward(in.x, in.conv, in.bn.gamma, in.bn.beta, buffers);
    const Tensor dz = rng.normal_tensor(ev.z.shape());
    const auto ge = eval_backward(ev.saved, dz, in.conv, in.bn);
    const auto gt = tune_backward(tu.saved, dz, in.conv, in.bn.gamma, buffers);
    for (const double e : {detail::rel_error(ge.dx, gt.dx), detail::rel_error(ge.dweight, gt.dweight),
                           detail::rel_error(ge.dbias, gt.dbias), detail::rel_error(*ge.dgamma, *gt.dgamma),
                           detail::rel_error(*ge.dbeta, *gt.dbeta)}) {
      if (!(e <= cross)) {
        cross = e;
        cross_where = "instance " + std::to_string(i) + " (seed " + std::to_string(seed) + ")";
      }
    }
  }
  r.check("tune_matches_eval_rel", cross, Compare::LessEqual, opt.cross_mode_threshold, cross_where);

  // Zero input: the weight gradient is exactly zero analytically and numerically.
  double zero_worst = 0.0;
  for (const Mode mode : {Mode::Train, Mode::Eval, Mode::Tune, Mode::Deploy}) {
    Rng rng(opt.seed + 31 + static_cast<std::uint64_t>(mode));
    auto in = detail::random_block(rng, 3, 6);
    in.x = Tensor::zeros(in.x.shape());
    for (const auto& c : block_checks(mode, in, rng, opt.h)) {
      if (c.param != "weight") continue;
      zero_worst = std::max({zero_worst, max_abs(c.analytic), max_abs(c.numeric)});
    }
  }
  {
    Rng rng(opt.seed + 37);
    auto in = detail::random_block(rng, 3, 6);
    in.x = Tensor::zeros(in.x.shape());
    const Tensor r0 = rng.normal_tensor(nn::conv2d_output_shape(in.x.shape(), in.conv));
    const auto g = nn::conv2d_backward(in.x, in.conv, r0);
    const Tensor num = numeric_grad([&](const Tensor& t) {
      return inner(r0, nn::conv2d_forward(in.x, with_weight(in.conv, t)));
    }, in.conv.weight, opt.h);
    zero_worst = std::max({zero_worst, max_abs(g.dweight), max_abs(num)});
  }
  r.check("zero_input_weight_grad_max_abs", zero_worst, Compare::Equal, 0.0, "conv2d and blocks in every mode");

  r.nondeterministic["seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace convbn::harness
