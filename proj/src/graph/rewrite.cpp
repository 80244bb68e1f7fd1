// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "convbn/rewrite.hpp"

#include <algorithm>

#include "convbn/errors.hpp"

namespace convbn::graph {
namespace {

const Tensor& take(const TensorMap& m, const std::string& name, const std::string& owner) {
  auto it = m.find(name);
  if (it == m.end()) throw SchemaError("reserved entry '" + owner + "' lacks tensor '" + name + "'");
  return it->second;
}

std::string pname(const Node& n) { return *n.param; }

void rewrite_tune(Graph& g, Node conv, Node bn, ReservedBn& r) {
  const std::string p = pname(conv), q = pname(bn);
  const nn::BNParams stats = bn_params(g, bn);
  const TuneBuffers buffers = make_tune_buffers(stats.running_mean, stats.running_var, stats.eps);
  g.params()[p + ".weight_coeff"] = buffers.weight_coeff;
  g.params()[p + ".bias_delta"] = buffers.bias_delta;
  r.tensors.emplace("running_mean", stats.running_mean);
  r.tensors.emplace("running_var", stats.running_var);
  g.params().erase(q + ".running_mean");
  g.params().erase(q + ".running_var");
  conv.attrs["fusion"] = "tune";
  conv.attrs["bn_param"] = q;
  g.replace_node(conv);
}

void rewrite_deploy(Graph& g, Node conv, Node bn, ReservedBn& r) {
  const std::string p = pname(conv), q = pname(bn);
  const nn::ConvParams cp = conv_params(g, conv);
  const nn::BNParams bp = bn_params(g, bn);
  const FusedParams fused =
      fuse_params(cp.weight, cp.bias, bp.gamma, bp.beta, bp.running_mean, bp.running_var, bp.eps);
  r.tensors.emplace("weight", cp.weight);
  if (cp.bias) r.tensors.emplace("bias", *cp.bias);
  r.tensors.emplace("gamma", bp.gamma);
  r.tensors.emplace("beta", bp.beta);
  r.tensors.emplace("running_mean", bp.running_mean);
  r.tensors.emplace("running_var", bp.running_var);
  r.tensors.emplace("fused_weight", fused.weight);
  r.tensors.emplace("fused_bias", fused.bias);
  g.params()[p + ".weight"] = fused.weight;
  g.params()[p + ".bias"] = fused.bias;
  for (const char* s : {".gamma", ".beta", ".running_mean", ".running_var"}) g.params().erase(q + s);
  conv.attrs["bias"] = true;
  conv.attrs["fusion"] = "deploy";
  conv.attrs["bn_param"] = q;
  g.replace_node(conv);
}

void revert_tune(Graph& g, Node& conv, const ReservedBn& r) {
  const std::string p = pname(conv);
  g.params().erase(p + ".weight_coeff");
  g.params().erase(p + ".bias_delta");
  g.params()[r.bn_param + ".running_mean"] = take(r.tensors, "running_mean", r.bn_param);
  g.params()[r.bn_param + ".running_var"] = take(r.tensors, "running_var", r.bn_param);
}

void revert_deploy(Graph& g, Node& conv, const ReservedBn& r) {
  const std::string p = pname(conv);
  const Tensor& w_now = g.param(p + ".weight");
  const Tensor& b_now = g.param(p + ".bias");
  const bool untouched = bitwise_equal(w_now, take(r.tensors, "fused_weight", r.bn_param)) &&
                         bitwise_equal(b_now, take(r.tensors, "fused_bias", r.bn_param));
  const Tensor& gamma = take(r.tensors, "gamma", r.bn_param);
  const Tensor& beta = take(r.tensors, "beta", r.bn_param);
  const Tensor& mean = take(r.tensors, "running_mean", r.bn_param);
  const Tensor& var = take(r.tensors, "running_var", r.bn_param);
  const double eps = r.bn_attrs.value("eps", nn::kDefaultEps);
  if (untouched) {
    g.params()[p + ".weight"] = take(r.tensors, "weight", r.bn_param);
    if (r.conv_had_bias) {
      g.params()[p + ".bias"] = take(r.tensors, "bias", r.bn_param);
    } else {
      g.params().erase(p + ".bias");
    }
    conv.attrs = r.conv_attrs;
  } else {
    // The fused parameters were trained: w = w' / c and b = (b' - beta) / c + mean.
    const TuneBuffers buffers = make_tune_buffers(mean, var, eps);
    const auto channels = static_cast<std::size_t>(w_now.dim(0));
    const std::size_t per = w_now.numel() / channels;
    std::vector<double> w(w_now.numel()), b(channels);
    for (std::size_t o = 0; o < channels; ++o) {
      const double c = buffers.weight_coeff[o] * gamma[o];
      if (c == 0.0) {
        throw ModeError("cannot unfuse channel " + std::to_string(o) + " of '" + conv.id + "': zero scale");
      }
      for (std::size_t k = o * per; k < (o + 1) * per; ++k) w[k] = w_now[k] / c;
      b[o] = (b_now[o] - beta[o]) / c - buffers.bias_delta[o];
    }
    g.params()[p + ".weight"] = Tensor(w_now.shape(), std::move(w), w_now.dtype());
    g.params()[p + ".bias"] = Tensor(b_now.shape(), std::move(b), b_now.dtype());
    conv.attrs = r.conv_attrs;
    conv.attrs["bias"] = true;
  }
  g.params()[r.bn_param + ".gamma"] = gamma;
  g.params()[r.bn_param + ".beta"] = beta;
  g.params()[r.bn_param + ".running_mean"] = mean;
  g.params()[r.bn_param + ".running_var"] = var;
}

}  // namespace

std::string_view skip_reason_name(SkipReason r) {
  switch (r) {
    case SkipReason::MultiConsumer: return "multi_consumer";
    case SkipReason::NoBnFollower: return "no_bn_follower";
    case SkipReason::UnsupportedDim: return "unsupported_dim";
  }
  return "?";
}

PairSearch find_convbn_pairs(const Graph& g) {
  PairSearch out;
  for (const Node& n : g.nodes()) {
    if (!is_conv(n.op)) continue;
    if (n.attrs.contains("fusion")) {
      out.skipped.push_back({n.id, SkipReason::NoBnFollower});
      continue;
    }
    const bool feeds_bn = std::any_of(n.users.begin(), n.users.end(), [&](const std::string& u) {
      const Node& user = g.node(u);
      return is_bn(user.op) && spatial_dims(user.op) == spatial_dims(n.op);
    });
    if (!feeds_bn) {
      out.skipped.push_back({n.id, SkipReason::NoBnFollower});
    } else if (n.users.size() > 1) {
      out.skipped.push_back({n.id, SkipReason::MultiConsumer});
    } else if (n.op != OpKind::Conv2d) {
      out.skipped.push_back({n.id, SkipReason::UnsupportedDim});
    } else {
      out.pairs.push_back({n.id, n.users.front()});
    }
  }
  return out;
}

Json RewriteReport::to_json() const {
  Json rw = Json::array(), sk = Json::array();
  for (const auto& e : rewritten) rw.push_back({{"conv", e.conv_id}, {"bn", e.bn_id}, {"mode", mode_name(e.mode)}});
  for (const auto& s : skipped) sk.push_back({{"node", s.node_id}, {"reason", skip_reason_name(s.reason)}});
  return Json{{"action", action}, {"rewritten", std::move(rw)}, {"skipped", std::move(sk)}};
}

RewriteReport turn_on(Graph& g, Mode mode) {
  if (mode != Mode::Tune && mode != Mode::Deploy) {
    throw ModeError("turn_on supports tune and deploy, not " + std::string(mode_name(mode)));
  }
  const PairSearch search = find_convbn_pairs(g);
  RewriteReport report{"turn_on:" + std::string(mode_name(mode)), {}, search.skipped};
  for (const auto& pair : search.pairs) {
    const Node conv = g.node(pair.conv_id);
    const Node bn = g.node(pair.bn_id);
    ReservedBn r;
    r.conv_id = conv.id;
    r.bn_id = bn.id;
    r.mode = mode;
    r.bn_op = bn.op;
    r.bn_param = *bn.param;
    r.bn_attrs = bn.attrs;
    r.conv_attrs = conv.attrs;
    r.conv_had_bias = conv.attrs.value("bias", false);
    if (mode == Mode::Tune) {
      rewrite_tune(g, conv, bn, r);
    } else {
      rewrite_deploy(g, conv, bn, r);
    }
    Node id = bn;
    id.op = OpKind::Identity;
    id.param.reset();
    id.attrs = Json::object();
    g.replace_node(id);
    g.reserved_bns().push_back(std::move(r));
    report.rewritten.push_back({pair.conv_id, pair.bn_id, mode});
  }
  g.validate();
  return report;
}

RewriteReport revert(Graph& g) {
  RewriteReport report{"revert", {}, {}};
  // Newest first so overlapping histories unwind in order.
  auto& reserved = g.reserved_bns();
  for (auto it = reserved.rbegin(); it != reserved.rend(); ++it) {
    const ReservedBn& r = *it;
    Node conv = g.node(r.conv_id);
    if (r.mode == Mode::Tune) {
      revert_tune(g, conv, r);
      conv.attrs = r.conv_attrs;
    } else {
      revert_deploy(g, conv, r);
    }
    g.replace_node(conv);
    Node bn = g.node(r.bn_id);
    bn.op = r.bn_op;
    bn.param = r.bn_param;
    bn.attrs = r.bn_attrs;
    g.replace_node(bn);
    report.rewritten.insert(report.rewritten.begin(), {r.conv_id, r.bn_id, r.mode});
  }
  reserved.clear();
  g.validate();
  return report;
}

RewriteReport switch_mode(Graph& g, Mode target) {
  RewriteReport reverted = revert(g);
  if (target == Mode::Tune || target == Mode::Deploy) return turn_on(g, target);
  reverted.action = "switch:" + std::string(mode_name(target));
  return reverted;
}

}  // namespace convbn::graph
