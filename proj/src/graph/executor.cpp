// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "convbn/executor.hpp"

#include <algorithm>

#include "convbn/errors.hpp"
#include "convbn/tensor_ops.hpp"

namespace convbn::graph {
namespace {

std::string fusion_of(const Node& n) { return n.attrs.value("fusion", std::string()); }

TuneBuffers tune_buffers(const Graph& g, const Node& n) {
  return {g.param(*n.param + ".weight_coeff"), g.param(*n.param + ".bias_delta")};
}

const Tensor& saved(const NodeTape& t, const std::string& name) {
  for (const auto& e : t.saved)
    if (e.name == name) return e.tensor;
  throw ModeError("node '" + t.node_id + "' did not save '" + name + "'");
}

SavedForBackward as_block_saved(const NodeTape& t, Mode mode) {
  SavedForBackward s{mode, {}};
  for (const auto& e : t.saved) s.tensors.emplace(e.name, e.tensor);
  return s;
}

template <typename F>
auto at_node(const Node& n, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ShapeError& e) {
    throw ShapeError("node '" + n.id + "' (" + std::string(op_name(n.op)) + "): " + e.what());
  }
}

void accumulate(std::map<std::string, Tensor>& into, const std::string& key, const Tensor& g) {
  auto it = into.find(key);
  if (it == into.end()) {
    into.emplace(key, g);
  } else {
    it->second = add(it->second, g);
  }
}

}  // namespace

ForwardResult execute_forward(const Graph& g, const Tensor& x, BnMode bn_mode) {
  ForwardResult r;
  r.bn_mode = bn_mode;
  r.input_shape = x.shape();
  const auto shapes = infer_shapes(g, x.shape());
  std::map<std::string, Tensor> values;
  for (const std::string& id : g.topo_order()) {
    const Node& n = g.node(id);
    NodeTape tape{id, {}, {}};
    auto in = [&](std::size_t k) -> const Tensor& { return values.at(n.inputs[k]); };
    if (!n.inputs.empty()) tape.input_shape = in(0).shape();
    Tensor out;
    at_node(n, [&] {
      switch (n.op) {
        case OpKind::Input: out = x; break;
        case OpKind::Output:
        case OpKind::Identity: out = in(0); break;
        case OpKind::Conv2d: {
          const nn::ConvParams cp = conv_params(g, n);
          if (fusion_of(n) == "tune") {
            const std::string q = n.attrs.at("bn_param").get<std::string>();
            auto f = tune_forward(in(0), cp, g.param(q + ".gamma"), g.param(q + ".beta"), tune_buffers(g, n));
            out = f.z;
            tape.saved = {{"X", in(0)},
                          {"weight_fused", f.saved.get("weight_fused")},
                          {"bias_fused", f.saved.get("bias_fused")}};
          } else {
            out = nn::conv2d_forward(in(0), cp);
            tape.saved = {{"X", in(0)}};
          }
          break;
        }
        case OpKind::Bn2d: {
          const nn::BNParams bp = bn_params(g, n);
          if (bn_mode == BnMode::Eval) {
            out = nn::bn_eval_forward(in(0), bp);
            tape.saved = {{"Y", in(0)}};
          } else {
            auto f = nn::bn_train_forward(in(0), bp);
            out = f.z;
            tape.saved = {{"xhat", f.xhat}, {"batch_mean", f.stats.mean}, {"batch_var", f.stats.var}};
            r.running_updates.emplace(*n.param, f.running);
          }
          break;
        }
        case OpKind::Relu: {
          out = nn::relu_forward(in(0)).y;
          tape.saved = {{"out", out}};
          break;
        }
        case OpKind::Add: {
          out = in(0);
          for (std::size_t k = 1; k < n.inputs.size(); ++k) out = add(out, in(k));
          break;
        }
        case OpKind::GlobalAvgPool: out = nn::global_avg_pool_forward(in(0)); break;
        case OpKind::Linear: {
          out = nn::linear_forward(in(0), g.param(*n.param + ".weight"), g.param(*n.param + ".bias"));
          tape.saved = {{"X", in(0)}};
          break;
        }
        default: throw ShapeError("op is not executable");
      }
    });
    if (out.shape() != shapes.at(id)) {
      throw ShapeError("node '" + id + "' produced " + out.shape().str() + ", expected " + shapes.at(id).str());
    }
    values.emplace(id, out);
    r.tape.push_back(std::move(tape));
  }
  r.output = values.at(g.output_id());
  return r;
}

BackwardResult execute_backward(const Graph& g, const ForwardResult& fwd, const Tensor& dout) {
  BackwardResult result;
  std::map<std::string, Tensor> grad;  // gradient w.r.t. each node's output
  grad.emplace(g.output_id(), dout);
  for (auto it = fwd.tape.rbegin(); it != fwd.tape.rend(); ++it) {
    const NodeTape& t = *it;
    const Node& n = g.node(t.node_id);
    auto git = grad.find(n.id);
    if (git == grad.end()) continue;  // no path to the output
    const Tensor dy = git->second;
    auto send = [&](std::size_t k, const Tensor& d) { accumulate(grad, n.inputs[k], d); };
    at_node(n, [&] {
      switch (n.op) {
        case OpKind::Input: result.dx = dy; break;
        case OpKind::Output:
        case OpKind::Identity: send(0, dy); break;
        case OpKind::Conv2d: {
          const nn::ConvParams cp = conv_params(g, n);
          const std::string& p = *n.param;
          if (fusion_of(n) == "tune") {
            const std::string q = n.attrs.at("bn_param").get<std::string>();
            const auto bg = tune_backward(as_block_saved(t, Mode::Tune), dy, cp, g.param(q + ".gamma"),
                                          tune_buffers(g, n));
            send(0, bg.dx);
            accumulate(result.grads, p + ".weight", bg.dweight);
            if (cp.bias) accumulate(result.grads, p + ".bias", bg.dbias);
            accumulate(result.grads, q + ".gamma", *bg.dgamma);
            accumulate(result.grads, q + ".beta", *bg.dbeta);
          } else {
            const auto cg = nn::conv2d_backward(saved(t, "X"), cp, dy);
            send(0, cg.dx);
            accumulate(result.grads, p + ".weight", cg.dweight);
            if (cp.bias) accumulate(result.grads, p + ".bias", cg.dbias);
          }
          break;
        }
        case OpKind::Bn2d: {
          const nn::BNParams bp = bn_params(g, n);
          nn::BNGrads bg;
          if (fwd.bn_mode == BnMode::Eval) {
            bg = nn::bn_eval_backward(dy, saved(t, "Y"), bp);
          } else {
            bg = nn::bn_train_backward_from_xhat(dy, saved(t, "xhat"),
                                                 {saved(t, "batch_mean"), saved(t, "batch_var")}, bp);
          }
          send(0, bg.dy);
          accumulate(result.grads, *n.param + ".gamma", bg.dgamma);
          accumulate(result.grads, *n.param + ".beta", bg.dbeta);
          break;
        }
        case OpKind::Relu: {
          const Tensor& out = saved(t, "out");
          auto mask = std::make_shared<std::vector<std::uint8_t>>(out.numel());
          for (std::size_t k = 0; k < out.numel(); ++k) (*mask)[k] = out[k] > 0.0;
          send(0, nn::relu_backward(dy, mask));
          break;
        }
        case OpKind::Add:
          for (std::size_t k = 0; k < n.inputs.size(); ++k) send(k, dy);
          break;
        case OpKind::GlobalAvgPool: send(0, nn::global_avg_pool_backward(dy, t.input_shape)); break;
        case OpKind::Linear: {
          const auto lg = nn::linear_backward(saved(t, "X"), g.param(*n.param + ".weight"), dy);
          send(0, lg.dx);
          accumulate(result.grads, *n.param + ".weight", lg.dweight);
          accumulate(result.grads, *n.param + ".bias", lg.dbias);
          break;
        }
        default: throw ShapeError("op is not executable");
      }
    });
  }
  return result;
}

void apply_running_updates(Graph& g, const ForwardResult& fwd) {
  for (const auto& [param, running] : fwd.running_updates) {
    g.params()[param + ".running_mean"] = running.mean;
    g.params()[param + ".running_var"] = running.var;
  }
}

}  // namespace convbn::graph
