// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "convbn/memory_model.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "convbn/errors.hpp"
#include "convbn/rewrite.hpp"

namespace convbn::memory {
namespace {

using graph::Graph;
using graph::Json;
using graph::Node;
using graph::OpKind;

std::int64_t numel(const Shape& s) { return static_cast<std::int64_t>(s.numel()); }

// A retained tensor before deduplication: `value` identifies shared storage
// (empty for tensors private to the node).
struct Pending {
  std::string name;
  std::int64_t elements;
  std::string value;
};

class Accumulator {
 public:
  Accumulator(Mode mode, DType dtype, Shape input) {
    report_.mode = mode;
    report_.dtype = dtype;
    report_.input_shape = std::move(input);
  }

  void node(const Node& n, const std::vector<Pending>& saved) {
    if (saved.empty()) return;
    NodeFootprint f{n.id, std::string(graph::op_name(n.op)), {}, 0, 0};
    const auto width = static_cast<std::int64_t>(dtype_size(report_.dtype));
    for (const auto& p : saved) {
      SavedRecord r{p.name, p.elements, p.elements * width, {}};
      if (!p.value.empty()) {
        auto [it, fresh] = owner_.emplace(p.value, n.id);
        if (!fresh) r.shared_with = it->second;
      }
      if (r.shared_with.empty()) {
        f.elements += r.elements;
        f.bytes += r.bytes;
      }
      f.saved.push_back(std::move(r));
    }
    report_.total_elements += f.elements;
    report_.total_bytes += f.bytes;
    report_.nodes.push_back(std::move(f));
  }

  void snapshot(std::int64_t elements) {
    report_.snapshot_elements += elements;
    report_.snapshot_bytes += elements * static_cast<std::int64_t>(dtype_size(report_.dtype));
  }

  FootprintReport take() { return std::move(report_); }

 private:
  FootprintReport report_;
  std::map<std::string, std::string> owner_;
};

std::string fusion_of(const Node& n) { return n.attrs.value("fusion", std::string()); }

std::int64_t weight_elements(const Node& conv) {
  const auto k = conv.attrs.at("kernel").get<std::vector<std::int64_t>>();
  return conv.attrs.at("out_channels").get<std::int64_t>() * conv.attrs.at("in_channels").get<std::int64_t>() * k[0] *
         k[1];
}

}  // namespace

FootprintReport count_saved(const Graph& g, Mode mode, const Shape& input_shape, DType dtype) {
  const auto shapes = graph::infer_shapes(g, input_shape);
  // Virtual rewrite: conv id -> fusion kind, bn ids that become identities.
  std::map<std::string, std::string> fusion;
  std::set<std::string> dropped_bn;
  for (const Node& n : g.nodes())
    if (graph::is_conv(n.op) && n.attrs.contains("fusion")) fusion.emplace(n.id, fusion_of(n));
  if ((mode == Mode::Tune || mode == Mode::Deploy) && g.reserved_bns().empty()) {
    for (const auto& p : graph::find_convbn_pairs(g).pairs) {
      fusion[p.conv_id] = mode == Mode::Tune ? "tune" : "deploy";
      dropped_bn.insert(p.bn_id);
    }
  }
  // Aliases: identity/output nodes and dropped bns forward their input value.
  std::map<std::string, std::string> value_of;
  Accumulator acc(mode, dtype, input_shape);
  for (const std::string& id : g.topo_order()) {
    const Node& n = g.node(id);
    const bool alias = n.op == OpKind::Identity || n.op == OpKind::Output || dropped_bn.count(id);
    value_of[id] = alias ? value_of.at(n.inputs[0]) : id;
    auto in_value = [&] { return value_of.at(n.inputs[0]); };
    auto in_elems = [&] { return numel(shapes.at(n.inputs[0])); };
    std::vector<Pending> saved;
    if (n.op == OpKind::Conv2d) {
      saved.push_back({"X", in_elems(), in_value()});
      auto it = fusion.find(id);
      const std::int64_t co = n.attrs.at("out_channels");
      if (it != fusion.end() && it->second == "tune") {
        saved.push_back({"weight_fused", weight_elements(n), ""});
        saved.push_back({"bias_fused", co, ""});
      }
      if (it != fusion.end()) {
        bool had_bias = n.attrs.value("bias", false);
        for (const auto& r : g.reserved_bns())
          if (r.conv_id == id) had_bias = r.conv_had_bias;
        if (it->second == "tune") {
          acc.snapshot(2 * co);  // detached running statistics
        } else {
          // weight, bias, gamma, beta, stats, fused weight and bias
          acc.snapshot(2 * weight_elements(n) + (had_bias ? co : 0) + 5 * co);
        }
      }
    } else if (n.op == OpKind::Bn2d && !dropped_bn.count(id)) {
      const std::int64_t c = n.attrs.at("num_features");
      if (mode == Mode::Train) {
        saved = {{"xhat", in_elems(), ""}, {"batch_mean", c, ""}, {"batch_var", c, ""}};
      } else {
        saved = {{"Y", in_elems(), in_value()}};
      }
    } else if (n.op == OpKind::Relu) {
      saved = {{"out", numel(shapes.at(id)), value_of.at(id)}};
    } else if (n.op == OpKind::Linear) {
      saved = {{"X", in_elems(), in_value()}};
    } else if (n.op != OpKind::Input && n.op != OpKind::Output && n.op != OpKind::Identity && n.op != OpKind::Add &&
               n.op != OpKind::GlobalAvgPool && n.op != OpKind::Bn2d) {
      throw ShapeError("node '" + id + "': no saved-tensor rule for " + std::string(graph::op_name(n.op)));
    }
    acc.node(n, saved);
  }
  return acc.take();
}

FootprintReport instrumented_footprint(const Graph& executed, const graph::ForwardResult& fwd, Mode mode,
                                       DType dtype) {
  Accumulator acc(mode, dtype, fwd.input_shape);
  std::map<const void*, std::string> storage;
  for (const auto& t : fwd.tape) {
    std::vector<Pending> saved;
    for (const auto& e : t.saved) {
      auto [it, fresh] = storage.emplace(e.tensor.storage_id(), "s" + std::to_string(storage.size()));
      saved.push_back({e.name, static_cast<std::int64_t>(e.tensor.numel()), it->second});
    }
    acc.node(executed.node(t.node_id), saved);
  }
  for (const auto& r : executed.reserved_bns()) {
    std::int64_t elements = 0;
    for (const auto& [name, t] : r.tensors) elements += static_cast<std::int64_t>(t.numel());
    acc.snapshot(elements);
  }
  return acc.take();
}

VerifyResult verify_against_engine(const Graph& g, Mode mode, const Tensor& x, DType dtype) {
  Graph run = g;
  if (mode == Mode::Tune || mode == Mode::Deploy) graph::turn_on(run, mode);
  const auto fwd =
      graph::execute_forward(run, x, mode == Mode::Train ? graph::BnMode::Train : graph::BnMode::Eval);
  VerifyResult v{count_saved(g, mode, x.shape(), dtype), instrumented_footprint(run, fwd, mode, dtype), {}};

  std::map<std::string, const NodeFootprint*> a, b;
  for (const auto& n : v.analytic.nodes) a.emplace(n.node_id, &n);
  for (const auto& n : v.instrumented.nodes) b.emplace(n.node_id, &n);
  auto describe = [](const SavedRecord& r) {
    return r.name + "(" + std::to_string(r.elements) + (r.shared_with.empty() ? "" : ", shared with " + r.shared_with) +
           ")";
  };
  std::set<std::string> ids;
  for (const auto& [id, _] : a) ids.insert(id);
  for (const auto& [id, _] : b) ids.insert(id);
  for (const auto& id : ids) {
    std::vector<SavedRecord> expect = a.count(id) ? a.at(id)->saved : std::vector<SavedRecord>{};
    std::vector<SavedRecord> got = b.count(id) ? b.at(id)->saved : std::vector<SavedRecord>{};
    for (const auto& r : expect) {
      auto it = std::find_if(got.begin(), got.end(), [&](const SavedRecord& q) { return q.name == r.name; });
      if (it == got.end()) {
        v.discrepancies.push_back({id, "missing " + describe(r)});
      } else if (it->elements != r.elements || it->bytes != r.bytes || it->shared_with != r.shared_with) {
        v.discrepancies.push_back({id, "expected " + describe(r) + ", recorded " + describe(*it)});
      }
    }
    for (const auto& r : got) {
      if (std::none_of(expect.begin(), expect.end(), [&](const SavedRecord& q) { return q.name == r.name; })) {
        v.discrepancies.push_back({id, "extra " + describe(r)});
      }
    }
  }
  if (v.analytic.total_bytes != v.instrumented.total_bytes) {
    v.discrepancies.push_back({"<total>", "analytic " + std::to_string(v.analytic.total_bytes) + " bytes, recorded " +
                                              std::to_string(v.instrumented.total_bytes)});
  }
  if (v.analytic.snapshot_elements != v.instrumented.snapshot_elements) {
    v.discrepancies.push_back({"<snapshot>", "analytic " + std::to_string(v.analytic.snapshot_elements) +
                                                 " elements, recorded " +
                                                 std::to_string(v.instrumented.snapshot_elements)});
  }
  return v;
}

// ---- reporting ----------------------------------------------------------------

Json FootprintReport::to_json() const {
  Json nodes_json = Json::array();
  for (const auto& n : nodes) {
    Json saved = Json::array();
    for (const auto& r : n.saved) {
      Json jr{{"name", r.name}, {"elements", r.elements}, {"bytes", r.bytes}};
      if (!r.shared_with.empty()) jr["shared_with"] = r.shared_with;
      saved.push_back(std::move(jr));
    }
    nodes_json.push_back({{"node", n.node_id}, {"op", n.op}, {"saved", std::move(saved)}, {"elements", n.elements},
                          {"bytes", n.bytes}});
  }
  return Json{{"mode", mode_name(mode)},
              {"dtype", dtype_name(dtype)},
              {"input_shape", input_shape.extents()},
              {"nodes", std::move(nodes_json)},
              {"total_elements", total_elements},
              {"total_bytes", total_bytes},
              {"snapshot_elements", snapshot_elements},
              {"snapshot_bytes", snapshot_bytes}};
}

std::string FootprintReport::to_table() const {
  std::ostringstream os;
  std::size_t id_w = 4;
  for (const auto& n : nodes) id_w = std::max(id_w, n.node_id.size());
  os << "mode " << mode_name(mode) << ", dtype " << dtype_name(dtype) << ", input " << input_shape.str() << '\n';
  os << std::left << std::setw(static_cast<int>(id_w)) << "node" << "  " << std::setw(16) << "op" << std::right
     << std::setw(14) << "elements" << std::setw(14) << "bytes" << "  saved\n";
  for (const auto& n : nodes) {
    std::string names;
    for (const auto& r : n.saved) {
      if (!names.empty()) names += ' ';
      names += r.shared_with.empty() ? r.name : r.name + "=" + r.shared_with;
    }
    os << std::left << std::setw(static_cast<int>(id_w)) << n.node_id << "  " << std::setw(16) << n.op << std::right
       << std::setw(14) << n.elements << std::setw(14) << n.bytes << "  " << names << '\n';
  }
  os << std::left << std::setw(static_cast<int>(id_w)) << "total" << "  " << std::setw(16) << "" << std::right
     << std::setw(14) << total_elements << std::setw(14) << total_bytes << '\n';
  os << std::left << std::setw(static_cast<int>(id_w)) << "snapshot" << "  " << std::setw(16) << "" << std::right
     << std::setw(14) << snapshot_elements << std::setw(14) << snapshot_bytes << '\n';
  return os.str();
}

double ModeComparison::tune_over_eval() const {
  return static_cast<double>(tune.total_bytes) / static_cast<double>(eval.total_bytes);
}

double ModeComparison::deploy_over_eval() const {
  return static_cast<double>(deploy.total_bytes) / static_cast<double>(eval.total_bytes);
}

ModeComparison compare_modes(const Graph& g, const Shape& input_shape, DType dtype) {
  return {count_saved(g, Mode::Eval, input_shape, dtype), count_saved(g, Mode::Tune, input_shape, dtype),
          count_saved(g, Mode::Deploy, input_shape, dtype)};
}

Json ModeComparison::to_json() const {
  auto row = [](const FootprintReport& r) {
    return Json{{"total_elements", r.total_elements},
                {"total_bytes", r.total_bytes},
                {"snapshot_bytes", r.snapshot_bytes}};
  };
  return Json{{"dtype", dtype_name(eval.dtype)},
              {"input_shape", eval.input_shape.extents()},
              {"eval", row(eval)},
              {"tune", row(tune)},
              {"deploy", row(deploy)},
              {"tune_over_eval", tune_over_eval()},
              {"deploy_over_eval", deploy_over_eval()}};
}

std::string ModeComparison::to_table() const {
  std::ostringstream os;
  os << "input " << eval.input_shape.str() << ", dtype " << dtype_name(eval.dtype) << '\n';
  os << std::left << std::setw(8) << "mode" << std::right << std::setw(16) << "saved bytes" << std::setw(12) << "GiB"
     << std::setw(10) << "vs eval" << std::setw(16) << "snapshot bytes" << '\n';
  for (const FootprintReport* r : {&eval, &tune, &deploy}) {
    os << std::left << std::setw(8) << mode_name(r->mode) << std::right << std::setw(16) << r->total_bytes
       << std::setw(12) << std::fixed << std::setprecision(4)
       << static_cast<double>(r->total_bytes) / (1024.0 * 1024.0 * 1024.0) << std::setw(10)
       << static_cast<double>(r->total_bytes) / static_cast<double>(eval.total_bytes) << std::setw(16)
       << r->snapshot_bytes << '\n';
  }
  return os.str();
}

}  // namespace convbn::memory
