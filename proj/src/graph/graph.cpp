// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "convbn/graph.hpp"

#include <algorithm>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include "convbn/errors.hpp"

namespace convbn::graph {
namespace {

struct OpEntry {
  OpKind op;
  std::string_view name;
};

constexpr OpEntry kOps[] = {
    {OpKind::Input, "input"},       {OpKind::Output, "output"},   {OpKind::Conv1d, "conv1d"},
    {OpKind::Conv2d, "conv2d"},     {OpKind::Conv3d, "conv3d"},   {OpKind::Bn1d, "bn1d"},
    {OpKind::Bn2d, "bn2d"},         {OpKind::Bn3d, "bn3d"},       {OpKind::Relu, "relu"},
    {OpKind::Add, "add"},           {OpKind::GlobalAvgPool, "global_avg_pool"},
    {OpKind::Linear, "linear"},     {OpKind::Identity, "identity"},
};

std::string node_ref(const Node& n) { return "node '" + n.id + "'"; }

nn::Pair pair_attr(const Node& n, const char* key, nn::Pair fallback) {
  if (!n.attrs.contains(key)) return fallback;
  const Json& v = n.attrs.at(key);
  if (!v.is_array() || v.size() != 2) throw SchemaError(node_ref(n) + ": attr '" + key + "' must be a pair");
  return {v[0].get<std::int64_t>(), v[1].get<std::int64_t>()};
}

std::int64_t int_attr(const Node& n, const char* key) {
  if (!n.attrs.contains(key) || !n.attrs.at(key).is_number_integer()) {
    throw SchemaError(node_ref(n) + ": missing integer attr '" + key + "'");
  }
  return n.attrs.at(key).get<std::int64_t>();
}

const std::string& param_name(const Node& n) {
  if (!n.param) throw SchemaError(node_ref(n) + " has no param reference");
  return *n.param;
}

Json reserved_to_json(const ReservedBn& r) {
  return Json{{"conv", r.conv_id},       {"bn", r.bn_id},
              {"mode", mode_name(r.mode)}, {"bn_op", op_name(r.bn_op)},
              {"bn_param", r.bn_param},  {"bn_attrs", r.bn_attrs},
              {"conv_attrs", r.conv_attrs},
              {"conv_had_bias", r.conv_had_bias}};
}

ReservedBn reserved_from_json(const Json& j) {
  ReservedBn r;
  try {
    r.conv_id = j.at("conv").get<std::string>();
    r.bn_id = j.at("bn").get<std::string>();
    r.mode = parse_mode(j.at("mode").get<std::string>());
    r.bn_op = parse_op(j.at("bn_op").get<std::string>());
    r.bn_param = j.at("bn_param").get<std::string>();
    r.bn_attrs = j.value("bn_attrs", Json::object());
    r.conv_attrs = j.value("conv_attrs", Json::object());
    r.conv_had_bias = j.value("conv_had_bias", false);
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed reserved_bns entry: ") + e.what());
  }
  if (r.mode != Mode::Tune && r.mode != Mode::Deploy) {
    throw SchemaError("reserved_bns entry for '" + r.bn_id + "' has mode " + std::string(mode_name(r.mode)));
  }
  return r;
}

}  // namespace

std::string_view op_name(OpKind op) {
  for (const auto& e : kOps)
    if (e.op == op) return e.name;
  return "?";
}

OpKind parse_op(std::string_view name) {
  for (const auto& e : kOps)
    if (e.name == name) return e.op;
  throw SchemaError("unknown op '" + std::string(name) + "'");
}

bool is_conv(OpKind op) { return op == OpKind::Conv1d || op == OpKind::Conv2d || op == OpKind::Conv3d; }
bool is_bn(OpKind op) { return op == OpKind::Bn1d || op == OpKind::Bn2d || op == OpKind::Bn3d; }

int spatial_dims(OpKind op) {
  switch (op) {
    case OpKind::Conv1d:
    case OpKind::Bn1d: return 1;
    case OpKind::Conv2d:
    case OpKind::Bn2d: return 2;
    case OpKind::Conv3d:
    case OpKind::Bn3d: return 3;
    default: return 0;
  }
}

// ---- Graph --------------------------------------------------------------------

const Node& Graph::node(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw SchemaError("no node '" + id + "'");
  return nodes_[it->second];
}

Node& Graph::node(const std::string& id) {
  return const_cast<Node&>(static_cast<const Graph&>(*this).node(id));
}

void Graph::add_node(Node node) {
  if (node.id.empty()) throw SchemaError("node id must be non-empty");
  if (index_.count(node.id)) throw SchemaError("duplicate node id '" + node.id + "'");
  index_.emplace(node.id, nodes_.size());
  nodes_.push_back(std::move(node));
}

void Graph::replace_node(const Node& node) { this->node(node.id) = node; }

void Graph::reindex() {
  index_.clear();
  for (std::size_t k = 0; k < nodes_.size(); ++k) index_.emplace(nodes_[k].id, k);
}

void Graph::validate() {
  reindex();
  for (auto& n : nodes_) n.users.clear();
  input_id_.clear();
  output_id_.clear();
  for (auto& n : nodes_) {
    const std::size_t arity = n.inputs.size();
    bool ok = true;
    switch (n.op) {
      case OpKind::Input: ok = arity == 0; break;
      case OpKind::Add: ok = arity >= 2; break;
      default: ok = arity == 1; break;
    }
    if (!ok) throw SchemaError(node_ref(n) + " (" + std::string(op_name(n.op)) + ") has " +
                               std::to_string(arity) + " inputs");
    if ((is_conv(n.op) || is_bn(n.op) || n.op == OpKind::Linear) && !n.param) {
      throw SchemaError(node_ref(n) + " (" + std::string(op_name(n.op)) + ") needs a param reference");
    }
    for (const auto& in : n.inputs) {
      auto it = index_.find(in);
      if (it == index_.end()) throw SchemaError(node_ref(n) + " references missing input '" + in + "'");
      auto& users = nodes_[it->second].users;
      if (std::find(users.begin(), users.end(), n.id) == users.end()) users.push_back(n.id);
    }
    if (n.op == OpKind::Input) {
      if (!input_id_.empty()) throw SchemaError("second input node '" + n.id + "'");
      input_id_ = n.id;
    }
    if (n.op == OpKind::Output) {
      if (!output_id_.empty()) throw SchemaError("second output node '" + n.id + "'");
      output_id_ = n.id;
    }
  }
  if (input_id_.empty()) throw SchemaError("graph has no input node");
  if (output_id_.empty()) throw SchemaError("graph has no output node");
  topo_order();  // throws on cycles
}

std::vector<std::string> Graph::topo_order() const {
  std::vector<std::size_t> pending(nodes_.size());
  for (std::size_t k = 0; k < nodes_.size(); ++k) pending[k] = nodes_[k].inputs.size();
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t k = 0; k < nodes_.size(); ++k)
    if (pending[k] == 0) ready.push(k);
  std::vector<std::string> order;
  while (!ready.empty()) {
    const std::size_t k = ready.top();
    ready.pop();
    order.push_back(nodes_[k].id);
    for (const auto& user : nodes_[k].users) {
      const std::size_t u = index_.at(user);
      // An input listed twice contributes two edges.
      const auto edges = std::count(nodes_[u].inputs.begin(), nodes_[u].inputs.end(), nodes_[k].id);
      pending[u] -= static_cast<std::size_t>(edges);
      if (pending[u] == 0) ready.push(u);
    }
  }
  if (order.size() != nodes_.size()) {
    for (std::size_t k = 0; k < nodes_.size(); ++k)
      if (pending[k] != 0) throw SchemaError("cycle through node '" + nodes_[k].id + "'");
  }
  return order;
}

const std::string& Graph::input_id() const { return input_id_; }
const std::string& Graph::output_id() const { return output_id_; }

const Tensor& Graph::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw SchemaError("missing parameter '" + name + "'");
  return it->second;
}

// ---- JSON ---------------------------------------------------------------------

Graph load_graph(const Json& doc) {
  if (!doc.is_object()) throw SchemaError("graph document must be a JSON object");
  if (doc.value("format", std::string()) != kFormat) {
    throw SchemaError("graph format must be \"" + std::string(kFormat) + "\"");
  }
  if (!doc.contains("nodes") || !doc.at("nodes").is_array()) throw SchemaError("graph needs a 'nodes' array");
  Graph g;
  g.params_file = doc.value("params_file", std::string());
  for (const Json& jn : doc.at("nodes")) {
    if (!jn.is_object() || !jn.contains("id") || !jn.at("id").is_string()) {
      throw SchemaError("every node needs a string 'id'");
    }
    Node n;
    n.id = jn.at("id").get<std::string>();
    if (!jn.contains("op") || !jn.at("op").is_string()) throw SchemaError(node_ref(n) + " needs a string 'op'");
    try {
      n.op = parse_op(jn.at("op").get<std::string>());
    } catch (const SchemaError& e) {
      throw SchemaError(node_ref(n) + ": " + e.what());
    }
    if (jn.contains("inputs")) {
      if (!jn.at("inputs").is_array()) throw SchemaError(node_ref(n) + ": 'inputs' must be an array");
      for (const Json& in : jn.at("inputs")) {
        if (!in.is_string()) throw SchemaError(node_ref(n) + ": input ids must be strings");
        n.inputs.push_back(in.get<std::string>());
      }
    }
    if (jn.contains("param")) {
      if (!jn.at("param").is_string()) throw SchemaError(node_ref(n) + ": 'param' must be a string");
      n.param = jn.at("param").get<std::string>();
    }
    if (jn.contains("attrs")) {
      if (!jn.at("attrs").is_object()) throw SchemaError(node_ref(n) + ": 'attrs' must be an object");
      n.attrs = jn.at("attrs");
    }
    g.add_node(std::move(n));
  }
  if (doc.contains("reserved_bns")) {
    for (const Json& r : doc.at("reserved_bns")) g.reserved_bns().push_back(reserved_from_json(r));
  }
  g.validate();
  return g;
}

Json dump_graph(const Graph& g) {
  Json nodes = Json::array();
  for (const Node& n : g.nodes()) {
    Json jn{{"id", n.id}, {"op", op_name(n.op)}, {"inputs", n.inputs}};
    if (n.param) jn["param"] = *n.param;
    if (!n.attrs.empty()) jn["attrs"] = n.attrs;
    nodes.push_back(std::move(jn));
  }
  Json doc{{"format", kFormat}, {"nodes", std::move(nodes)}};
  if (!g.params_file.empty()) doc["params_file"] = g.params_file;
  if (!g.reserved_bns().empty()) {
    Json reserved = Json::array();
    for (const auto& r : g.reserved_bns()) reserved.push_back(reserved_to_json(r));
    doc["reserved_bns"] = std::move(reserved);
  }
  return doc;
}

Graph load_graph_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open graph file " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw SchemaError("graph file " + path.string() + " is not valid JSON: " + e.what());
  }
  Graph g = load_graph(doc);
  if (!g.params_file.empty()) {
    import_params(g, read_tensors(path.parent_path() / g.params_file));
  }
  return g;
}

void save_graph_file(const Graph& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write graph file " + path.string());
  out << dump_graph(g).dump(2) << '\n';
  if (!g.params_file.empty()) write_tensors(export_params(g), path.parent_path() / g.params_file);
}

TensorMap export_params(const Graph& g) {
  TensorMap out = g.params();
  for (const auto& r : g.reserved_bns())
    for (const auto& [name, t] : r.tensors) out.emplace("reserved/" + r.bn_param + "/" + name, t);
  return out;
}

void import_params(Graph& g, const TensorMap& tensors) {
  static constexpr std::string_view kPrefix = "reserved/";
  g.params().clear();
  for (auto& r : g.reserved_bns()) r.tensors.clear();
  for (const auto& [name, t] : tensors) {
    if (name.rfind(kPrefix, 0) != 0) {
      g.params().emplace(name, t);
      continue;
    }
    const auto slash = name.rfind('/');
    const std::string owner = name.substr(kPrefix.size(), slash - kPrefix.size());
    auto it = std::find_if(g.reserved_bns().begin(), g.reserved_bns().end(),
                           [&](const ReservedBn& r) { return r.bn_param == owner; });
    if (slash <= kPrefix.size() || it == g.reserved_bns().end()) {
      throw SchemaError("reserved tensor '" + name + "' has no matching reserved_bns entry");
    }
    it->tensors.emplace(name.substr(slash + 1), t);
  }
}

// ---- parameters ---------------------------------------------------------------

nn::ConvParams conv_params(const Graph& g, const Node& n) {
  const std::string& p = param_name(n);
  nn::ConvParams c;
  c.weight = g.param(p + ".weight");
  if (n.attrs.value("bias", false)) c.bias = g.param(p + ".bias");
  c.stride = pair_attr(n, "stride", {1, 1});
  c.padding = pair_attr(n, "padding", {0, 0});
  return c;
}

nn::BNParams bn_params(const Graph& g, const Node& n) {
  const std::string& p = param_name(n);
  nn::BNParams b{g.param(p + ".gamma"), g.param(p + ".beta"), g.param(p + ".running_mean"),
                 g.param(p + ".running_var")};
  b.eps = n.attrs.value("eps", nn::kDefaultEps);
  b.momentum = n.attrs.value("momentum", nn::kDefaultMomentum);
  return b;
}

void check_params(const Graph& g) {
  auto expect = [&](const Node& n, const std::string& name, const Shape& shape) {
    const Tensor& t = g.param(name);
    if (t.shape() != shape) {
      throw ShapeError(node_ref(n) + ": parameter '" + name + "' has shape " + t.shape().str() + ", expected " +
                       shape.str());
    }
  };
  for (const Node& n : g.nodes()) {
    if (n.op == OpKind::Conv2d) {
      const auto k = pair_attr(n, "kernel", {0, 0});
      const std::int64_t co = int_attr(n, "out_channels"), ci = int_attr(n, "in_channels");
      const std::string& p = *n.param;
      expect(n, p + ".weight", Shape{co, ci, k[0], k[1]});
      if (n.attrs.value("bias", false)) expect(n, p + ".bias", Shape{co});
      const std::string fusion = n.attrs.value("fusion", std::string());
      if (fusion == "tune") {
        expect(n, p + ".weight_coeff", Shape{co, 1, 1, 1});
        expect(n, p + ".bias_delta", Shape{co});
        const std::string q = n.attrs.value("bn_param", std::string());
        expect(n, q + ".gamma", Shape{co});
        expect(n, q + ".beta", Shape{co});
      }
    } else if (n.op == OpKind::Bn2d) {
      const std::int64_t c = int_attr(n, "num_features");
      for (const char* s : {".gamma", ".beta", ".running_mean", ".running_var"}) expect(n, *n.param + s, Shape{c});
    } else if (n.op == OpKind::Linear) {
      const std::int64_t o = int_attr(n, "out_features"), i = int_attr(n, "in_features");
      expect(n, *n.param + ".weight", Shape{o, i});
      expect(n, *n.param + ".bias", Shape{o});
    }
  }
}

std::vector<std::string> trainable_params(const Graph& g) {
  std::vector<std::string> out;
  auto push = [&](const std::string& name) {
    if (g.has_param(name) && std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  };
  for (const Node& n : g.nodes()) {
    if (is_conv(n.op)) {
      push(*n.param + ".weight");
      if (n.attrs.value("bias", false)) push(*n.param + ".bias");
      if (n.attrs.value("fusion", std::string()) == "tune") {
        const std::string q = n.attrs.at("bn_param").get<std::string>();
        push(q + ".gamma");
        push(q + ".beta");
      }
    } else if (is_bn(n.op)) {
      push(*n.param + ".gamma");
      push(*n.param + ".beta");
    } else if (n.op == OpKind::Linear) {
      push(*n.param + ".weight");
      push(*n.param + ".bias");
    }
  }
  return out;
}

// ---- shape inference ----------------------------------------------------------

std::map<std::string, Shape> infer_shapes(const Graph& g, const Shape& input_shape) {
  std::map<std::string, Shape> shapes;
  for (const std::string& id : g.topo_order()) {
    const Node& n = g.node(id);
    auto fail = [&](const std::string& why) -> ShapeError {
      return ShapeError(node_ref(n) + " (" + std::string(op_name(n.op)) + "): " + why);
    };
    auto in = [&](std::size_t k) -> const Shape& { return shapes.at(n.inputs[k]); };
    Shape out;
    switch (n.op) {
      case OpKind::Input: {
        if (input_shape.rank() != 4) throw fail("input must be [N, C, H, W], got " + input_shape.str());
        if (n.attrs.contains("shape")) {
          const auto per = n.attrs.at("shape").get<std::vector<std::int64_t>>();
          const std::vector<std::int64_t> got(input_shape.extents().begin() + 1, input_shape.extents().end());
          if (per != got) throw fail("input " + input_shape.str() + " does not match declared per-sample shape");
        }
        out = input_shape;
        break;
      }
      case OpKind::Output:
      case OpKind::Identity:
      case OpKind::Relu: out = in(0); break;
      case OpKind::Conv2d: {
        const Shape& x = in(0);
        if (x.rank() != 4) throw fail("expects a rank-4 input, got " + x.str());
        const std::int64_t ci = int_attr(n, "in_channels"), co = int_attr(n, "out_channels");
        if (x[1] != ci) throw fail("input has " + std::to_string(x[1]) + " channels, expected " + std::to_string(ci));
        const auto k = pair_attr(n, "kernel", {0, 0});
        const auto s = pair_attr(n, "stride", {1, 1});
        const auto p = pair_attr(n, "padding", {0, 0});
        if (k[0] < 1 || k[1] < 1 || s[0] < 1 || s[1] < 1 || p[0] < 0 || p[1] < 0) throw fail("bad geometry");
        const std::int64_t ho = (x[2] + 2 * p[0] - k[0]) / s[0] + 1;
        const std::int64_t wo = (x[3] + 2 * p[1] - k[1]) / s[1] + 1;
        if (x[2] + 2 * p[0] < k[0] || x[3] + 2 * p[1] < k[1] || ho < 1 || wo < 1) {
          throw fail("non-positive output extent for input " + x.str());
        }
        out = Shape{x[0], co, ho, wo};
        break;
      }
      case OpKind::Bn2d: {
        const Shape& y = in(0);
        if (y.rank() != 4 || y[1] != int_attr(n, "num_features")) throw fail("channel mismatch for input " + y.str());
        out = y;
        break;
      }
      case OpKind::Add: {
        for (std::size_t k = 1; k < n.inputs.size(); ++k)
          if (in(k) != in(0)) throw fail("operand shapes " + in(0).str() + " and " + in(k).str() + " differ");
        out = in(0);
        break;
      }
      case OpKind::GlobalAvgPool: {
        if (in(0).rank() != 4) throw fail("expects a rank-4 input");
        out = Shape{in(0)[0], in(0)[1]};
        break;
      }
      case OpKind::Linear: {
        if (in(0).rank() != 2 || in(0)[1] != int_attr(n, "in_features")) {
          throw fail("input " + in(0).str() + " does not match in_features");
        }
        out = Shape{in(0)[0], int_attr(n, "out_features")};
        break;
      }
      case OpKind::Conv1d:
      case OpKind::Conv3d:
      case OpKind::Bn1d:
      case OpKind::Bn3d: throw fail("only 2D convolution and batch norm are executable");
    }
    shapes.emplace(id, std::move(out));
  }
  return shapes;
}

}  // namespace convbn::graph
