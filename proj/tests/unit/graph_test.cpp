// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>

#include "convbn/errors.hpp"
#include "convbn/executor.hpp"
#include "convbn/fixtures.hpp"
#include "convbn/rewrite.hpp"
#include "convbn/tensor_ops.hpp"
#include "oracles.hpp"

namespace convbn::graph {
namespace {

Graph with_params(Graph g, std::uint64_t seed) {
  Rng rng(seed);
  fixtures::init_params(g, rng);
  return g;
}

Tensor input_for(const Graph& g, std::int64_t batch, std::uint64_t seed) {
  const auto per = g.node(g.input_id()).attrs.at("shape").get<std::vector<std::int64_t>>();
  Rng rng(seed);
  return rng.normal_tensor(Shape{batch, per[0], per[1], per[2]});
}

std::size_t census(const Graph& g, OpKind op) {
  return static_cast<std::size_t>(
      std::count_if(g.nodes().begin(), g.nodes().end(), [&](const Node& n) { return n.op == op; }));
}

Json parse(const char* text) { return Json::parse(text); }

TEST(GraphJson, IdentityGraph) {
  Graph g = load_graph(parse(R"({"format":"cbn-graph/1","nodes":[
      {"id":"x","op":"input","inputs":[]},{"id":"y","op":"output","inputs":["x"]}]})"));
  Rng rng(1);
  const Tensor x = rng.normal_tensor(Shape{2, 3, 4, 4});
  const auto f = execute_forward(g, x);
  EXPECT_TRUE(bitwise_equal(f.output, x));
  const auto b = execute_backward(g, f, x);
  EXPECT_TRUE(b.grads.empty());
  EXPECT_TRUE(bitwise_equal(b.dx, x));
}

std::string schema_message(const char* text) {
  try {
    load_graph(parse(text));
  } catch (const SchemaError& e) {
    return e.what();
  }
  return "";
}

TEST(GraphJson, ValidationErrorsNameTheNode) {
  EXPECT_NE(schema_message(R"({"format":"cbn-graph/1","nodes":[{"id":"x","op":"input","inputs":[]},
      {"id":"y","op":"output","inputs":["x9"]}]})").find("x9"), std::string::npos);
  EXPECT_NE(schema_message(R"({"format":"cbn-graph/1","nodes":[{"id":"x","op":"input","inputs":[]},
      {"id":"q","op":"softmax","inputs":["x"]},{"id":"y","op":"output","inputs":["q"]}]})").find("'q'"),
            std::string::npos);
  EXPECT_NE(schema_message(R"({"format":"cbn-graph/1","nodes":[{"id":"x","op":"input","inputs":[]},
      {"id":"a","op":"relu","inputs":["b"]},{"id":"b","op":"relu","inputs":["a"]},
      {"id":"y","op":"output","inputs":["x"]}]})").find("cycle"), std::string::npos);
  EXPECT_NE(schema_message(R"({"format":"cbn-graph/1","nodes":[{"id":"x","op":"input","inputs":[]},
      {"id":"x","op":"output","inputs":["x"]}]})").find("duplicate"), std::string::npos);
  EXPECT_FALSE(schema_message(R"({"nodes":[]})").empty());
}

TEST(GraphJson, RoundTripIsStable) {
  for (const auto& name : fixtures::fixture_names()) {
    const Graph g = fixtures::build_fixture(name);
    const Json once = dump_graph(g);
    const Json twice = dump_graph(load_graph(once));
    EXPECT_EQ(once.dump(2), twice.dump(2)) << name;
  }
  const Graph toy = fixtures::toy_chain();
  EXPECT_EQ(census(toy, OpKind::Conv2d) + census(toy, OpKind::Bn2d) + census(toy, OpKind::Relu), 6u);
}

TEST(GraphJson, UsersAreDerived) {
  const Graph g = fixtures::seven_pattern();
  EXPECT_EQ(g.node("c3").users, (std::vector<std::string>{"b3", "sum"}));
  EXPECT_EQ(g.node("c1").users, (std::vector<std::string>{"b1"}));
}

TEST(Matcher, ChainFindsPairs) {
  const auto s = find_convbn_pairs(fixtures::single_block(2, 3, 5, 5, 3, 1, 1, false));
  ASSERT_EQ(s.pairs.size(), 1u);
  EXPECT_EQ(s.pairs[0].conv_id, "conv");
  EXPECT_EQ(s.pairs[0].bn_id, "bn");
  EXPECT_TRUE(s.skipped.empty());
}

TEST(Matcher, SevenPatternCensus) {
  const auto s = find_convbn_pairs(fixtures::seven_pattern());
  std::vector<std::string> convs;
  for (const auto& p : s.pairs) convs.push_back(p.conv_id);
  EXPECT_EQ(convs, (std::vector<std::string>{"c1", "c2", "c4", "c6", "c7"}));
  ASSERT_EQ(s.skipped.size(), 2u);
  EXPECT_EQ(s.skipped[0].node_id, "c3");
  EXPECT_EQ(s.skipped[0].reason, SkipReason::MultiConsumer);
  EXPECT_EQ(s.skipped[1].node_id, "c5");
  EXPECT_EQ(s.skipped[1].reason, SkipReason::NoBnFollower);
}

TEST(Matcher, MixedDimensions) {
  const auto s = find_convbn_pairs(fixtures::mixed_dims());
  ASSERT_EQ(s.pairs.size(), 1u);
  EXPECT_EQ(s.pairs[0].conv_id, "k4");
  std::map<std::string, SkipReason> got;
  for (const auto& k : s.skipped) got.emplace(k.node_id, k.reason);
  EXPECT_EQ(got.at("k1"), SkipReason::UnsupportedDim);
  EXPECT_EQ(got.at("k3"), SkipReason::UnsupportedDim);
  EXPECT_EQ(got.at("k2"), SkipReason::NoBnFollower);
}

TEST(Rewrite, TuneAndDeployPreserveOutput) {
  for (Mode mode : {Mode::Tune, Mode::Deploy}) {
    for (const char* name : {"toy_chain", "seven_pattern", "tiny_resnet"}) {
      Graph g = with_params(fixtures::build_fixture(name), 3);
      const Tensor x = input_for(g, 2, 4);
      const Tensor before = execute_forward(g, x).output;
      const RewriteReport r = turn_on(g, mode);
      const Tensor after = execute_forward(g, x).output;
      EXPECT_LE(max_abs_diff(before, after), 1e-10) << name << " " << mode_name(mode);
      EXPECT_EQ(r.rewritten.size(), g.reserved_bns().size());
      check_params(g);
    }
  }
}

TEST(Rewrite, SevenPatternCounts) {
  for (Mode mode : {Mode::Tune, Mode::Deploy}) {
    Graph g = with_params(fixtures::seven_pattern(), 5);
    const RewriteReport r = turn_on(g, mode);
    EXPECT_EQ(r.rewritten.size(), 5u);
    EXPECT_EQ(r.skipped.size(), 2u);
    // Only the bn behind the multi-consumer conv survives.
    EXPECT_EQ(census(g, OpKind::Bn2d), 1u);
    EXPECT_EQ(g.node("b3").op, OpKind::Bn2d);
    EXPECT_EQ(g.node("b1").op, OpKind::Identity);
    if (mode == Mode::Deploy) {
      EXPECT_FALSE(g.has_param("b1.gamma"));
    } else {
      EXPECT_TRUE(g.has_param("b1.gamma"));
      EXPECT_FALSE(g.has_param("b1.running_mean"));
      EXPECT_TRUE(g.has_param("c1.weight_coeff"));
    }
  }
}

TEST(Rewrite, NoPairsIsNoOp) {
  fixtures::GraphBuilder b;
  b.input("x", 2, 6, 6);
  b.conv("c", "x", 2, 3, 3, 1, 1, true);
  b.relu("r", "c");
  b.output("out", "r");
  Graph bare = b.finish();
  Rng rng(1);
  fixtures::init_params(bare, rng);
  const std::string json_before = dump_graph(bare).dump();
  const auto bytes_before = encode_tensors(export_params(bare));
  const RewriteReport r = turn_on(bare, Mode::Deploy);
  EXPECT_TRUE(r.rewritten.empty());
  EXPECT_EQ(dump_graph(bare).dump(), json_before);
  EXPECT_EQ(encode_tensors(export_params(bare)), bytes_before);
}

TEST(Rewrite, TrainIsRejected) {
  Graph g = with_params(fixtures::toy_chain(), 7);
  EXPECT_THROW(turn_on(g, Mode::Train), ModeError);
  EXPECT_THROW(turn_on(g, Mode::Eval), ModeError);
}

TEST(Rewrite, RevertIsExactInverse) {
  for (Mode mode : {Mode::Tune, Mode::Deploy}) {
    Graph g = with_params(fixtures::seven_pattern(), 8);
    const std::string json_before = dump_graph(g).dump();
    const auto bytes_before = encode_tensors(export_params(g));
    turn_on(g, mode);
    EXPECT_NE(encode_tensors(export_params(g)), bytes_before);
    const RewriteReport r = revert(g);
    EXPECT_EQ(r.rewritten.size(), 5u);
    EXPECT_EQ(dump_graph(g).dump(), json_before) << mode_name(mode);
    EXPECT_EQ(encode_tensors(export_params(g)), bytes_before) << mode_name(mode);
  }
  Graph untouched = with_params(fixtures::toy_chain(), 9);
  EXPECT_TRUE(revert(untouched).rewritten.empty());
}

TEST(Rewrite, SwitchTuneToDeployPreservesOutput) {
  Graph g = with_params(fixtures::tiny_resnet(), 10);
  const Tensor x = input_for(g, 2, 11);
  turn_on(g, Mode::Tune);
  // Perturb trainable parameters as a training step would.
  Rng rng(12);
  for (const auto& name : trainable_params(g)) {
    const Tensor& t = g.param(name);
    g.params()[name] = add(t, rng.normal_tensor(t.shape(), 0.0, 0.01));
  }
  const Tensor before = execute_forward(g, x).output;
  const RewriteReport r = switch_mode(g, Mode::Deploy);
  EXPECT_EQ(r.action, "turn_on:deploy");
  EXPECT_LE(max_abs_diff(before, execute_forward(g, x).output), 1e-10);
  switch_mode(g, Mode::Eval);
  EXPECT_LE(max_abs_diff(before, execute_forward(g, x).output), 1e-10);
  EXPECT_TRUE(g.reserved_bns().empty());
}

TEST(Rewrite, TrainedDeployRevertsAlgebraically) {
  Graph g = with_params(fixtures::toy_chain(), 13);
  const Tensor x = input_for(g, 2, 14);
  turn_on(g, Mode::Deploy);
  g.params()["c2.weight"] = scale(g.param("c2.weight"), 1.01);
  const Tensor before = execute_forward(g, x).output;
  revert(g);
  EXPECT_LE(max_abs_diff(before, execute_forward(g, x).output), 1e-10);
  EXPECT_EQ(g.node("b2").op, OpKind::Bn2d);
  // c2 had no bias; the unfused bias stays as a parameter.
  EXPECT_TRUE(g.node("c2").attrs.at("bias").get<bool>());
}

TEST(Rewrite, ReportJson) {
  Graph g = with_params(fixtures::seven_pattern(), 15);
  const Json j = turn_on(g, Mode::Tune).to_json();
  EXPECT_EQ(j.at("action"), "turn_on:tune");
  EXPECT_EQ(j.at("rewritten").size(), 5u);
  EXPECT_EQ(j.at("skipped")[0].at("reason"), "multi_consumer");
}

TEST(GraphFiles, RewrittenGraphRoundTripsThroughDisk) {
  Graph g = with_params(fixtures::seven_pattern(), 16);
  turn_on(g, Mode::Deploy);
  g.params_file = "rewritten.cbnt";
  const auto dir = std::filesystem::temp_directory_path() / "convbn_graph_files";
  std::filesystem::create_directories(dir);
  save_graph_file(g, dir / "rewritten.json");
  Graph back = load_graph_file(dir / "rewritten.json");
  EXPECT_EQ(dump_graph(back).dump(), dump_graph(g).dump());
  EXPECT_EQ(encode_tensors(export_params(back)), encode_tensors(export_params(g)));
  revert(back);
  revert(g);
  EXPECT_EQ(encode_tensors(export_params(back)), encode_tensors(export_params(g)));
  std::filesystem::remove_all(dir);
}

TEST(GraphFiles, ShippedSevenPatternMatchesBuilder) {
  const std::filesystem::path dir = CONVBN_FIXTURE_DIR;
  Graph shipped = load_graph_file(dir / "seven_pattern.json");
  Graph built = fixtures::seven_pattern();
  EXPECT_EQ(dump_graph(shipped).at("nodes").dump(), dump_graph(built).at("nodes").dump());
  check_params(shipped);
}

double xent_loss(const Graph& g, const Tensor& x, const std::vector<std::int64_t>& labels) {
  return nn::softmax_xent(execute_forward(g, x).output, labels).loss;
}

TensorMap graph_grads(const Graph& g, const Tensor& x, const std::vector<std::int64_t>& labels, BnMode m) {
  const auto f = execute_forward(g, x, m);
  return execute_backward(g, f, nn::softmax_xent(f.output, labels).dlogits).grads;
}

TEST(Executor, GradcheckEveryParameterEvalAndTune) {
  for (Mode mode : {Mode::Eval, Mode::Tune, Mode::Deploy}) {
    Graph g = with_params(fixtures::toy_chain(3, 6, 3, 4, 3), 17);
    if (mode != Mode::Eval) turn_on(g, mode);
    const Tensor x = input_for(g, 2, 18);
    const std::vector<std::int64_t> labels{0, 2};
    const TensorMap grads = graph_grads(g, x, labels, BnMode::Eval);
    for (const auto& name : trainable_params(g)) {
      const Tensor& p = g.param(name);
      auto loss = [&](const Tensor& t) {
        Graph h = g;
        h.params()[name] = t;
        return xent_loss(h, x, labels);
      };
      EXPECT_LE(testing::grad_error(grads.at(name), testing::finite_difference(loss, p)), 1e-5)
          << mode_name(mode) << " " << name;
    }
  }
}

TEST(Executor, GradcheckTrainModeResidual) {
  Graph g = with_params(fixtures::tiny_resnet(6), 19);
  const Tensor x = input_for(g, 3, 20);
  const std::vector<std::int64_t> labels{0, 4, 2};
  const TensorMap grads = graph_grads(g, x, labels, BnMode::Train);
  for (const char* name : {"stem.weight", "block2.down.weight", "block2.bn3.gamma", "fc.weight"}) {
    auto loss = [&](const Tensor& t) {
      Graph h = g;
      h.params()[name] = t;
      return nn::softmax_xent(execute_forward(h, x, BnMode::Train).output, labels).loss;
    };
    EXPECT_LE(testing::grad_error(grads.at(name), testing::finite_difference(loss, g.param(name))), 1e-5) << name;
  }
}

TEST(Executor, EvalAndTuneGradientsAgree) {
  Graph eval = with_params(fixtures::tiny_resnet(), 21);
  Graph tune = eval;
  turn_on(tune, Mode::Tune);
  const Tensor x = input_for(eval, 2, 22);
  const std::vector<std::int64_t> labels{1, 3};
  EXPECT_LE(std::abs(xent_loss(eval, x, labels) - xent_loss(tune, x, labels)), 1e-10);
  const TensorMap ge = graph_grads(eval, x, labels, BnMode::Eval);
  const TensorMap gt = graph_grads(tune, x, labels, BnMode::Eval);
  ASSERT_EQ(ge.size(), gt.size());
  for (const auto& [name, t] : ge) EXPECT_LE(normwise_rel_diff(t, gt.at(name)), 1e-9) << name;
}

TEST(Executor, DeterministicAcrossRuns) {
  const Graph g = with_params(fixtures::tiny_resnet(), 23);
  const Tensor x = input_for(g, 2, 24);
  EXPECT_TRUE(bitwise_equal(execute_forward(g, x).output, execute_forward(g, x).output));
}

TEST(Executor, ShapeErrorsNameTheNode) {
  const Graph g = with_params(fixtures::toy_chain(), 25);
  try {
    execute_forward(g, Tensor::zeros(Shape{1, 5, 8, 8}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos) << e.what();
  }
  EXPECT_THROW(execute_forward(fixtures::mixed_dims(), Tensor::zeros(Shape{1, 2, 8, 8})), ShapeError);
}

TEST(Executor, TrainModeUpdatesRunningStatistics) {
  Graph g = with_params(fixtures::toy_chain(), 26);
  const Tensor before = g.param("b1.running_mean");
  const auto f = execute_forward(g, input_for(g, 4, 27), BnMode::Train);
  EXPECT_EQ(f.running_updates.size(), 2u);
  apply_running_updates(g, f);
  EXPECT_FALSE(bitwise_equal(before, g.param("b1.running_mean")));
}

TEST(Executor, TrainableParamsExcludeStatistics) {
  Graph g = with_params(fixtures::toy_chain(), 28);
  turn_on(g, Mode::Tune);
  const auto names = trainable_params(g);
  EXPECT_NE(std::find(names.begin(), names.end(), "b1.gamma"), names.end());
  EXPECT_EQ(std::find(names.begin(), names.end(), "c1.weight_coeff"), names.end());
  EXPECT_EQ(std::find(names.begin(), names.end(), "b1.running_var"), names.end());
}

}  // namespace
}  // namespace convbn::graph
