// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "convbn/errors.hpp"
#include "convbn/fixtures.hpp"
#include "convbn/memory_model.hpp"
#include "convbn/rewrite.hpp"

namespace convbn::memory {
namespace {

using graph::Graph;

Graph with_params(Graph g, std::uint64_t seed) {
  Rng rng(seed);
  fixtures::init_params(g, rng);
  return g;
}

std::vector<std::string> saved_names(const FootprintReport& r) {
  std::vector<std::string> out;
  for (const auto& n : r.nodes)
    for (const auto& s : n.saved) out.push_back(n.node_id + ":" + s.name);
  return out;
}

TEST(CountSaved, SingleBlockHandCount) {
  const Graph g = fixtures::single_block(3, 4, 8, 8, 3, 1, 1, false);
  const Shape in{1, 3, 8, 8};
  EXPECT_EQ(count_saved(g, Mode::Eval, in).total_elements, 192 + 256);
  EXPECT_EQ(count_saved(g, Mode::Tune, in).total_elements, 192 + 108 + 4);
  EXPECT_EQ(count_saved(g, Mode::Deploy, in).total_elements, 192);
  EXPECT_EQ(count_saved(g, Mode::Train, in).total_elements, 192 + 256 + 2 * 4);
  EXPECT_EQ(count_saved(g, Mode::Eval, in).total_bytes, 4 * (192 + 256));
  EXPECT_EQ(count_saved(g, Mode::Eval, in, DType::F64).total_bytes, 8 * (192 + 256));
}

TEST(CountSaved, SavedSetsMatchTheBlockDefinition) {
  const Graph g = fixtures::single_block(3, 4, 8, 8, 3, 1, 1, false);
  const Shape in{1, 3, 8, 8};
  using V = std::vector<std::string>;
  EXPECT_EQ(saved_names(count_saved(g, Mode::Eval, in)), (V{"conv:X", "bn:Y"}));
  EXPECT_EQ(saved_names(count_saved(g, Mode::Tune, in)), (V{"conv:X", "conv:weight_fused", "conv:bias_fused"}));
  EXPECT_EQ(saved_names(count_saved(g, Mode::Deploy, in)), (V{"conv:X"}));
  EXPECT_EQ(saved_names(count_saved(g, Mode::Train, in)), (V{"conv:X", "bn:xhat", "bn:batch_mean", "bn:batch_var"}));
}

TEST(CountSaved, NoPairsMeansEqualTotals) {
  fixtures::GraphBuilder b;
  b.input("x", 2, 6, 6);
  b.conv("c", "x", 2, 3, 3, 1, 1, true);
  b.relu("r", "c");
  b.output("out", "r");
  const Graph g = b.finish();
  const auto cmp = compare_modes(g, Shape{2, 2, 6, 6});
  EXPECT_EQ(cmp.eval.total_bytes, cmp.tune.total_bytes);
  EXPECT_EQ(cmp.eval.total_bytes, cmp.deploy.total_bytes);
}

TEST(CountSaved, TotalsAreSumsOfNodes) {
  const auto r = count_saved(fixtures::tiny_resnet(), Mode::Eval, Shape{2, 3, 8, 8});
  std::int64_t e = 0;
  for (const auto& n : r.nodes) {
    std::int64_t per = 0;
    for (const auto& s : n.saved)
      if (s.shared_with.empty()) per += s.elements;
    EXPECT_EQ(per, n.elements);
    e += n.elements;
  }
  EXPECT_EQ(e, r.total_elements);
}

TEST(CountSaved, SharedTensorsAreCountedOnce) {
  const auto r = count_saved(fixtures::tiny_resnet(), Mode::Eval, Shape{2, 3, 8, 8});
  // block2's input feeds both block2.conv1 and the projection conv.
  bool found = false;
  for (const auto& n : r.nodes)
    if (n.node_id == "block2.down") {
      ASSERT_EQ(n.saved.size(), 1u);
      EXPECT_FALSE(n.saved[0].shared_with.empty());
      EXPECT_EQ(n.elements, 0);
      found = true;
    }
  EXPECT_TRUE(found);
}

TEST(CountSaved, ShapeFailureNamesTheNode) {
  fixtures::GraphBuilder b;
  b.input("x", 2, 6, 6);
  b.conv("c", "x", 2, 3, 3, 1, 1, true);
  b.pool("p", "c");
  b.linear("fc", "p", 5, 2);
  b.output("out", "fc");
  const Graph g = b.finish();
  try {
    count_saved(g, Mode::Eval, Shape{1, 2, 6, 6});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("'fc'"), std::string::npos) << e.what();
  }
}

TEST(VerifyAgainstEngine, AllExecutableFixturesAllModes) {
  for (const char* name : {"toy_chain", "seven_pattern", "tiny_resnet", "conv_stack"}) {
    const Graph g = with_params(fixtures::build_fixture(name), 1);
    const auto per = g.node(g.input_id()).attrs.at("shape").get<std::vector<std::int64_t>>();
    Rng rng(2);
    const Tensor x = rng.normal_tensor(Shape{2, per[0], per[1], per[2]});
    for (Mode m : {Mode::Train, Mode::Eval, Mode::Tune, Mode::Deploy}) {
      const VerifyResult v = verify_against_engine(g, m, x);
      EXPECT_TRUE(v.ok()) << name << " " << mode_name(m) << ": "
                          << (v.ok() ? "" : v.discrepancies[0].node_id + " " + v.discrepancies[0].detail);
      EXPECT_EQ(v.analytic.total_elements, v.instrumented.total_elements);
      EXPECT_EQ(v.analytic.snapshot_elements, v.instrumented.snapshot_elements);
    }
  }
}

TEST(VerifyAgainstEngine, SingleBlockRecordedSets) {
  const Graph g = with_params(fixtures::single_block(3, 4, 8, 8, 3, 1, 1, true), 3);
  Rng rng(4);
  const Tensor x = rng.normal_tensor(Shape{1, 3, 8, 8});
  using V = std::vector<std::string>;
  EXPECT_EQ(saved_names(verify_against_engine(g, Mode::Eval, x).instrumented), (V{"conv:X", "bn:Y"}));
  EXPECT_EQ(saved_names(verify_against_engine(g, Mode::Tune, x).instrumented),
            (V{"conv:X", "conv:weight_fused", "conv:bias_fused"}));
  EXPECT_EQ(saved_names(verify_against_engine(g, Mode::Deploy, x).instrumented), (V{"conv:X"}));
}

TEST(VerifyAgainstEngine, DetectsDiscrepancies) {
  // A graph rewritten behind the analysis's back retains fewer tensors.
  Graph g = with_params(fixtures::single_block(2, 2, 4, 4, 1, 1, 0, false), 5);
  const auto analytic = count_saved(g, Mode::Eval, Shape{1, 2, 4, 4});
  Graph deployed = g;
  graph::turn_on(deployed, Mode::Deploy);
  Rng rng(6);
  const auto fwd = graph::execute_forward(deployed, rng.normal_tensor(Shape{1, 2, 4, 4}));
  const auto recorded = instrumented_footprint(deployed, fwd, Mode::Eval);
  EXPECT_NE(analytic.total_elements, recorded.total_elements);
}

TEST(Monotonicity, DeployTuneEvalOnShippedFixtures) {
  for (const auto& name : fixtures::fixture_names()) {
    if (name == "mixed_dims") continue;
    const Graph g = fixtures::build_fixture(name);
    const auto per = g.node(g.input_id()).attrs.at("shape").get<std::vector<std::int64_t>>();
    const auto cmp = compare_modes(g, Shape{8, per[0], per[1], per[2]});
    EXPECT_LE(cmp.deploy.total_bytes, cmp.tune.total_bytes) << name;
    EXPECT_LE(cmp.tune.total_bytes, cmp.eval.total_bytes) << name;
  }
}

TEST(ResNet50, TuneOverEvalRatioInPaperBand) {
  const auto cmp = compare_modes(fixtures::resnet50(), Shape{32, 3, 224, 224});
  EXPECT_GE(cmp.tune_over_eval(), 0.45);
  EXPECT_LE(cmp.tune_over_eval(), 0.65);
  RecordProperty("tune_over_eval", std::to_string(cmp.tune_over_eval()));
  std::cout << cmp.to_table();
}

TEST(Reports, JsonAndTable) {
  const auto r = count_saved(fixtures::toy_chain(), Mode::Tune, Shape{2, 3, 8, 8});
  const auto j = r.to_json();
  EXPECT_EQ(j.at("mode"), "tune");
  EXPECT_EQ(j.at("total_bytes").get<std::int64_t>(), r.total_bytes);
  EXPECT_NE(r.to_table().find("total"), std::string::npos);
}

}  // namespace
}  // namespace convbn::memory
