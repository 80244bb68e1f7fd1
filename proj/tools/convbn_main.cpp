// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0
//
// convbn: verification suites, experiments, benchmarks, training and graph
// rewriting from the command line. Exit codes: 0 pass, 1 a criterion
// failed, 2 bad input.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "convbn/errors.hpp"
#include "convbn/fixtures.hpp"
#include "convbn/harness.hpp"
#include "convbn/kernels.hpp"
#include "convbn/memory_model.hpp"
#include "convbn/rewrite.hpp"

namespace fs = std::filesystem;
using namespace convbn;
using harness::ExperimentReport;
using harness::Json;

namespace {

struct Common {
  std::uint64_t seed = 42;
  std::string dtype = "f64";
  std::string graph;
  std::string params;
  std::string mode;
  std::string out;
  std::string kernels = "auto";
  bool no_timing = false;
};

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot write " + path);
  f << text;
}

int emit(const ExperimentReport& r, const Common& c) {
  write_text(c.out, r.to_json(!c.no_timing).dump(2) + "\n");
  for (const auto& crit : r.criteria) std::cerr << crit.line() << '\n';
  return r.passed() ? 0 : 1;
}

std::vector<std::int64_t> int_list(const std::string& text) {
  std::vector<std::int64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoll(item));
    } catch (const std::exception&) {
      throw InputError("bad integer list '" + text + "'");
    }
  }
  if (out.empty()) throw InputError("empty integer list");
  return out;
}

graph::Graph load_graph_arg(const Common& c) {
  if (c.graph.empty()) throw InputError("--graph is required");
  graph::Graph g = graph::load_graph_file(c.graph);
  if (!c.params.empty()) graph::import_params(g, read_tensors(c.params));
  return g;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"convbn: conv + batch-norm modes, graph rewriting and experiments"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
    sub->add_option("--dtype", c.dtype, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
    sub->add_option("--graph", c.graph, "Graph JSON (cbn-graph/1)");
    sub->add_option("--params", c.params, "CBNT parameter or statistics container");
    sub->add_option("--mode", c.mode, "train, eval, tune or deploy")
        ->check(CLI::IsMember({"train", "eval", "tune", "deploy"}));
    sub->add_option("--out", c.out, "Output JSON path (default stdout)");
    sub->add_option("--kernels", c.kernels, "auto, scalar, avx2 or neon")
        ->check(CLI::IsMember({"auto", "scalar", "avx2", "neon"}))
        ->capture_default_str();
    sub->add_flag("--no-timing", c.no_timing, "Omit wall-clock fields so reports compare byte-identical");
  };

  // verify
  harness::VerifyOptions vopt;
  auto* verify = app.add_subcommand("verify", "Eval/Tune/Deploy equivalence suite over random blocks");
  add_common(verify);
  verify->add_option("--instances", vopt.instances, "Random instances per check")->capture_default_str();
  verify->add_flag("--inject-fault", vopt.inject_fault, "Self-test: perturb w' by 1e-3 in one instance");
  verify->add_option("--fault-instance", vopt.fault_instance, "Instance receiving the fault")->capture_default_str();

  // gradcheck
  harness::GradcheckOptions gopt;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every backward op and block mode");
  add_common(gradcheck);
  gradcheck->add_option("--instances", gopt.instances, "Instances per op")->capture_default_str();
  gradcheck->add_option("--threshold", gopt.threshold, "Max relative error")->capture_default_str();

  // stability
  harness::StabilityOptions sopt;
  std::string coeff_spec;
  auto* stability = app.add_subcommand("stability", "Update-scale comparison of Eval and Deploy training");
  add_common(stability);
  stability->add_option("--coeffs", coeff_spec, "Comma list of c values, or loguniform:<lo>:<hi>");
  stability->add_option("--channels", sopt.channels, "Channels when sampling c")->capture_default_str();
  stability->add_option("--steps", sopt.steps, "Multi-step run length")->capture_default_str();
  stability->add_option("--lr", sopt.lr, "Learning rate")->capture_default_str();

  // coeffs
  harness::CoeffsOptions copt;
  std::optional<double> clo, chi;
  auto* coeffs = app.add_subcommand("coeffs", "Histogram of gamma / sqrt(running_var + eps) from BN statistics");
  add_common(coeffs);
  coeffs->add_option("--bins", copt.bins, "Histogram bins")->capture_default_str();
  coeffs->add_option("--lo", clo, "Histogram lower edge");
  coeffs->add_option("--hi", chi, "Histogram upper edge");

  // bench
  harness::BenchOptions bopt;
  std::string batches = "16,32,64", sizes = "32,48,64", csv;
  bool table = false;
  auto* bench = app.add_subcommand("bench", "Forward+backward timing and saved-tensor memory per mode");
  add_common(bench);
  bench->add_option("--batches", batches, "Batch sizes")->capture_default_str();
  bench->add_option("--sizes", sizes, "Input sizes")->capture_default_str();
  bench->add_option("--width", bopt.width, "Conv stack width")->capture_default_str();
  bench->add_option("--depth", bopt.depth, "Conv stack depth")->capture_default_str();
  bench->add_option("--repeats", bopt.repeats, "Timed samples per mode (>= 5)")->capture_default_str();
  bench->add_option("--warmup", bopt.warmup, "Warmup iterations per mode")->capture_default_str();
  bench->add_option("--csv", csv, "Also write the grid as CSV");
  bench->add_flag("--table", table, "Print the grid as a text table on stderr");

  // train
  harness::TrainConfig tcfg;
  std::string phases, dataset;
  std::int64_t steps = 200;
  bool equivalence = false, switch_check = false;
  auto* trainc = app.add_subcommand("train", "SGD training of the toy conv-bn net");
  add_common(trainc);
  trainc->add_option("--lr", tcfg.lr, "Learning rate")->capture_default_str();
  trainc->add_option("--momentum", tcfg.momentum, "SGD momentum")->capture_default_str();
  trainc->add_option("--weight-decay", tcfg.weight_decay, "L2 weight decay")->capture_default_str();
  trainc->add_option("--batch", tcfg.batch, "Batch size")->capture_default_str();
  trainc->add_option("--steps", steps, "Steps when --phases is not given")->capture_default_str();
  trainc->add_option("--phases", phases, "Mode schedule, e.g. train:100,tune:100");
  trainc->add_option("--cycles", tcfg.cycles, "Repeat the phase list")->capture_default_str();
  trainc->add_option("--calibration", tcfg.calibration_batches, "Train-mode statistic passes before step 0")
      ->capture_default_str();
  trainc->add_option("--dataset", dataset, "CBNT with images/labels (default: synthetic blobs)");
  trainc->add_flag("--equivalence", equivalence, "Paired Eval/Tune runs (f32 loss gap, f64 parameters)");
  trainc->add_flag("--switch-check", switch_check, "Train then Tune against a Train-only run");

  // rewrite
  std::string report_path;
  auto* rewrite = app.add_subcommand("rewrite", "Apply the Tune/Deploy rewrite (or revert) to a graph");
  add_common(rewrite);
  bool do_revert = false;
  rewrite->add_flag("--revert", do_revert, "Undo previous rewrites instead");
  rewrite->add_option("--report", report_path, "RewriteReport JSON path (default stdout)");

  // memory
  std::string input_shape = "32,3,224,224", fixture_name;
  auto* memory = app.add_subcommand("memory", "Saved-for-backward footprint per mode");
  add_common(memory);
  memory->add_option("--input-shape", input_shape, "N,C,H,W")->capture_default_str();
  memory->add_option("--fixture", fixture_name, "Built-in fixture instead of --graph");
  bool memory_table = false;
  memory->add_flag("--table", memory_table, "Text table instead of JSON");

  // fixture
  std::string fixture_dir = "fixtures";
  std::vector<std::string> fixture_list;
  auto* fixture = app.add_subcommand("fixture", "Export built-in graph fixtures as JSON + CBNT");
  add_common(fixture);
  fixture->add_option("--name", fixture_list, "Fixture names (default all)");
  fixture->add_option("--dir", fixture_dir, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    kernels::select(kernels::parse_backend(c.kernels));
    const DType dtype = parse_dtype(c.dtype);

    if (*verify) {
      vopt.seed = c.seed;
      return emit(harness::cmd_verify(vopt), c);
    }
    if (*gradcheck) {
      if (dtype != DType::F64) throw InputError("gradcheck runs in f64 only");
      gopt.seed = c.seed;
      return emit(harness::cmd_gradcheck(gopt), c);
    }
    if (*stability) {
      sopt.seed = c.seed;
      if (!coeff_spec.empty()) harness::parse_coeff_spec(coeff_spec, sopt);
      return emit(harness::cmd_stability(sopt), c);
    }
    if (*coeffs) {
      if (c.params.empty()) throw InputError("--params <stats.cbnt> is required");
      copt.lo = clo;
      copt.hi = chi;
      return emit(harness::cmd_coeffs(read_tensors(c.params), copt), c);
    }
    if (*bench) {
      bopt.seed = c.seed;
      bopt.dtype = parse_dtype(c.dtype == "f64" && !bench->count("--dtype") ? "f32" : c.dtype);
      bopt.batches = int_list(batches);
      bopt.sizes = int_list(sizes);
      const auto r = harness::cmd_bench(bopt);
      if (!csv.empty()) write_text(csv, harness::bench_csv(r));
      if (table) std::cerr << harness::bench_table(r);
      return emit(r, c);
    }
    if (*trainc) {
      if (equivalence) {
        harness::EquivalenceOptions e;
        e.seed = c.seed;
        e.steps = steps;
        return emit(harness::train_equivalence(e), c);
      }
      if (switch_check) return emit(harness::train_switch(c.seed, steps / 2), c);
      tcfg.seed = c.seed;
      tcfg.dtype = dtype;
      if (!phases.empty()) {
        tcfg.phases = harness::parse_phases(phases);
      } else {
        tcfg.phases = {{c.mode.empty() ? Mode::Eval : parse_mode(c.mode), steps}};
      }
      const harness::Dataset data =
          dataset.empty() ? harness::make_blobs(harness::BlobSpec{}, c.seed) : harness::load_dataset(dataset);
      const graph::Graph g = c.graph.empty() ? harness::toy_net(data, c.seed) : load_graph_arg(c);
      return emit(harness::cmd_train(g, data, tcfg), c);
    }
    if (*rewrite) {
      graph::Graph g = load_graph_arg(c);
      if (c.out.empty()) throw InputError("--out <graph.json> is required");
      graph::RewriteReport rep;
      if (do_revert) {
        rep = graph::revert(g);
      } else {
        if (c.mode.empty()) throw InputError("--mode tune|deploy is required");
        rep = graph::turn_on(g, parse_mode(c.mode));
      }
      const fs::path out = c.out;
      if (!g.params().empty() || !g.reserved_bns().empty()) g.params_file = out.stem().string() + ".cbnt";
      graph::save_graph_file(g, out);
      write_text(report_path, rep.to_json().dump(2) + "\n");
      return 0;
    }
    if (*memory) {
      graph::Graph g = fixture_name.empty() ? load_graph_arg(c) : fixtures::build_fixture(fixture_name);
      const auto e = int_list(input_shape);
      const Shape shape(e);
      const DType mdtype = memory->count("--dtype") ? dtype : DType::F32;
      if (!c.mode.empty()) {
        const auto r = memory::count_saved(g, parse_mode(c.mode), shape, mdtype);
        write_text(c.out, memory_table ? r.to_table() : r.to_json().dump(2) + "\n");
      } else {
        const auto r = memory::compare_modes(g, shape, mdtype);
        write_text(c.out, memory_table ? r.to_table() : r.to_json().dump(2) + "\n");
      }
      return 0;
    }
    if (*fixture) {
      if (fixture_list.empty()) fixture_list = fixtures::fixture_names();
      fs::create_directories(fixture_dir);
      for (const auto& name : fixture_list) {
        graph::Graph g = fixtures::build_fixture(name);
        // ResNet-50 stays shape-only: its parameters would be ~200 MB.
        if (name != "resnet50" && name != "mixed_dims") {
          Rng rng(c.seed);
          fixtures::init_params(g, rng, dtype);
          g.params_file = name + ".cbnt";
        }
        graph::save_graph_file(g, fs::path(fixture_dir) / (name + ".json"));
        std::cerr << "wrote " << (fs::path(fixture_dir) / (name + ".json")).string() << '\n';
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
