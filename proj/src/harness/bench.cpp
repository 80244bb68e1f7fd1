// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "convbn/executor.hpp"
#include "convbn/fixtures.hpp"
#include "convbn/errors.hpp"
#include "convbn/harness.hpp"
#include "convbn/memory_model.hpp"
#include "convbn/rewrite.hpp"

namespace convbn::harness {
namespace {

using Clock = std::chrono::steady_clock;
constexpr std::array<Mode, 3> kModes{Mode::Eval, Mode::Tune, Mode::Deploy};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct CellResult {
  std::array<double, 3> median_ms{};
  std::array<std::vector<double>, 3> samples_ms;
  std::array<std::int64_t, 3> saved_bytes{};
  std::array<std::int64_t, 3> instrumented_bytes{};
  int iters_per_sample = 1;
};

CellResult run_cell(const BenchOptions& opt, std::int64_t batch, std::int64_t size, std::int64_t width,
                    std::int64_t depth, std::uint64_t seed) {
  graph::Graph base = fixtures::conv_stack(opt.in_channels, width, depth, size, opt.classes);
  Rng rng(seed);
  fixtures::init_params(base, rng, opt.dtype);
  const Tensor x = rng.normal_tensor(Shape{batch, opt.in_channels, size, size}, 0.0, 1.0, opt.dtype);
  const Tensor dout = rng.normal_tensor(Shape{batch, opt.classes}, 0.0, 1.0, opt.dtype);
  std::array<graph::Graph, 3> graphs{base, base, base};
  graph::turn_on(graphs[1], Mode::Tune);
  graph::turn_on(graphs[2], Mode::Deploy);

  CellResult out;
  double sink = 0.0;
  auto iterate = [&](std::size_t m) {
    const auto fwd = graph::execute_forward(graphs[m], x, graph::BnMode::Eval);
    const auto bwd = graph::execute_backward(graphs[m], fwd, dout);
    sink += bwd.dx[0];
  };
  for (std::size_t m = 0; m < 3; ++m) {
    out.saved_bytes[m] = memory::count_saved(base, kModes[m], x.shape(), opt.dtype).total_bytes;
    const auto fwd = graph::execute_forward(graphs[m], x, graph::BnMode::Eval);
    out.instrumented_bytes[m] = memory::instrumented_footprint(graphs[m], fwd, kModes[m], opt.dtype).total_bytes;
  }

  // Warmup, interleaved; the fastest warm iteration sizes the sample.
  double fastest = INFINITY;
  for (int w = 0; w < opt.warmup; ++w) {
    for (std::size_t m = 0; m < 3; ++m) {
      const auto t0 = Clock::now();
      iterate(m);
      fastest = std::min(fastest, std::chrono::duration<double, std::milli>(Clock::now() - t0).count());
    }
  }
  if (opt.warmup > 0 && fastest < opt.min_sample_ms) {
    out.iters_per_sample = static_cast<int>(std::ceil(opt.min_sample_ms / std::max(fastest, 1e-6)));
  }
  for (int rep = 0; rep < opt.repeats; ++rep) {
    for (std::size_t j = 0; j < 3; ++j) {
      const std::size_t m = (j + static_cast<std::size_t>(rep)) % 3;  // rotate the order
      const auto t0 = Clock::now();
      for (int k = 0; k < out.iters_per_sample; ++k) iterate(m);
      out.samples_ms[m].push_back(std::chrono::duration<double, std::milli>(Clock::now() - t0).count() /
                                  out.iters_per_sample);
    }
  }
  for (std::size_t m = 0; m < 3; ++m) out.median_ms[m] = median(out.samples_ms[m]);
  if (sink == 12345.6789) std::fputs("", stderr);  // keep the work observable
  return out;
}

std::string cell_name(std::int64_t batch, std::int64_t size) {
  return "b" + std::to_string(batch) + "_s" + std::to_string(size);
}

}  // namespace

ExperimentReport cmd_bench(const BenchOptions& opt) {
  if (opt.repeats < 5) throw InputError("bench: at least 5 timed repeats are required");
  if (opt.warmup < 0 || opt.batches.empty() || opt.sizes.empty()) throw InputError("bench: empty grid");
#if defined(__GLIBC__)
  // Keep large activation buffers in the heap instead of fresh mmap pages each
  // iteration; page-fault time otherwise dominates the sample spread.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  ExperimentReport r;
  r.experiment = "bench";
  r.config = {{"seed", opt.seed},       {"batches", opt.batches}, {"sizes", opt.sizes},
              {"in_channels", opt.in_channels}, {"width", opt.width},     {"depth", opt.depth},
              {"classes", opt.classes}, {"dtype", dtype_name(opt.dtype)}, {"warmup", opt.warmup},
              {"repeats", opt.repeats}, {"min_sample_ms", opt.min_sample_ms}};

  Json memory_rows = Json::array();
  Json timing_rows = Json::array();
  std::int64_t memory_mismatches = 0;
  double worst_deploy_tune = 0.0, worst_tune_eval = 0.0;
  std::string worst_dt_cell, worst_te_cell;
  std::uint64_t cell_seed = opt.seed;
  for (const auto batch : opt.batches) {
    for (const auto size : opt.sizes) {
      const auto cell = run_cell(opt, batch, size, opt.width, opt.depth, cell_seed++);
      Json mem{{"batch", batch}, {"size", size}};
      Json tim{{"batch", batch}, {"size", size}, {"iters_per_sample", cell.iters_per_sample}};
      for (std::size_t m = 0; m < 3; ++m) {
        const std::string mode(mode_name(kModes[m]));
        mem[mode + "_saved_bytes"] = cell.saved_bytes[m];
        if (cell.saved_bytes[m] != cell.instrumented_bytes[m]) ++memory_mismatches;
        tim[mode + "_median_ms"] = cell.median_ms[m];
        tim[mode + "_samples_ms"] = cell.samples_ms[m];
      }
      const double dt = cell.median_ms[2] / cell.median_ms[1];
      const double te = cell.median_ms[1] / cell.median_ms[0];
      tim["tune_saving_vs_eval_pct"] = 100.0 * (1.0 - te);
      if (!(dt <= worst_deploy_tune)) {
        worst_deploy_tune = dt;
        worst_dt_cell = cell_name(batch, size);
      }
      if (!(te <= worst_tune_eval)) {
        worst_tune_eval = te;
        worst_te_cell = cell_name(batch, size);
      }
      memory_rows.push_back(std::move(mem));
      timing_rows.push_back(std::move(tim));
    }
  }
  r.metrics["memory"] = memory_rows;
  r.nondeterministic["timing"] = timing_rows;
  r.check("memory_matches_instrumented", static_cast<double>(memory_mismatches), Compare::Equal, 0.0,
          "count_saved vs executed tape, every cell and mode");
  r.check_timing("deploy_over_tune_median", worst_deploy_tune, Compare::LessEqual, 1.0, "worst cell " + worst_dt_cell);
  r.check_timing("tune_over_eval_median", worst_tune_eval, Compare::LessEqual, 1.0, "worst cell " + worst_te_cell);

  if (opt.sanity_cell) {
    const auto cell = run_cell(opt, 4, 16, 4, 1, opt.seed + 977);
    const double mx = *std::max_element(cell.median_ms.begin(), cell.median_ms.end());
    const double mn = *std::min_element(cell.median_ms.begin(), cell.median_ms.end());
    r.nondeterministic["sanity_cell"] = {{"batch", 4}, {"size", 16}, {"width", 4}, {"depth", 1},
                                         {"eval_median_ms", cell.median_ms[0]},
                                         {"tune_median_ms", cell.median_ms[1]},
                                         {"deploy_median_ms", cell.median_ms[2]}};
    r.check_timing("sanity_max_over_min", mx / mn, Compare::LessEqual, 2.0, "one-layer net");
  }
  return r;
}

std::string bench_table(const ExperimentReport& bench) {
  std::ostringstream os;
  os << std::setw(6) << "batch" << std::setw(6) << "size";
  for (const char* m : {"eval", "tune", "deploy"}) os << std::setw(12) << (std::string(m) + " ms") << std::setw(14) << (std::string(m) + " bytes");
  os << std::setw(10) << "saving%" << '\n';
  const Json& mem = bench.metrics.at("memory");
  const Json& tim = bench.nondeterministic.at("timing");
  os << std::fixed;
  for (std::size_t i = 0; i < mem.size(); ++i) {
    os << std::setw(6) << mem[i]["batch"].get<std::int64_t>() << std::setw(6) << mem[i]["size"].get<std::int64_t>();
    for (const char* m : {"eval", "tune", "deploy"}) {
      os << std::setw(12) << std::setprecision(3) << tim[i][std::string(m) + "_median_ms"].get<double>()
         << std::setw(14) << mem[i][std::string(m) + "_saved_bytes"].get<std::int64_t>();
    }
    os << std::setw(10) << std::setprecision(2) << tim[i]["tune_saving_vs_eval_pct"].get<double>() << '\n';
  }
  return os.str();
}

std::string bench_csv(const ExperimentReport& bench) {
  std::ostringstream os;
  os << "batch,size,eval_ms,eval_bytes,tune_ms,tune_bytes,deploy_ms,deploy_bytes\n";
  const Json& mem = bench.metrics.at("memory");
  const Json& tim = bench.nondeterministic.at("timing");
  os.precision(6);
  for (std::size_t i = 0; i < mem.size(); ++i) {
    os << mem[i]["batch"].get<std::int64_t>() << ',' << mem[i]["size"].get<std::int64_t>();
    for (const char* m : {"eval", "tune", "deploy"}) {
      os << ',' << tim[i][std::string(m) + "_median_ms"].get<double>() << ','
         << mem[i][std::string(m) + "_saved_bytes"].get<std::int64_t>();
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace convbn::harness
