// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <set>

#include "convbn/errors.hpp"
#include "convbn/harness.hpp"

namespace convbn::harness {
namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Linear interpolation between order statistics.
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Json summarize(std::vector<double> values, double lo, double hi, int bins) {
  std::sort(values.begin(), values.end());
  std::vector<std::int64_t> counts(static_cast<std::size_t>(bins), 0);
  const double width = (hi - lo) / bins;
  for (double v : values) {
    auto b = static_cast<std::int64_t>(std::floor((v - lo) / width));
    b = std::clamp<std::int64_t>(b, 0, bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  Json q = Json::object();
  for (const auto& [name, p] : {std::pair{"p01", 0.01}, {"p05", 0.05}, {"p25", 0.25}, {"p50", 0.5},
                                {"p75", 0.75}, {"p95", 0.95}, {"p99", 0.99}}) {
    q[name] = quantile(values, p);
  }
  return {{"count", values.size()}, {"min", values.front()}, {"max", values.back()},
          {"quantiles", q},         {"counts", counts}};
}

}  // namespace

ExperimentReport cmd_coeffs(const TensorMap& stats, const CoeffsOptions& opt) {
  if (opt.bins < 1) throw InputError("coeffs: bins must be >= 1");
  std::vector<std::string> layers;
  for (const auto& [name, t] : stats)
    if (ends_with(name, ".gamma")) layers.push_back(name.substr(0, name.size() - 6));
  std::vector<std::string> missing;
  for (const auto& l : layers)
    if (!stats.count(l + ".running_var")) missing.push_back(l + ".running_var");
  if (layers.empty() || !missing.empty()) {
    std::string msg = "BN statistics: expected <layer>.gamma and <layer>.running_var per layer "
                      "(optional scalar <layer>.eps)";
    if (layers.empty()) msg += "; no '<layer>.gamma' tensors found";
    for (const auto& m : missing) msg += "; missing '" + m + "'";
    throw InputError(msg);
  }

  ExperimentReport r;
  r.experiment = "coeffs";
  r.config = {{"bins", opt.bins}, {"layers", layers.size()}};
  std::vector<std::pair<std::string, std::vector<double>>> per_layer;
  std::vector<double> pooled;
  for (const auto& l : layers) {
    const Tensor& g = stats.at(l + ".gamma");
    const Tensor& v = stats.at(l + ".running_var");
    if (g.shape() != v.shape() || g.rank() != 1) {
      throw ShapeError("layer '" + l + "': gamma " + g.shape().str() + " vs running_var " + v.shape().str());
    }
    double eps = opt.default_eps;
    if (stats.count(l + ".eps")) {
      const Tensor& e = stats.at(l + ".eps");
      if (e.numel() != 1) throw ShapeError("layer '" + l + "': eps must be a scalar");
      eps = e[0];
    }
    std::vector<double> c;
    for (std::size_t k = 0; k < g.numel(); ++k) {
      const double s = v[k] + eps;
      if (!(s > 0.0)) throw DomainError("layer '" + l + "': running_var + eps <= 0 at channel " + std::to_string(k));
      c.push_back(g[k] / std::sqrt(s));
    }
    if (c.empty()) throw ShapeError("layer '" + l + "' has no channels");
    pooled.insert(pooled.end(), c.begin(), c.end());
    per_layer.emplace_back(l, std::move(c));
  }
  const auto [mn, mx] = std::minmax_element(pooled.begin(), pooled.end());
  double lo = opt.lo.value_or(std::min(0.0, *mn));
  double hi = opt.hi.value_or(*mx);
  if (hi <= lo) hi = lo + 1.0;
  r.config["range"] = {lo, hi};

  Json layers_json = Json::array();
  for (const auto& [name, c] : per_layer) {
    Json j = summarize(c, lo, hi, opt.bins);
    j["layer"] = name;
    j["coefficients"] = c;
    layers_json.push_back(std::move(j));
  }
  Json edges = Json::array();
  for (int b = 0; b <= opt.bins; ++b) edges.push_back(lo + (hi - lo) * b / opt.bins);
  r.metrics["bin_edges"] = edges;
  r.metrics["layers"] = layers_json;
  r.metrics["pooled"] = summarize(pooled, lo, hi, opt.bins);
  return r;
}

}  // namespace convbn::harness
