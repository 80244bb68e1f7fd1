// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace convbn::harness {

using Json = nlohmann::json;

enum class Compare { LessEqual, GreaterEqual, Equal };

struct Criterion {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  Compare compare = Compare::LessEqual;
  bool pass = false;
  std::string detail;
  /// Timing-derived; reported with the nondeterministic data.
  bool timing = false;

  std::string line() const;  // "PASS name: measured <= threshold (detail)"
};

struct ExperimentReport {
  std::string experiment;
  Json config = Json::object();
  Json metrics = Json::object();
  /// Wall-clock and machine-dependent fields; excluded from determinism checks.
  Json nondeterministic = Json::object();
  std::vector<Criterion> criteria;

  /// Evaluates the comparison and appends the criterion.
  const Criterion& check(std::string name, double measured, Compare compare, double threshold,
                         std::string detail = {});
  const Criterion& check_timing(std::string name, double measured, Compare compare, double threshold,
                                std::string detail = {});
  bool passed() const;
  /// Canonical key order. With `include_nondeterministic` false, timing data
  /// and timing criteria are dropped and "passed" covers the rest.
  Json to_json(bool include_nondeterministic = true) const;
};

/// Merges several reports into one document with an overall verdict.
Json combine(const std::vector<ExperimentReport>& reports, bool include_nondeterministic = true);

}  // namespace convbn::harness
