// Copyright 2026 The convbn Authors
// SPDX-License-Identifier: Apache-2.0

#include "convbn/report.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace convbn::harness {
namespace {

const char* symbol(Compare c) {
  switch (c) {
    case Compare::LessEqual: return "<=";
    case Compare::GreaterEqual: return ">=";
    case Compare::Equal: return "==";
  }
  return "?";
}

}  // namespace

std::string Criterion::line() const {
  std::ostringstream os;
  os.precision(6);
  os << (pass ? "PASS " : "FAIL ") << name << ": " << measured << ' ' << symbol(compare) << ' ' << threshold;
  if (!detail.empty()) os << " (" << detail << ')';
  return os.str();
}

const Criterion& ExperimentReport::check(std::string name, double measured, Compare compare, double threshold,
                                         std::string detail) {
  Criterion c{std::move(name), measured, threshold, compare, false, std::move(detail)};
  if (std::isfinite(measured)) {
    switch (compare) {
      case Compare::LessEqual: c.pass = measured <= threshold; break;
      case Compare::GreaterEqual: c.pass = measured >= threshold; break;
      case Compare::Equal: c.pass = measured == threshold; break;
    }
  }
  criteria.push_back(std::move(c));
  return criteria.back();
}

const Criterion& ExperimentReport::check_timing(std::string name, double measured, Compare compare,
                                                double threshold, std::string detail) {
  check(std::move(name), measured, compare, threshold, std::move(detail));
  criteria.back().timing = true;
  return criteria.back();
}

bool ExperimentReport::passed() const {
  return std::all_of(criteria.begin(), criteria.end(), [](const Criterion& c) { return c.pass; });
}

Json ExperimentReport::to_json(bool include_nondeterministic) const {
  Json crit = Json::array();
  Json timing = Json::array();
  bool ok = true;
  for (const auto& c : criteria) {
    if (c.timing && !include_nondeterministic) continue;
    ok = ok && c.pass;
    Json j{{"name", c.name},
           {"measured", std::isfinite(c.measured) ? Json(c.measured) : Json("non-finite")},
           {"threshold", c.threshold},
           {"compare", symbol(c.compare)},
           {"pass", c.pass}};
    if (!c.detail.empty()) j["detail"] = c.detail;
    (c.timing ? timing : crit).push_back(std::move(j));
  }
  Json doc{{"experiment", experiment}, {"config", config}, {"metrics", metrics}, {"criteria", std::move(crit)},
           {"passed", ok}};
  if (include_nondeterministic && (!nondeterministic.empty() || !timing.empty())) {
    doc["nondeterministic"] = nondeterministic;
    if (!timing.empty()) doc["nondeterministic"]["criteria"] = std::move(timing);
  }
  return doc;
}

Json combine(const std::vector<ExperimentReport>& reports, bool include_nondeterministic) {
  Json all = Json::array();
  bool ok = true;
  for (const auto& r : reports) {
    all.push_back(r.to_json(include_nondeterministic));
    ok = ok && all.back()["passed"].get<bool>();
  }
  return Json{{"reports", std::move(all)}, {"passed", ok}};
}

}  // namespace convbn::harness
