#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "stats.hpp"

namespace sloc {

using Json = nlohmann::ordered_json;

enum class Status { pass, fail, report };

inline const char* to_string(Status s) {
  switch (s) {
    case Status::pass: return "pass";
    case Status::fail: return "fail";
    case Status::report: return "report";
  }
  return "?";
}

inline Status verdict(bool ok) { return ok ? Status::pass : Status::fail; }

// One named check: headline statistic, optional interval, status, details.
struct CheckReport {
  std::string name;
  double statistic = std::nan("");
  stats::Interval ci{std::nan(""), std::nan("")};
  Status status = Status::report;
  Json details = Json::object();

  bool ok() const { return status != Status::fail; }
};

inline Json finite_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline Json to_json(const CheckReport& r) {
  Json j;
  j["name"] = r.name;
  j["statistic"] = finite_or_null(r.statistic);
  j["ci"] = {finite_or_null(r.ci.lo), finite_or_null(r.ci.hi)};
  j["status"] = to_string(r.status);
  j["details"] = r.details;
  return j;
}

inline Json to_json(const std::vector<CheckReport>& rs) {
  Json j = Json::array();
  for (const auto& r : rs) j.push_back(to_json(r));
  return j;
}

}  // namespace sloc
