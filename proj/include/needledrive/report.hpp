// Copyright 2026 The needledrive Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Accuracy reports in CSV and JSON.
//
// CSV:  target,mean_error,std_dev,n   one row per target
// JSON: {"rows": [{"target":..., "mean_error":..., "std_dev":..., "n":...}]}
//
// Numbers are written in shortest round-trip form.

#include <charconv>
#include <cmath>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "needledrive/experiments.hpp"

namespace needledrive {

enum class ReportFormat { CSV, JSON };

inline constexpr std::string_view kReportCsvHeader = "target,mean_error,std_dev,n";

class ReportError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void check_rows(std::span<const AccuracyRow> rows) {
  if (rows.empty()) throw ReportError("report needs at least one row");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (!std::isfinite(r.target) || !std::isfinite(r.mean_error) || !std::isfinite(r.std_dev)) {
      throw ReportError(fmt::format("report row {} has a non-finite value", i));
    }
    if (r.n < 1) throw ReportError(fmt::format("report row {} has n < 1", i));
  }
}

inline double parse_double(std::string_view s, std::size_t line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ReportError(fmt::format("line {}: bad number '{}'", line, s));
  }
  return v;
}

inline std::int64_t parse_int(std::string_view s, std::size_t line) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ReportError(fmt::format("line {}: bad count '{}'", line, s));
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

inline std::string emit_report(std::span<const AccuracyRow> rows, ReportFormat format) {
  detail::check_rows(rows);
  if (format == ReportFormat::CSV) {
    std::string out(kReportCsvHeader);
    out += '\n';
    for (const auto& r : rows) out += fmt::format("{},{},{},{}\n", r.target, r.mean_error, r.std_dev, r.n);
    return out;
  }
  nlohmann::ordered_json doc;
  doc["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    doc["rows"].push_back({{"target", r.target}, {"mean_error", r.mean_error}, {"std_dev", r.std_dev}, {"n", r.n}});
  }
  return doc.dump(2) + "\n";
}

inline std::string emit_report(std::span<const ExperimentStats> stats, ReportFormat format) {
  std::vector<AccuracyRow> rows;
  rows.reserve(stats.size());
  for (const auto& s : stats) rows.push_back(s.row());
  return emit_report(std::span<const AccuracyRow>(rows), format);
}

inline std::vector<AccuracyRow> read_report(std::string_view text, ReportFormat format) {
  std::vector<AccuracyRow> rows;
  if (format == ReportFormat::CSV) {
    std::size_t line_no = 0;
    bool header_seen = false;
    for (auto line : detail::split(text, '\n')) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (line.empty()) continue;
      if (!header_seen) {
        if (line != kReportCsvHeader) throw ReportError(fmt::format("line {}: expected header '{}'", line_no, kReportCsvHeader));
        header_seen = true;
        continue;
      }
      const auto cells = detail::split(line, ',');
      if (cells.size() != 4) throw ReportError(fmt::format("line {}: expected 4 fields", line_no));
      rows.push_back({detail::parse_double(cells[0], line_no), detail::parse_double(cells[1], line_no),
                      detail::parse_double(cells[2], line_no), detail::parse_int(cells[3], line_no)});
    }
    if (!header_seen) throw ReportError("empty report");
  } else {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
      for (const auto& r : doc.at("rows")) {
        rows.push_back({r.at("target").get<double>(), r.at("mean_error").get<double>(), r.at("std_dev").get<double>(),
                        r.at("n").get<std::int64_t>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ReportError(std::string("bad JSON report: ") + e.what());
    }
  }
  detail::check_rows(rows);
  return rows;
}

}  // namespace needledrive
