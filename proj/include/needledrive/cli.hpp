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

// The `needledrive` command line: run, drift, table1 and serve.
// Exit codes: 0 ok, 1 runtime failure (I/O, bind), 2 usage, 3 config,
// 4 experiment failure.

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <CLI11.hpp>
#include <boost/asio/io_context.hpp>
#include <boost/asio/signal_set.hpp>
#include <boost/asio/steady_timer.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "needledrive/config.hpp"
#include "needledrive/experiments.hpp"
#include "needledrive/report.hpp"
#include "needledrive/telemetry.hpp"
#include "needledrive/telemetry_server.hpp"

namespace needledrive::cli {

enum ExitCode : int { kOk = 0, kRuntimeError = 1, kUsageError = 2, kConfigError = 3, kExperimentError = 4 };

inline constexpr std::string_view kDriftCsvHeader =
    "revolutions,epsilon,pid,total_rotation_deg,insertion_drift_mm,drift_per_rev_mm";

struct ExperimentFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AccuracyResult {
  const AccuracyExperiment* def;
  std::vector<ExperimentStats> stats;
};

struct DriftRunResult {
  const DriftExperiment* def;
  DriftResult result;
};

using ExperimentResult = std::variant<AccuracyResult, DriftRunResult>;

/// Runs every experiment in the scenario, in order.
inline std::vector<ExperimentResult> run_scenario(const ScenarioConfig& cfg) {
  std::vector<ExperimentResult> results;
  for (const auto& def : cfg.experiments) {
    const auto& name = std::visit([](const auto& e) -> const std::string& { return e.name; }, def);
    try {
      if (const auto* a = std::get_if<AccuracyExperiment>(&def)) {
        const auto noise = resolve_noise(a->axis == Axis::Insertion ? cfg.insertion_noise : cfg.rotary_noise, cfg.seed);
        AccuracyResult r{a, {}};
        for (double target : a->targets) {
          r.stats.push_back(run_accuracy_trials({a->axis, target, a->repetitions}, noise, cfg.sim));
        }
        results.emplace_back(std::move(r));
      } else {
        const auto& d = std::get<DriftExperiment>(def);
        results.emplace_back(DriftRunResult{&d, run_drift_experiment(d.revolutions, d.epsilon, cfg.sim, {d.pid, d.settle_s})});
      }
    } catch (const std::exception& e) {
      throw ExperimentFailure("experiment '" + name + "': " + e.what());
    }
  }
  return results;
}

inline std::string_view axis_unit(Axis a) { return a == Axis::Insertion ? "mm" : "deg"; }

/// CSV: one block per experiment, each introduced by a "# name ..." line
/// and separated by a blank line. JSON: a single document.
inline std::string format_results(const ScenarioConfig& cfg, const std::vector<ExperimentResult>& results,
                                  ReportFormat format) {
  if (format == ReportFormat::CSV) {
    std::string out;
    for (const auto& r : results) {
      if (!out.empty()) out += '\n';
      if (const auto* a = std::get_if<AccuracyResult>(&r)) {
        out += fmt::format("# {}: accuracy, axis={}, unit={}, seed={}\n", a->def->name, to_string(a->def->axis),
                           axis_unit(a->def->axis), cfg.seed);
        out += emit_report(std::span<const ExperimentStats>(a->stats), ReportFormat::CSV);
      } else {
        const auto& d = std::get<DriftRunResult>(r);
        out += fmt::format("# {}: drift\n{}\n", d.def->name, kDriftCsvHeader);
        out += fmt::format("{},{},{},{},{},{}\n", d.def->revolutions, d.def->epsilon, d.def->pid,
                           d.result.total_rotation_deg, d.result.insertion_drift_mm, d.result.drift_per_rev_mm);
      }
    }
    return out;
  }

  nlohmann::ordered_json doc;
  doc["version"] = kConfigVersion;
  doc["seed"] = cfg.seed;
  doc["experiments"] = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    nlohmann::ordered_json e;
    if (const auto* a = std::get_if<AccuracyResult>(&r)) {
      e["name"] = a->def->name;
      e["kind"] = "accuracy";
      e["axis"] = std::string(to_string(a->def->axis));
      e["unit"] = std::string(axis_unit(a->def->axis));
      e["rows"] = nlohmann::ordered_json::parse(emit_report(std::span<const ExperimentStats>(a->stats),
                                                            ReportFormat::JSON))["rows"];
    } else {
      const auto& d = std::get<DriftRunResult>(r);
      e["name"] = d.def->name;
      e["kind"] = "drift";
      e["revolutions"] = d.def->revolutions;
      e["epsilon"] = d.def->epsilon;
      e["pid"] = d.def->pid;
      e["total_rotation_deg"] = d.result.total_rotation_deg;
      e["insertion_drift_mm"] = d.result.insertion_drift_mm;
      e["drift_per_rev_mm"] = d.result.drift_per_rev_mm;
    }
    doc["experiments"].push_back(std::move(e));
  }
  return doc.dump(2) + "\n";
}

inline bool write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) return false;
  f << text;
  f.close();
  return static_cast<bool>(f);
}

inline int cmd_run(const std::string& config_path, const std::optional<std::string>& out_path,
                   std::optional<ReportFormat> format, std::ostream& out, std::ostream& err) {
  ScenarioConfig cfg;
  try {
    cfg = load_scenario(config_path);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  if (!format) {
    const bool json = out_path && out_path->size() >= 5 && out_path->ends_with(".json");
    format = json ? ReportFormat::JSON : ReportFormat::CSV;
  }

  std::string text;
  try {
    text = format_results(cfg, run_scenario(cfg), *format);
  } catch (const ExperimentFailure& e) {
    err << "experiment failed: " << e.what() << "\n";
    return kExperimentError;
  }

  if (!out_path) {
    out << text;
    return kOk;
  }
  if (!write_file(*out_path, text)) {
    err << "cannot write " << *out_path << "\n";
    return kRuntimeError;
  }
  return kOk;
}

inline SimConfig sim_config_from(const std::optional<std::string>& config_path) {
  return config_path ? load_scenario(*config_path).sim : SimConfig{};
}

inline int cmd_drift(double epsilon, int revolutions, bool pid, const std::optional<std::string>& config_path,
                     std::ostream& out, std::ostream& err) {
  if (!(std::abs(epsilon) < kMaxMismatch)) {
    err << "--epsilon must satisfy |epsilon| < " << kMaxMismatch << "\n";
    return kUsageError;
  }
  SimConfig sim;
  try {
    sim = sim_config_from(config_path);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  DriftResult r;
  try {
    r = run_drift_experiment(revolutions, epsilon, sim, {pid});
  } catch (const std::exception& e) {
    err << "experiment failed: " << e.what() << "\n";
    return kExperimentError;
  }
  out << fmt::format("revolutions         {}\n", revolutions);
  out << fmt::format("epsilon             {}\n", epsilon);
  out << fmt::format("pid                 {}\n", pid ? "on" : "off");
  out << fmt::format("total_rotation_deg  {:.3f}\n", r.total_rotation_deg);
  out << fmt::format("insertion_drift_mm  {:.6f}\n", r.insertion_drift_mm);
  out << fmt::format("drift_per_rev_mm    {:.6f}\n", r.drift_per_rev_mm);
  return kOk;
}

inline int cmd_table1(std::optional<double> input_rpm, std::ostream& out) {
  const auto pulleys = all_slave_pulleys();
  std::vector<std::pair<std::string, std::vector<double>>> columns;
  if (input_rpm) {
    columns.emplace_back(fmt::format("nut_rpm@{}", *input_rpm), speed_table(*input_rpm, pulleys));
  } else {
    columns.emplace_back(fmt::format("rated@{}", constants::kRatedMotorRpm),
                         speed_table(constants::kRatedMotorRpm, pulleys));
    columns.emplace_back(fmt::format("real@{}", constants::kRealMotorRpm),
                         speed_table(constants::kRealMotorRpm, pulleys));
  }
  out << fmt::format("{:<16}{:>6}  {:<7}", "pulley", "teeth", "ratio");
  for (const auto& [name, _] : columns) out << fmt::format("{:>14}", name);
  out << "\n";
  for (std::size_t i = 0; i < pulleys.size(); ++i) {
    out << fmt::format("{:<16}{:>6}  {:<7}", fmt::format("Slave Pulley {}", i + 1), pulleys[i].slave_teeth,
                       fmt::format("1:{}", pulleys[i].ratio()));
    for (const auto& [_, values] : columns) out << fmt::format("{:>14}", values[i]);
    out << "\n";
  }
  return kOk;
}

struct ServeOptions {
  unsigned short port = kDefaultPort;
  std::string address = "127.0.0.1";
  std::optional<std::string> config_path;
  double duration_s = 0.0;  // 0: until SIGINT/SIGTERM
};

/// `on_ready` runs once the socket is listening and the simulation is
/// ticking, with the bound port.
inline int cmd_serve(const ServeOptions& opts, std::ostream& out, std::ostream& err,
                     const std::function<void(unsigned short)>& on_ready = {}) {
  SimConfig sim;
  try {
    sim = sim_config_from(opts.config_path);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  TelemetryService svc(sim);
  std::optional<TelemetryServer> server;
  try {
    server.emplace(svc, opts.address, opts.port);
  } catch (const ServerError& e) {
    err << e.what() << "\n";
    return kRuntimeError;
  }
  svc.start();
  server->start();
  out << fmt::format("serving on ws://{}:{}/ (state: GET /state)\n", opts.address, server->port()) << std::flush;
  if (on_ready) on_ready(server->port());

  boost::asio::io_context waiter;
  boost::asio::signal_set signals(waiter, SIGINT, SIGTERM);
  signals.async_wait([&](const boost::system::error_code&, int) { waiter.stop(); });
  boost::asio::steady_timer timer(waiter);
  if (opts.duration_s > 0.0) {
    timer.expires_after(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(opts.duration_s)));
    timer.async_wait([&](const boost::system::error_code& ec) {
      if (!ec) waiter.stop();
    });
  }
  waiter.run();

  svc.stop();
  server->stop();
  return kOk;
}

inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Simulator and experiment harness for a differential screw/spline needle driver"};
  app.name("needledrive");
  app.require_subcommand(1);

  std::string run_config;
  std::optional<std::string> run_out;
  std::optional<std::string> run_format;
  auto* run = app.add_subcommand("run", "Run every experiment in a scenario config and write the report");
  run->add_option("--config", run_config, "Scenario config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", run_out, "Report path; stdout when omitted");
  run->add_option("--format", run_format, "csv or json; default from --out extension, else csv")
      ->check(CLI::IsMember({"csv", "json"}));

  double epsilon = constants::kCanonicalMismatch;
  int revs = constants::kObservedDriftRevolutions;
  bool pid = false;
  std::optional<std::string> drift_config;
  auto* drift = app.add_subcommand("drift", "Pure-rotation drift under an IM/RM speed mismatch");
  drift->add_option("--epsilon", epsilon, "Insertion motor speed mismatch, |epsilon| < 0.1")->capture_default_str();
  drift->add_option("--revs", revs, "Shaft revolutions")->check(CLI::PositiveNumber)->capture_default_str();
  drift->add_flag("--pid", pid, "Enable PID speed compensation");
  drift->add_option("--config", drift_config, "Scenario config for the drive")->check(CLI::ExistingFile);

  std::optional<double> input_rpm;
  auto* table1 = app.add_subcommand("table1", "Nut speeds for each slave pulley");
  table1->add_option("--input-rpm", input_rpm, "Motor speed; default prints rated and real columns")
      ->check(CLI::NonNegativeNumber);

  ServeOptions serve_opts;
  std::optional<std::string> serve_config;
  auto* serve = app.add_subcommand("serve", "Run the simulator in real time behind the telemetry socket");
  serve->add_option("--port", serve_opts.port, "TCP port; 0 picks a free one")
      ->check(CLI::Range(0, 65535))
      ->capture_default_str();
  serve->add_option("--address", serve_opts.address, "Listen address")->capture_default_str();
  serve->add_option("--config", serve_config, "Scenario config for the drive")->check(CLI::ExistingFile);
  serve->add_option("--duration", serve_opts.duration_s, "Exit after this many seconds (0 = until signalled)")
      ->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (*run) {
      std::optional<ReportFormat> fmt_choice;
      if (run_format) fmt_choice = *run_format == "json" ? ReportFormat::JSON : ReportFormat::CSV;
      return cmd_run(run_config, run_out, fmt_choice, out, err);
    }
    if (*drift) return cmd_drift(epsilon, revs, pid, drift_config, out, err);
    if (*table1) return cmd_table1(input_rpm, out);
    if (*serve) {
      serve_opts.config_path = serve_config;
      return cmd_serve(serve_opts, out, err);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}

}  // namespace needledrive::cli
