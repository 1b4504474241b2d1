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

// Scenario configuration: a strict JSON document describing the drive, the
// controller, the measurement-noise model and the experiments to run. Every
// section is optional and falls back to the prototype's values; any key not
// in the schema is an error naming that key. docs/config.md has the schema.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "needledrive/constants.hpp"
#include "needledrive/experiments.hpp"
#include "needledrive/simulator.hpp"

namespace needledrive {

inline constexpr int kConfigVersion = 1;

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct AccuracyExperiment {
  std::string name;
  Axis axis = Axis::Insertion;
  std::vector<double> targets;
  int repetitions = constants::kAccuracyRepetitions;

  friend bool operator==(const AccuracyExperiment&, const AccuracyExperiment&) = default;
};

struct DriftExperiment {
  std::string name;
  int revolutions = constants::kObservedDriftRevolutions;
  double epsilon = constants::kCanonicalMismatch;
  bool pid = false;
  double settle_s = 5.0;

  friend bool operator==(const DriftExperiment&, const DriftExperiment&) = default;
};

using ExperimentDef = std::variant<AccuracyExperiment, DriftExperiment>;

/// Either explicit noise coefficients or a fit to one of the bundled bench
/// tables.
struct NoiseSource {
  enum class Kind { Explicit, Table2, Table3 };
  Kind kind = Kind::Explicit;
  NoiseModel model{};  // used when kind == Explicit; seed is ignored

  friend bool operator==(const NoiseSource&, const NoiseSource&) = default;
};

inline std::vector<AccuracyRow> bench_rows(Axis axis) {
  std::vector<AccuracyRow> rows;
  const auto& table = axis == Axis::Insertion ? constants::kInsertionAccuracy : constants::kRotaryAccuracy;
  for (const auto& r : table) rows.push_back({r.target, r.mean_error, r.std_dev, constants::kAccuracyRepetitions});
  return rows;
}

inline NoiseModel resolve_noise(const NoiseSource& src, std::uint64_t seed) {
  NoiseModel m;
  switch (src.kind) {
    case NoiseSource::Kind::Explicit: m = src.model; break;
    case NoiseSource::Kind::Table2: m = calibrate_noise(bench_rows(Axis::Insertion)).model; break;
    case NoiseSource::Kind::Table3: m = calibrate_noise(bench_rows(Axis::Rotary)).model; break;
  }
  m.seed = seed;
  return m;
}

struct ScenarioConfig {
  std::uint64_t seed = 0;
  SimConfig sim{};
  NoiseSource insertion_noise{};
  NoiseSource rotary_noise{};
  std::vector<ExperimentDef> experiments;

  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

namespace config_detail {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

/// Reads one JSON object, tracking which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  const std::string& path() const { return path_; }
  std::string key_path(const std::string& key) const { return join(path_, key); }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  double number(const std::string& key, double fallback) {
    const json* v = child(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(key_path(key), "expected a number");
    return v->get<double>();
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    const json* v = child(key);
    if (!v) return fallback;
    if (!v->is_number_integer()) throw ConfigError(key_path(key), "expected an integer");
    return v->get<std::int64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = child(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(key_path(key), "expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = child(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(key_path(key), "expected a string");
    return v->get<std::string>();
  }

  std::optional<Section> section(const std::string& key) {
    const json* v = child(key);
    if (!v) return std::nullopt;
    return Section(*v, key_path(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError(key_path(item.key()), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
void checked(const std::string& path, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
}

inline int narrow_int(Section& s, const std::string& key, int fallback) {
  const auto v = s.integer(key, fallback);
  if (v < INT32_MIN || v > INT32_MAX) throw ConfigError(s.key_path(key), "integer out of range");
  return static_cast<int>(v);
}

inline TransmissionConfig parse_transmission(Section s) {
  TransmissionConfig t;
  if (s.has("slave_pulley")) {
    if (s.has("slave_teeth") || s.has("master_teeth")) {
      throw ConfigError(s.path(), "give either slave_pulley or tooth counts, not both");
    }
    const int index = narrow_int(s, "slave_pulley", 1);
    checked(s.key_path("slave_pulley"), [&] { t = slave_pulley(index); });
  } else {
    t.master_teeth = narrow_int(s, "master_teeth", t.master_teeth);
    t.slave_teeth = narrow_int(s, "slave_teeth", t.slave_teeth);
  }
  s.finish();
  checked(s.path(), [&] { t.validate(); });
  return t;
}

inline MotorSpec parse_motor(Section s, MotorRole role) {
  MotorSpec m{role};
  m.rated_speed_rpm = s.number("rated_speed_rpm", m.rated_speed_rpm);
  m.real_speed_cap_rpm = s.number("real_speed_cap_rpm", m.real_speed_cap_rpm);
  m.time_constant_s = s.number("time_constant_s", m.time_constant_s);
  s.finish();
  checked(s.path(), [&] { m.validate(); });
  return m;
}

inline EncoderSpec parse_encoder(Section s, EncoderRole role) {
  EncoderSpec e{.role = role};
  e.lines_per_rev = narrow_int(s, "lines_per_rev", e.lines_per_rev);
  e.quadrature_multiplier = narrow_int(s, "quadrature", e.quadrature_multiplier);
  const auto mount = s.string("mount", "nut");
  if (mount == "nut") {
    e.mount = EncoderMount::Nut;
  } else if (mount == "motor") {
    e.mount = EncoderMount::Motor;
  } else {
    throw ConfigError(s.key_path("mount"), "expected \"nut\" or \"motor\"");
  }
  s.finish();
  checked(s.path(), [&] { e.validate(); });
  return e;
}

inline ApproachBand parse_band(Section s) {
  ApproachBand b;
  b.zone = s.number("zone", b.zone);
  b.creep_speed_rpm = s.number("creep_speed_rpm", b.creep_speed_rpm);
  s.finish();
  return b;
}

inline void parse_controller(Section s, SimConfig& sim) {
  auto& c = sim.controller;
  c.insertion_tol_mm = s.number("insertion_tol_mm", c.insertion_tol_mm);
  c.rotary_tol_deg = s.number("rotary_tol_deg", c.rotary_tol_deg);
  c.insertion_speed_rpm = s.number("insertion_speed_rpm", c.insertion_speed_rpm);
  c.rotary_speed_rpm = s.number("rotary_speed_rpm", c.rotary_speed_rpm);
  c.speed_cap_rpm = s.number("speed_cap_rpm", c.speed_cap_rpm);
  c.control_period_s = s.number("control_period_s", c.control_period_s);

  const auto observer = s.string("observer", std::string(to_string(c.observer)));
  if (observer == "differential") {
    c.observer = ObserverKind::Differential;
  } else if (observer == "freeze_hold") {
    c.observer = ObserverKind::FreezeHold;
  } else {
    throw ConfigError(s.key_path("observer"), "expected \"differential\" or \"freeze_hold\"");
  }

  if (const json* a = s.child("approach")) {
    const auto path = s.key_path("approach");
    if (a->is_string()) {
      const auto mode = a->get<std::string>();
      if (mode == "auto") {
        sim.auto_approach = true;
      } else if (mode == "none") {
        sim.auto_approach = false;
        c.insertion_approach.reset();
        c.rotary_approach.reset();
      } else {
        throw ConfigError(path, "expected \"auto\", \"none\" or an object");
      }
    } else {
      Section bands(*a, path);
      sim.auto_approach = false;
      if (auto ins = bands.section("insertion")) c.insertion_approach = parse_band(*ins);
      if (auto rot = bands.section("rotary")) c.rotary_approach = parse_band(*rot);
      bands.finish();
    }
  }

  if (auto pid = s.section("pid")) {
    c.pid_enabled = pid->boolean("enabled", c.pid_enabled);
    c.pid.kp = pid->number("kp", c.pid.kp);
    c.pid.ki = pid->number("ki", c.pid.ki);
    c.pid.kd = pid->number("kd", c.pid.kd);
    c.pid.integral_limit_rpm = pid->number("integral_limit_rpm", c.pid.integral_limit_rpm);
    pid->finish();
  }
  s.finish();
  checked(s.path(), [&] { c.validate(); });
}

inline NoiseSource parse_noise(const json& j, const std::string& path) {
  NoiseSource src;
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "table2") {
      src.kind = NoiseSource::Kind::Table2;
    } else if (name == "table3") {
      src.kind = NoiseSource::Kind::Table3;
    } else {
      throw ConfigError(path, "expected \"table2\", \"table3\" or an object");
    }
    return src;
  }
  Section s(j, path);
  src.model.sigma_intercept = s.number("sigma_intercept", 0.0);
  src.model.sigma_slope = s.number("sigma_slope", 0.0);
  src.model.bias_slope = s.number("bias_slope", 0.0);
  s.finish();
  checked(path, [&] { src.model.validate(); });
  return src;
}

inline Axis parse_axis(Section& s, const std::string& key) {
  const auto v = s.string(key, "insertion");
  if (v == "insertion") return Axis::Insertion;
  if (v == "rotary") return Axis::Rotary;
  throw ConfigError(s.key_path(key), "expected \"insertion\" or \"rotary\"");
}

inline ExperimentDef parse_experiment(Section s) {
  const auto name = s.string("name", "");
  if (name.empty()) throw ConfigError(s.key_path("name"), "experiment needs a non-empty name");
  const auto kind = s.string("kind", "");
  if (kind == "accuracy") {
    AccuracyExperiment e;
    e.name = name;
    e.axis = parse_axis(s, "axis");
    e.repetitions = narrow_int(s, "repetitions", e.repetitions);
    if (e.repetitions < 1) throw ConfigError(s.key_path("repetitions"), "must be >= 1");
    const json* targets = s.child("targets");
    if (!targets || !targets->is_array() || targets->empty()) {
      throw ConfigError(s.key_path("targets"), "expected a non-empty array of numbers");
    }
    for (const auto& t : *targets) {
      if (!t.is_number()) throw ConfigError(s.key_path("targets"), "expected numbers");
      e.targets.push_back(t.get<double>());
    }
    s.finish();
    return e;
  }
  if (kind == "drift") {
    DriftExperiment e;
    e.name = name;
    e.revolutions = narrow_int(s, "revolutions", e.revolutions);
    e.epsilon = s.number("epsilon", e.epsilon);
    e.pid = s.boolean("pid", e.pid);
    e.settle_s = s.number("settle_s", e.settle_s);
    if (e.revolutions < 1) throw ConfigError(s.key_path("revolutions"), "must be >= 1");
    if (!(std::abs(e.epsilon) < kMaxMismatch)) throw ConfigError(s.key_path("epsilon"), "must satisfy |epsilon| < 0.1");
    if (!(e.settle_s >= 0.0)) throw ConfigError(s.key_path("settle_s"), "must be >= 0");
    s.finish();
    return e;
  }
  throw ConfigError(s.key_path("kind"), "expected \"accuracy\" or \"drift\"");
}

}  // namespace config_detail

inline ScenarioConfig parse_scenario(const nlohmann::json& doc) {
  using namespace config_detail;
  ScenarioConfig cfg;
  Section root(doc, "");

  if (root.integer("version", kConfigVersion) != kConfigVersion) {
    throw ConfigError("version", "unsupported config version");
  }
  const json* seed = root.child("seed");
  if (seed) {
    if (!seed->is_number_unsigned() && !(seed->is_number_integer() && seed->get<std::int64_t>() >= 0)) {
      throw ConfigError("seed", "expected a non-negative integer");
    }
    cfg.seed = seed->get<std::uint64_t>();
  }

  auto& plant = cfg.sim.plant;
  if (auto s = root.section("screw")) {
    plant.screw.lead_mm = s->number("lead_mm", plant.screw.lead_mm);
    plant.screw.starts = narrow_int(*s, "starts", plant.screw.starts);
    plant.screw.handedness = narrow_int(*s, "handedness", plant.screw.handedness);
    s->finish();
    checked("screw", [&] { plant.screw.validate(); });
  }
  if (auto s = root.section("transmission")) {
    if (auto t = s->section("screw")) plant.screw_transmission = parse_transmission(*t);
    if (auto t = s->section("spline")) plant.spline_transmission = parse_transmission(*t);
    s->finish();
  }
  if (auto s = root.section("motors")) {
    if (auto m = s->section("insertion")) plant.insertion_motor = parse_motor(*m, MotorRole::Insertion);
    if (auto m = s->section("rotary")) plant.rotary_motor = parse_motor(*m, MotorRole::Rotary);
    s->finish();
  }
  if (auto s = root.section("encoders")) {
    if (auto e = s->section("ie")) plant.ie = parse_encoder(*e, EncoderRole::IE);
    if (auto e = s->section("re")) plant.re = parse_encoder(*e, EncoderRole::RE);
    s->finish();
  }
  if (auto s = root.section("controller")) parse_controller(*s, cfg.sim);
  if (auto s = root.section("plant")) {
    cfg.sim.dt_s = s->number("dt_s", cfg.sim.dt_s);
    cfg.sim.insertion_mismatch = s->number("insertion_mismatch", cfg.sim.insertion_mismatch);
    if (const json* lim = s->child("stroke_limits_mm")) {
      if (!lim->is_array() || lim->size() != 2 || !(*lim)[0].is_number() || !(*lim)[1].is_number()) {
        throw ConfigError("plant.stroke_limits_mm", "expected [min, max]");
      }
      cfg.sim.stroke_limits = StrokeLimits{(*lim)[0].get<double>(), (*lim)[1].get<double>()};
    }
    s->finish();
  }
  if (auto s = root.section("noise")) {
    if (const json* n = s->child("insertion")) cfg.insertion_noise = parse_noise(*n, "noise.insertion");
    if (const json* n = s->child("rotary")) cfg.rotary_noise = parse_noise(*n, "noise.rotary");
    s->finish();
  }
  if (const json* ex = root.child("experiments")) {
    if (!ex->is_array()) throw ConfigError("experiments", "expected an array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < ex->size(); ++i) {
      auto def = parse_experiment(Section((*ex)[i], "experiments[" + std::to_string(i) + "]"));
      const auto& name = std::visit([](const auto& e) -> const std::string& { return e.name; }, def);
      if (!names.insert(name).second) {
        throw ConfigError("experiments[" + std::to_string(i) + "].name", "duplicate experiment name");
      }
      cfg.experiments.push_back(std::move(def));
    }
  }
  root.finish();

  // Checks spanning several sections, reported against the key a user
  // would most likely edit.
  const auto& sim = cfg.sim;
  if (!(sim.dt_s > 0.0) || sim.dt_s > kMaxPlantDt || sim.steps_per_tick() < 1 ||
      std::abs(static_cast<double>(sim.steps_per_tick()) * sim.dt_s - sim.controller.control_period_s) > 1e-9) {
    throw ConfigError("plant.dt_s", "must lie in (0, 0.1] s and divide controller.control_period_s");
  }
  if (!(std::abs(sim.insertion_mismatch) < kMaxMismatch)) {
    throw ConfigError("plant.insertion_mismatch", "must satisfy |epsilon| < 0.1");
  }
  if (sim.controller.speed_cap_rpm >
      std::min(plant.insertion_motor.real_speed_cap_rpm, plant.rotary_motor.real_speed_cap_rpm)) {
    throw ConfigError("controller.speed_cap_rpm", "exceeds a motor's real_speed_cap_rpm");
  }
  if (sim.stroke_limits && !(sim.stroke_limits->min_mm < sim.stroke_limits->max_mm)) {
    throw ConfigError("plant.stroke_limits_mm", "need min < max");
  }
  checked("encoders", [&] { cfg.sim.validate(); });
  return cfg;
}

inline ScenarioConfig parse_scenario_text(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("not valid JSON: ") + e.what());
  }
  return parse_scenario(doc);
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario_text(ss.str());
}

namespace config_detail {

inline ojson to_json(const TransmissionConfig& t) {
  return {{"master_teeth", t.master_teeth}, {"slave_teeth", t.slave_teeth}};
}

inline ojson to_json(const MotorSpec& m) {
  return {{"rated_speed_rpm", m.rated_speed_rpm},
          {"real_speed_cap_rpm", m.real_speed_cap_rpm},
          {"time_constant_s", m.time_constant_s}};
}

inline ojson to_json(const EncoderSpec& e) {
  return {{"lines_per_rev", e.lines_per_rev},
          {"quadrature", e.quadrature_multiplier},
          {"mount", e.mount == EncoderMount::Nut ? "nut" : "motor"}};
}

inline ojson to_json(const ApproachBand& b) { return {{"zone", b.zone}, {"creep_speed_rpm", b.creep_speed_rpm}}; }

inline ojson to_json(const NoiseSource& n) {
  switch (n.kind) {
    case NoiseSource::Kind::Table2: return "table2";
    case NoiseSource::Kind::Table3: return "table3";
    case NoiseSource::Kind::Explicit: break;
  }
  return {{"sigma_intercept", n.model.sigma_intercept},
          {"sigma_slope", n.model.sigma_slope},
          {"bias_slope", n.model.bias_slope}};
}

}  // namespace config_detail

/// Full document with every default spelled out; parses back to an equal
/// ScenarioConfig.
inline nlohmann::ordered_json serialize_scenario(const ScenarioConfig& cfg) {
  using namespace config_detail;
  const auto& p = cfg.sim.plant;
  const auto& c = cfg.sim.controller;
  ojson doc;
  doc["version"] = kConfigVersion;
  doc["seed"] = cfg.seed;
  doc["screw"] = {{"lead_mm", p.screw.lead_mm}, {"starts", p.screw.starts}, {"handedness", p.screw.handedness}};
  doc["transmission"] = {{"screw", to_json(p.screw_transmission)}, {"spline", to_json(p.spline_transmission)}};
  doc["motors"] = {{"insertion", to_json(p.insertion_motor)}, {"rotary", to_json(p.rotary_motor)}};
  doc["encoders"] = {{"ie", to_json(p.ie)}, {"re", to_json(p.re)}};

  ojson ctrl;
  ctrl["insertion_tol_mm"] = c.insertion_tol_mm;
  ctrl["rotary_tol_deg"] = c.rotary_tol_deg;
  ctrl["insertion_speed_rpm"] = c.insertion_speed_rpm;
  ctrl["rotary_speed_rpm"] = c.rotary_speed_rpm;
  ctrl["speed_cap_rpm"] = c.speed_cap_rpm;
  ctrl["control_period_s"] = c.control_period_s;
  ctrl["observer"] = std::string(to_string(c.observer));
  if (cfg.sim.auto_approach) {
    ctrl["approach"] = "auto";
  } else if (!c.insertion_approach && !c.rotary_approach) {
    ctrl["approach"] = "none";
  } else {
    ojson bands = ojson::object();
    if (c.insertion_approach) bands["insertion"] = to_json(*c.insertion_approach);
    if (c.rotary_approach) bands["rotary"] = to_json(*c.rotary_approach);
    ctrl["approach"] = bands;
  }
  ctrl["pid"] = {{"enabled", c.pid_enabled},
                 {"kp", c.pid.kp},
                 {"ki", c.pid.ki},
                 {"kd", c.pid.kd},
                 {"integral_limit_rpm", c.pid.integral_limit_rpm}};
  doc["controller"] = ctrl;

  ojson plant;
  plant["dt_s"] = cfg.sim.dt_s;
  plant["insertion_mismatch"] = cfg.sim.insertion_mismatch;
  if (cfg.sim.stroke_limits) plant["stroke_limits_mm"] = {cfg.sim.stroke_limits->min_mm, cfg.sim.stroke_limits->max_mm};
  doc["plant"] = plant;
  doc["noise"] = {{"insertion", to_json(cfg.insertion_noise)}, {"rotary", to_json(cfg.rotary_noise)}};

  ojson experiments = ojson::array();
  for (const auto& def : cfg.experiments) {
    if (const auto* a = std::get_if<AccuracyExperiment>(&def)) {
      experiments.push_back({{"name", a->name},
                             {"kind", "accuracy"},
                             {"axis", std::string(to_string(a->axis))},
                             {"targets", a->targets},
                             {"repetitions", a->repetitions}});
    } else {
      const auto& d = std::get<DriftExperiment>(def);
      experiments.push_back({{"name", d.name},
                             {"kind", "drift"},
                             {"revolutions", d.revolutions},
                             {"epsilon", d.epsilon},
                             {"pid", d.pid},
                             {"settle_s", d.settle_s}});
    }
  }
  doc["experiments"] = experiments;
  return doc;
}

}  // namespace needledrive
