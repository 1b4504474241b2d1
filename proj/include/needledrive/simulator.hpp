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

// Closed-loop simulation: the controller runs every control period and the
// plant integrates at a fixed step underneath it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "needledrive/control.hpp"
#include "needledrive/drivetrain.hpp"

namespace needledrive {

enum class Axis { Insertion, Rotary };

constexpr std::string_view to_string(Axis a) { return a == Axis::Insertion ? "insertion" : "rotary"; }

struct StrokeLimits {
  double min_mm = 0.0;
  double max_mm = 360.0;

  friend bool operator==(const StrokeLimits&, const StrokeLimits&) = default;
};

struct SimConfig {
  PlantConfig plant{};
  ControllerConfig controller{};
  double dt_s = kDefaultPlantDt;
  double insertion_mismatch = 0.0;
  // Derive approach bands from tolerances, speeds and gearing.
  bool auto_approach = true;
  std::optional<StrokeLimits> stroke_limits;

  std::int64_t steps_per_tick() const {
    return static_cast<std::int64_t>(std::llround(controller.control_period_s / dt_s));
  }

  void validate() const {
    plant.validate();
    controller.validate();
    if (!(dt_s > 0.0) || dt_s > kMaxPlantDt) throw std::invalid_argument("plant dt must lie in (0, 0.1] s");
    const auto n = steps_per_tick();
    if (n < 1 || std::abs(static_cast<double>(n) * dt_s - controller.control_period_s) > 1e-9) {
      throw std::invalid_argument("control period must be a whole multiple of the plant dt");
    }
    if (!(std::abs(insertion_mismatch) < kMaxMismatch)) {
      throw std::invalid_argument("speed mismatch must satisfy |epsilon| < 0.1");
    }
    if (controller.speed_cap_rpm > std::min(plant.insertion_motor.real_speed_cap_rpm,
                                            plant.rotary_motor.real_speed_cap_rpm)) {
      throw std::invalid_argument("controller speed cap exceeds a motor's real_speed_cap");
    }
    const bool motor_mounted = plant.ie.mount == EncoderMount::Motor || plant.re.mount == EncoderMount::Motor;
    if (motor_mounted && (plant.ie.mount != plant.re.mount || plant.screw_transmission != plant.spline_transmission ||
                          plant.ie.counts_per_rev() != plant.re.counts_per_rev())) {
      throw std::invalid_argument("motor-mounted encoders need matching mounts, transmissions and resolutions");
    }
    if (!motor_mounted && plant.ie.counts_per_rev() != plant.re.counts_per_rev()) {
      throw std::invalid_argument("IE and RE must have the same resolution");
    }
    if (stroke_limits && !(stroke_limits->min_mm < stroke_limits->max_mm)) {
      throw std::invalid_argument("stroke limits need min < max");
    }
  }

  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

/// Approach band for a relay axis: creep so one control period covers at most
/// 80% of the deadband, and enter creep two fast periods before the deadband.
inline ApproachBand derive_approach_band(double tol, double fast_rpm, double units_per_motor_rev, double period_s) {
  const double units_per_rpm_period = units_per_motor_rev * period_s / 60.0;
  const double creep = std::min(fast_rpm, 0.8 * tol / units_per_rpm_period);
  return {2.0 * fast_rpm * units_per_rpm_period + tol, creep};
}

/// Insertion rate in mm/s at a given IM speed with the spline nut held.
inline double insertion_rate_mm_s(double motor_rpm, const PlantConfig& plant) {
  return transmission_output(motor_rpm, plant.screw_transmission) / 60.0 * plant.screw.lead_mm;
}

class Simulator {
 public:
  explicit Simulator(SimConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    ctrl_.config = cfg_.controller;
    state_ = apply_speed_mismatch(state_, cfg_.insertion_mismatch);
    refresh_approach();
    display_ = peek_display();
  }

  const SimConfig& config() const { return cfg_; }
  const DriveState& state() const { return state_; }
  const ControllerState& controller() const { return ctrl_; }
  const MotorCommand& insertion_command() const { return im_cmd_; }
  const MotorCommand& rotary_command() const { return rm_cmd_; }
  bool estopped() const { return estop_; }
  double time() const { return state_.time_s; }
  std::int64_t ticks() const { return ticks_; }

  /// Reading produced at the start of the last tick.
  const DisplayedPosition& display() const { return display_; }

  /// Reading the observer would produce now, without committing hold or
  /// re-base bookkeeping.
  DisplayedPosition peek_display() const {
    return observe(ctrl_, state_.ie.counts, state_.re.counts, cfg_.plant).first;
  }

  void set_insertion_target(double mm) {
    if (!std::isfinite(mm)) throw std::invalid_argument("insertion target must be finite");
    if (cfg_.stroke_limits && (mm < cfg_.stroke_limits->min_mm || mm > cfg_.stroke_limits->max_mm)) {
      throw std::out_of_range("insertion target outside stroke limits");
    }
    ctrl_.insertion_target_mm = mm;
  }

  void set_rotary_target(double deg) {
    if (!std::isfinite(deg)) throw std::invalid_argument("rotary target must be finite");
    ctrl_.rotary_target_deg = deg;
  }

  void set_rotation_enable(bool on) { ctrl_ = toggle_rotation_enable(ctrl_, on); }

  void set_axis_speed(Axis axis, double rpm) {
    if (!std::isfinite(rpm) || !(rpm > 0.0)) throw std::invalid_argument("speed must be positive");
    if (rpm > ctrl_.config.speed_cap_rpm) throw std::out_of_range("speed exceeds real_speed_cap");
    (axis == Axis::Insertion ? ctrl_.config.insertion_speed_rpm : ctrl_.config.rotary_speed_rpm) = rpm;
    refresh_approach();
  }

  void set_estop(bool engaged) { estop_ = engaged; }

  /// One control period. `on_step` sees the state after every plant step.
  template <typename OnStep>
  void tick(OnStep&& on_step) {
    auto [disp, observed] = observe(ctrl_, state_.ie.counts, state_.re.counts, cfg_.plant);
    display_ = disp;
    ctrl_ = observed;

    const double speed_error = estimate_speed_error();
    auto out = bang_bang_update(ctrl_, display_, cfg_.plant.screw.handedness);
    ctrl_ = out.state;
    MotorCommand im = out.insertion;
    MotorCommand rm = out.rotary;

    if (!estop_ && ctrl_.mode == ControllerMode::RotationEnabled && ctrl_.config.pid_enabled) {
      auto [correction, next] = pid_compensation_update(ctrl_, speed_error, ctrl_.config.control_period_s);
      ctrl_ = next;
      const double cap = ctrl_.config.speed_cap_rpm;
      im = MotorCommand::from_signed(MotorRole::Insertion, std::clamp(im.signed_rpm() + correction, -cap, cap));
    }
    if (estop_) {
      im = MotorCommand{MotorRole::Insertion};
      rm = MotorCommand{MotorRole::Rotary};
    }
    im_cmd_ = im;
    rm_cmd_ = rm;
    apply(state_.insertion_motor, im);
    apply(state_.rotary_motor, rm);
    state_.ie.counting_enabled = !ctrl_.ie_freeze;

    prev_ie_raw_ = state_.ie.raw_counts;
    prev_re_raw_ = state_.re.raw_counts;
    const auto n = cfg_.steps_per_tick();
    for (std::int64_t i = 0; i < n; ++i) {
      state_ = plant_step(state_, cfg_.dt_s, cfg_.plant);
      on_step(static_cast<const DriveState&>(state_));
    }
    ++ticks_;
  }

  void tick() {
    tick([](const DriveState&) {});
  }

  /// True when the last tick found the commanded axes inside their deadbands
  /// with the relay motors off.
  bool settled() const {
    const auto& c = ctrl_.config;
    const bool rotary_ok = !rm_cmd_.enabled && std::abs(ctrl_.rotary_target_deg - display_.rotary_deg) <= c.rotary_tol_deg;
    if (ctrl_.mode == ControllerMode::RotationEnabled) return rotary_ok && ticks_ > 0;
    const bool insertion_ok =
        !im_cmd_.enabled && std::abs(ctrl_.insertion_target_mm - display_.insertion_mm) <= c.insertion_tol_mm;
    return insertion_ok && rotary_ok && ticks_ > 0;
  }

  template <typename OnStep>
  bool run_until_settled(double max_time_s, OnStep&& on_step) {
    const double deadline = state_.time_s + max_time_s;
    while (state_.time_s < deadline) {
      tick(on_step);
      if (settled()) return true;
    }
    return false;
  }

  bool run_until_settled(double max_time_s) {
    return run_until_settled(max_time_s, [](const DriveState&) {});
  }

  template <typename OnStep>
  void run_for(double seconds, OnStep&& on_step) {
    const auto n = static_cast<std::int64_t>(std::llround(seconds / ctrl_.config.control_period_s));
    for (std::int64_t i = 0; i < n; ++i) tick(on_step);
  }

  void run_for(double seconds) {
    run_for(seconds, [](const DriveState&) {});
  }

 private:
  static void apply(MotorState& m, const MotorCommand& c) {
    m.enabled = c.enabled;
    m.direction = c.direction;
    m.commanded_speed_rpm = c.enabled ? c.speed_rpm : 0.0;
  }

  void refresh_approach() {
    if (!cfg_.auto_approach) return;
    auto& c = ctrl_.config;
    const auto& p = cfg_.plant;
    c.insertion_approach = derive_approach_band(c.insertion_tol_mm, c.insertion_speed_rpm,
                                                p.screw.lead_mm * p.screw_transmission.ratio(), c.control_period_s);
    c.rotary_approach = derive_approach_band(c.rotary_tol_deg, c.rotary_speed_rpm,
                                             360.0 * p.spline_transmission.ratio(), c.control_period_s);
  }

  // RE nut speed minus IE nut speed over the last period, expressed at the
  // insertion motor. Uses the free-running edge counts so it works while the
  // IE register is held.
  double estimate_speed_error() const {
    const auto& p = cfg_.plant;
    const double ie_revs =
        static_cast<double>(state_.ie.raw_counts - prev_ie_raw_) * nut_revs_per_count(p.ie, p.screw_transmission);
    const double re_revs =
        static_cast<double>(state_.re.raw_counts - prev_re_raw_) * nut_revs_per_count(p.re, p.spline_transmission);
    const double nut_rpm = (re_revs - ie_revs) * 60.0 / ctrl_.config.control_period_s;
    return nut_rpm / p.screw_transmission.ratio();
  }

  SimConfig cfg_;
  DriveState state_{};
  ControllerState ctrl_{};
  DisplayedPosition display_{};
  MotorCommand im_cmd_{MotorRole::Insertion};
  MotorCommand rm_cmd_{MotorRole::Rotary};
  std::int64_t prev_ie_raw_ = 0;
  std::int64_t prev_re_raw_ = 0;
  std::int64_t ticks_ = 0;
  bool estop_ = false;
};

}  // namespace needledrive
