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

// Position observer and motor-level controllers.
//
// The observer reads IE and RE. In the differential form the insertion
// reading is (IE - RE) scaled by lead / counts-per-rev, and the rotary reading
// is RE. The freeze-hold form reads insertion from IE alone and relies on IE
// being held whenever both motors turn together.
//
// Rotation Enable makes IM mirror RM so the shaft turns without feeding,
// holds IE, and freezes the insertion reading. Leaving it re-bases the
// insertion reading in whole counts so the displayed value does not jump.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string_view>
#include <utility>

#include "needledrive/drivetrain.hpp"
#include "needledrive/kinematics.hpp"

namespace needledrive {

enum class ControllerMode { Normal, RotationEnabled };
enum class ObserverKind { Differential, FreezeHold };

constexpr std::string_view to_string(ControllerMode m) {
  return m == ControllerMode::Normal ? "Normal" : "RotationEnabled";
}

constexpr std::string_view to_string(ObserverKind k) {
  return k == ObserverKind::Differential ? "differential" : "freeze_hold";
}

struct DisplayedPosition {
  double insertion_mm = 0.0;
  double rotary_deg = 0.0;
};

/// Shaft revolutions per encoder count on the given axis.
inline double nut_revs_per_count(const EncoderSpec& enc, const TransmissionConfig& cfg) {
  const double per_count = 1.0 / static_cast<double>(enc.counts_per_rev());
  return enc.mount == EncoderMount::Nut ? per_count : transmission_output(per_count, cfg);
}

/// Insertion in mm for a relative count (IE - RE, or IE alone).
inline double insertion_from_counts(std::int64_t relative_counts, const EncoderSpec& enc,
                                    const TransmissionConfig& cfg, const ScrewSpec& spec) {
  const double scaled = spec.handedness * spec.lead_mm * static_cast<double>(relative_counts);
  if (enc.mount == EncoderMount::Nut) return scaled / static_cast<double>(enc.counts_per_rev());
  return transmission_output(scaled, cfg) / static_cast<double>(enc.counts_per_rev());
}

inline double rotary_from_counts(std::int64_t counts, const EncoderSpec& enc, const TransmissionConfig& cfg) {
  const double scaled = 360.0 * static_cast<double>(counts);
  if (enc.mount == EncoderMount::Nut) return scaled / static_cast<double>(enc.counts_per_rev());
  return transmission_output(scaled, cfg) / static_cast<double>(enc.counts_per_rev());
}

/// Insertion = IE - RE, Rotary = RE, in physical units.
inline DisplayedPosition displayed_position(std::int64_t ie_counts, std::int64_t re_counts, const EncoderSpec& enc,
                                            const TransmissionConfig& cfg, const ScrewSpec& spec) {
  return {insertion_from_counts(ie_counts - re_counts, enc, cfg, spec), rotary_from_counts(re_counts, enc, cfg)};
}

struct MotorCommand {
  MotorRole target = MotorRole::Insertion;
  bool enabled = false;
  Direction direction = Direction::CW;
  double speed_rpm = 0.0;

  double signed_rpm() const { return enabled ? sign_of(direction) * speed_rpm : 0.0; }

  static MotorCommand from_signed(MotorRole role, double rpm) {
    MotorCommand c{role};
    c.enabled = rpm != 0.0;
    c.direction = rpm < 0.0 ? Direction::CCW : Direction::CW;
    c.speed_rpm = std::abs(rpm);
    return c;
  }
};

/// Below `zone` from the target an axis drops to `creep_speed_rpm`. Keeps the
/// per-period travel inside the deadband so the relay does not chatter.
struct ApproachBand {
  double zone = 0.0;
  double creep_speed_rpm = 0.0;

  friend bool operator==(const ApproachBand&, const ApproachBand&) = default;
};

struct PidGains {
  double kp = 0.8;
  double ki = 2.0;  // 1/s
  double kd = 0.0;  // s
  double integral_limit_rpm = 10.0;

  friend bool operator==(const PidGains&, const PidGains&) = default;
};

struct ControllerConfig {
  double insertion_tol_mm = 0.05;
  double rotary_tol_deg = 0.5;
  // Motor-side speeds. 24 rpm through 1:2.5 at 20 mm lead feeds 20 mm/s;
  // 67.2 rpm turns the nuts at the measured 168 rpm.
  double insertion_speed_rpm = 24.0;
  double rotary_speed_rpm = 67.2;
  double speed_cap_rpm = constants::kRealMotorRpm;
  std::optional<ApproachBand> insertion_approach;
  std::optional<ApproachBand> rotary_approach;
  double control_period_s = 0.01;
  PidGains pid{};
  bool pid_enabled = false;
  ObserverKind observer = ObserverKind::Differential;

  void validate() const {
    if (!(insertion_tol_mm > 0.0) || !(rotary_tol_deg > 0.0)) {
      throw std::invalid_argument("controller tolerances must be positive");
    }
    if (!(speed_cap_rpm > 0.0)) throw std::invalid_argument("controller speed cap must be positive");
    for (double v : {insertion_speed_rpm, rotary_speed_rpm}) {
      if (!(v > 0.0) || v > speed_cap_rpm) {
        throw std::invalid_argument("axis speeds must lie in (0, real_speed_cap]");
      }
    }
    for (const auto& band : {insertion_approach, rotary_approach}) {
      if (band && (!(band->zone >= 0.0) || !(band->creep_speed_rpm > 0.0) || band->creep_speed_rpm > speed_cap_rpm)) {
        throw std::invalid_argument("approach band needs zone >= 0 and creep speed in (0, cap]");
      }
    }
    if (!(control_period_s > 0.0)) throw std::invalid_argument("control period must be positive");
    if (!std::isfinite(pid.kp) || !std::isfinite(pid.ki) || !std::isfinite(pid.kd) ||
        !(pid.integral_limit_rpm >= 0.0)) {
      throw std::invalid_argument("PID gains must be finite and the integral limit >= 0");
    }
  }

  friend bool operator==(const ControllerConfig&, const ControllerConfig&) = default;
};

struct PidState {
  double integral = 0.0;  // rpm * s
  double prev_error = 0.0;
  bool has_prev = false;
};

struct ControllerState {
  ControllerMode mode = ControllerMode::Normal;
  double insertion_target_mm = 0.0;
  double rotary_target_deg = 0.0;
  ControllerConfig config{};
  PidState pid{};

  // Asserted in RotationEnabled: the plant must hold the IE register.
  bool ie_freeze = false;

  // Observer bookkeeping, in counts of the insertion reading.
  std::int64_t insertion_offset_counts = 0;
  std::int64_t held_insertion_counts = 0;
  bool hold_pending = false;
  bool rebase_pending = false;
};

inline ControllerState toggle_rotation_enable(ControllerState ctrl, bool on) {
  if (on && ctrl.mode == ControllerMode::Normal) {
    ctrl.mode = ControllerMode::RotationEnabled;
    ctrl.ie_freeze = true;
    ctrl.hold_pending = true;
    ctrl.rebase_pending = false;
    ctrl.pid = {};
  } else if (!on && ctrl.mode == ControllerMode::RotationEnabled) {
    ctrl.mode = ControllerMode::Normal;
    ctrl.ie_freeze = false;
    // Never observed while enabled: nothing was held, nothing to re-base.
    ctrl.rebase_pending = !ctrl.hold_pending;
    ctrl.hold_pending = false;
    ctrl.pid = {};
  }
  return ctrl;
}

/// Produces the displayed position from encoder registers, applying the
/// hold and re-base rules of the current mode.
inline std::pair<DisplayedPosition, ControllerState> observe(ControllerState ctrl, std::int64_t ie_counts,
                                                             std::int64_t re_counts, const PlantConfig& plant) {
  const std::int64_t raw =
      ctrl.config.observer == ObserverKind::Differential ? ie_counts - re_counts : ie_counts;

  std::int64_t shown = raw + ctrl.insertion_offset_counts;
  if (ctrl.mode == ControllerMode::RotationEnabled) {
    if (ctrl.hold_pending) {
      ctrl.held_insertion_counts = shown;
      ctrl.hold_pending = false;
    }
    shown = ctrl.held_insertion_counts;
  } else if (ctrl.rebase_pending) {
    ctrl.insertion_offset_counts = ctrl.held_insertion_counts - raw;
    ctrl.rebase_pending = false;
    shown = ctrl.held_insertion_counts;
  }

  DisplayedPosition d{insertion_from_counts(shown, plant.ie, plant.screw_transmission, plant.screw),
                      rotary_from_counts(re_counts, plant.re, plant.spline_transmission)};
  return {d, ctrl};
}

namespace detail {

inline double relay(double error, double tol, double speed, const std::optional<ApproachBand>& band,
                    double cap) {
  if (!(std::abs(error) > tol)) return 0.0;
  double magnitude = speed;
  if (band && std::abs(error) <= band->zone) magnitude = std::min(magnitude, band->creep_speed_rpm);
  return std::copysign(std::min(magnitude, cap), error);
}

}  // namespace detail

struct BangBangOutput {
  MotorCommand insertion;
  MotorCommand rotary;
  ControllerState state;
};

/// Relay control of both motors. `handedness` maps insertion error onto IM
/// direction.
inline BangBangOutput bang_bang_update(ControllerState ctrl, const DisplayedPosition& disp, int handedness = +1) {
  const auto& c = ctrl.config;
  const double rotary_rpm = detail::relay(ctrl.rotary_target_deg - disp.rotary_deg, c.rotary_tol_deg,
                                          c.rotary_speed_rpm, c.rotary_approach, c.speed_cap_rpm);
  double insertion_rpm = 0.0;
  if (ctrl.mode == ControllerMode::Normal) {
    insertion_rpm = handedness * detail::relay(ctrl.insertion_target_mm - disp.insertion_mm, c.insertion_tol_mm,
                                               c.insertion_speed_rpm, c.insertion_approach, c.speed_cap_rpm);
  } else {
    insertion_rpm = rotary_rpm;
    ctrl.ie_freeze = true;
  }
  return {MotorCommand::from_signed(MotorRole::Insertion, insertion_rpm),
          MotorCommand::from_signed(MotorRole::Rotary, rotary_rpm), ctrl};
}

/// Discrete PID on an rpm error. The integral term is clamped to
/// +/- integral_limit_rpm. Returns zero and leaves the state alone when
/// compensation is disabled.
inline std::pair<double, ControllerState> pid_compensation_update(ControllerState ctrl, double speed_error_rpm,
                                                                  double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("pid_compensation_update: dt must be positive");
  if (!ctrl.config.pid_enabled) return {0.0, ctrl};
  const auto& g = ctrl.config.pid;
  auto& s = ctrl.pid;

  s.integral += speed_error_rpm * dt;
  if (g.ki != 0.0) {
    const double bound = g.integral_limit_rpm / std::abs(g.ki);
    s.integral = std::clamp(s.integral, -bound, bound);
  }
  const double derivative = s.has_prev ? (speed_error_rpm - s.prev_error) / dt : 0.0;
  s.prev_error = speed_error_rpm;
  s.has_prev = true;

  return {g.kp * speed_error_rpm + g.ki * s.integral + g.kd * derivative, ctrl};
}

}  // namespace needledrive
