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

// Discrete-time plant of the side-pulley differential drive.
//
// Motors are rate sources. Each motor turns a slave pulley that drives the
// master pulley on its nut, so nut speed = motor speed * slave / master.
// The insertion motor (IM) drives the screw nut and the rotary motor (RM)
// drives the spline nut. Encoders IE and RE read the nut (default) or the
// motor back-shaft.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include "needledrive/constants.hpp"
#include "needledrive/kinematics.hpp"

namespace needledrive {

inline constexpr double kDegPerSecPerRpm = 6.0;

enum class MotorRole { Insertion, Rotary };
enum class Direction { CW, CCW };

constexpr double sign_of(Direction d) { return d == Direction::CW ? 1.0 : -1.0; }

constexpr std::string_view to_string(Direction d) { return d == Direction::CW ? "CW" : "CCW"; }

struct MotorSpec {
  MotorRole role = MotorRole::Insertion;
  double rated_speed_rpm = constants::kRatedMotorRpm;
  double real_speed_cap_rpm = constants::kRealMotorRpm;
  // First-order speed lag; 0 means the commanded speed is reached at once.
  double time_constant_s = 0.0;

  void validate() const {
    if (!(real_speed_cap_rpm > 0.0) || !(real_speed_cap_rpm <= rated_speed_rpm)) {
      throw std::invalid_argument("motor speeds must satisfy 0 < real_speed_cap <= rated_speed");
    }
    if (!(time_constant_s >= 0.0)) throw std::invalid_argument("motor time constant must be >= 0");
  }

  friend bool operator==(const MotorSpec&, const MotorSpec&) = default;
};

struct MotorState {
  bool enabled = false;
  Direction direction = Direction::CW;
  double commanded_speed_rpm = 0.0;  // magnitude
  double actual_speed_rpm = 0.0;     // signed
  double angle_deg = 0.0;
  double mismatch_factor = 1.0;

  double signed_command_rpm() const { return enabled ? sign_of(direction) * commanded_speed_rpm : 0.0; }
};

/// Integrates one motor over `dt`. A disabled motor holds (ultrasonic motors
/// brake on friction). The angle uses the speed reached at the end of the
/// step, which is exact for piecewise-constant commands without lag.
inline MotorState motor_step(MotorState m, double dt, double time_constant_s = 0.0) {
  if (!(dt > 0.0)) throw std::invalid_argument("motor_step: dt must be positive");
  if (!m.enabled) {
    m.actual_speed_rpm = 0.0;
    return m;
  }
  const double target = m.signed_command_rpm() * m.mismatch_factor;
  if (time_constant_s > 0.0) {
    m.actual_speed_rpm += (target - m.actual_speed_rpm) * (1.0 - std::exp(-dt / time_constant_s));
  } else {
    m.actual_speed_rpm = target;
  }
  m.angle_deg += m.actual_speed_rpm * kDegPerSecPerRpm * dt;
  return m;
}

struct TransmissionConfig {
  int master_teeth = constants::kMasterTeeth;
  int slave_teeth = constants::kSlaveTeeth[constants::kDefaultSlavePulley - 1];

  double ratio() const { return static_cast<double>(slave_teeth) / master_teeth; }

  void validate() const {
    if (master_teeth <= 0 || slave_teeth <= 0) {
      throw std::invalid_argument("pulley tooth counts must be positive");
    }
  }

  friend bool operator==(const TransmissionConfig&, const TransmissionConfig&) = default;
};

/// Slave pulley `index` (1..5) paired with the 24-tooth master.
inline TransmissionConfig slave_pulley(int index) {
  if (index < 1 || index > static_cast<int>(constants::kSlaveTeeth.size())) {
    throw std::out_of_range("slave pulley index must be 1..5, got " + std::to_string(index));
  }
  return {constants::kMasterTeeth, constants::kSlaveTeeth[index - 1]};
}

inline std::array<TransmissionConfig, 5> all_slave_pulleys() {
  return {slave_pulley(1), slave_pulley(2), slave_pulley(3), slave_pulley(4), slave_pulley(5)};
}

/// Nut speed for a motor speed. Sign-preserving; multiplies before dividing so
/// tooth-count ratios stay exact.
inline double transmission_output(double motor_rpm, const TransmissionConfig& cfg) {
  return motor_rpm * cfg.slave_teeth / cfg.master_teeth;
}

enum class EncoderRole { IE, RE };
enum class EncoderMount { Nut, Motor };

struct EncoderSpec {
  int lines_per_rev = constants::kEncoderLines;
  int quadrature_multiplier = constants::kQuadratureMultiplier;
  EncoderRole role = EncoderRole::IE;
  EncoderMount mount = EncoderMount::Nut;

  std::int64_t counts_per_rev() const {
    return static_cast<std::int64_t>(lines_per_rev) * quadrature_multiplier;
  }

  void validate() const {
    if (lines_per_rev <= 0) throw std::invalid_argument("encoder lines_per_rev must be positive");
    if (quadrature_multiplier != 1 && quadrature_multiplier != 2 && quadrature_multiplier != 4) {
      throw std::invalid_argument("encoder quadrature multiplier must be 1, 2 or 4");
    }
  }

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

/// Quadrature counter. `raw_counts` is the free-running edge count of the
/// disc; `counts` is the position register, which stops while counting is
/// disabled and resumes from its held value. `skipped_counts` is the number of
/// edges that went by while the register was held.
struct EncoderState {
  std::int64_t counts = 0;
  bool counting_enabled = true;
  double last_true_angle_deg = 0.0;
  std::int64_t raw_counts = 0;
  std::int64_t skipped_counts = 0;
};

/// Position in whole counts, rounded toward negative infinity so that IE and
/// RE quantize in the same direction and IE - RE stays within one count.
inline std::int64_t angle_to_counts(double angle_deg, const EncoderSpec& spec) {
  return static_cast<std::int64_t>(std::floor(angle_deg * static_cast<double>(spec.counts_per_rev()) / 360.0));
}

inline EncoderState encoder_sample(EncoderState e, const EncoderSpec& spec, double true_angle_deg) {
  e.raw_counts = angle_to_counts(true_angle_deg, spec);
  if (e.counting_enabled) {
    e.counts = e.raw_counts - e.skipped_counts;
  } else {
    e.skipped_counts = e.raw_counts - e.counts;
  }
  e.last_true_angle_deg = true_angle_deg;
  return e;
}

/// Full static description of the drive.
struct PlantConfig {
  ScrewSpec screw{};
  TransmissionConfig screw_transmission{};
  TransmissionConfig spline_transmission{};
  MotorSpec insertion_motor{MotorRole::Insertion};
  MotorSpec rotary_motor{MotorRole::Rotary};
  EncoderSpec ie{.role = EncoderRole::IE};
  EncoderSpec re{.role = EncoderRole::RE};

  void validate() const {
    screw.validate();
    screw_transmission.validate();
    spline_transmission.validate();
    insertion_motor.validate();
    rotary_motor.validate();
    ie.validate();
    re.validate();
  }

  friend bool operator==(const PlantConfig&, const PlantConfig&) = default;
};

struct DriveState {
  MotorState insertion_motor{};
  MotorState rotary_motor{};
  double screw_nut_angle_deg = 0.0;
  double spline_nut_angle_deg = 0.0;
  EncoderState ie{};
  EncoderState re{};
  ShaftPose pose{};
  double time_s = 0.0;

  NutAngles nuts() const { return {screw_nut_angle_deg, spline_nut_angle_deg}; }
};

inline constexpr double kMaxPlantDt = 0.1;
inline constexpr double kDefaultPlantDt = 0.001;

inline DriveState plant_step(DriveState s, double dt, const PlantConfig& cfg) {
  if (!(dt > 0.0) || dt > kMaxPlantDt) {
    throw std::invalid_argument("plant_step: dt must lie in (0, 0.1] s");
  }
  s.insertion_motor = motor_step(s.insertion_motor, dt, cfg.insertion_motor.time_constant_s);
  s.rotary_motor = motor_step(s.rotary_motor, dt, cfg.rotary_motor.time_constant_s);

  s.screw_nut_angle_deg +=
      transmission_output(s.insertion_motor.actual_speed_rpm, cfg.screw_transmission) * kDegPerSecPerRpm * dt;
  s.spline_nut_angle_deg +=
      transmission_output(s.rotary_motor.actual_speed_rpm, cfg.spline_transmission) * kDegPerSecPerRpm * dt;
  s.pose = forward_kinematics(s.nuts(), cfg.screw);

  const double ie_angle =
      cfg.ie.mount == EncoderMount::Nut ? s.screw_nut_angle_deg : s.insertion_motor.angle_deg;
  const double re_angle =
      cfg.re.mount == EncoderMount::Nut ? s.spline_nut_angle_deg : s.rotary_motor.angle_deg;
  s.ie = encoder_sample(s.ie, cfg.ie, ie_angle);
  s.re = encoder_sample(s.re, cfg.re, re_angle);
  s.time_s += dt;
  return s;
}

/// Convenience form with default nut-mounted 1250-line x4 encoders and
/// nominal motors.
inline DriveState plant_step(const DriveState& s, double dt, const TransmissionConfig& screw_cfg,
                             const TransmissionConfig& spline_cfg, const ScrewSpec& spec) {
  PlantConfig cfg;
  cfg.screw = spec;
  cfg.screw_transmission = screw_cfg;
  cfg.spline_transmission = spline_cfg;
  return plant_step(s, dt, cfg);
}

inline constexpr double kMaxMismatch = 0.1;

/// Puts a relative speed error on the insertion motor.
inline DriveState apply_speed_mismatch(DriveState s, double epsilon) {
  if (!(std::abs(epsilon) < kMaxMismatch)) {
    throw std::invalid_argument("speed mismatch must satisfy |epsilon| < 0.1");
  }
  s.insertion_motor.mismatch_factor = 1.0 + epsilon;
  return s;
}

}  // namespace needledrive
