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

// Differential screw/spline kinematics.
//
// Two nuts ride one shaft: the screw nut engages the thread, the spline nut
// engages the groove. The spline nut fixes the shaft's rotation, and the
// relative rotation of the screw nut against the shaft advances it along the
// lead. Angles are continuous accumulators in degrees and are never wrapped.

#include <cmath>
#include <stdexcept>
#include <string_view>

namespace needledrive {

/// Lead-screw geometry. Travel per relative revolution is `lead_mm`; the start
/// count only describes the thread and does not enter the kinematics.
struct ScrewSpec {
  double lead_mm = 20.0;
  int starts = 4;
  int handedness = +1;  // +1 right hand, -1 left hand

  void validate() const {
    if (!(lead_mm > 0.0) || !std::isfinite(lead_mm)) {
      throw std::invalid_argument("screw lead must be a positive finite length");
    }
    if (starts < 1) throw std::invalid_argument("screw starts must be >= 1");
    if (handedness != 1 && handedness != -1) {
      throw std::invalid_argument("screw handedness must be +1 or -1");
    }
  }

  friend bool operator==(const ScrewSpec&, const ScrewSpec&) = default;
};

struct NutAngles {
  double screw_deg = 0.0;
  double spline_deg = 0.0;
};

struct ShaftPose {
  double insertion_mm = 0.0;
  double rotation_deg = 0.0;
};

enum class MotionMode { Idle, Linear, Rotary, Spiral };

constexpr std::string_view to_string(MotionMode mode) {
  switch (mode) {
    case MotionMode::Idle: return "Idle";
    case MotionMode::Linear: return "Linear";
    case MotionMode::Rotary: return "Rotary";
    case MotionMode::Spiral: return "Spiral";
  }
  return "?";
}

/// Default rate tolerance for classify_motion, in rpm.
inline constexpr double kDefaultModeToleranceRpm = 0.5;

/// Positive relative rotation (screw nut ahead of spline nut) with a
/// right-hand thread advances the needle.
constexpr ShaftPose forward_kinematics(NutAngles nuts, const ScrewSpec& spec) {
  return {spec.handedness * spec.lead_mm * (nuts.screw_deg - nuts.spline_deg) / 360.0,
          nuts.spline_deg};
}

constexpr NutAngles inverse_kinematics(ShaftPose pose, const ScrewSpec& spec) {
  const double relative_deg = pose.insertion_mm * 360.0 / (spec.handedness * spec.lead_mm);
  return {pose.rotation_deg + relative_deg, pose.rotation_deg};
}

/// Classifies nut rates into the motion mode they produce on the shaft.
/// Screw stopped with the spline turning is a spiral, not a rotation.
inline MotionMode classify_motion(double screw_rpm, double spline_rpm,
                                  double tol_rpm = kDefaultModeToleranceRpm) {
  if (tol_rpm < 0.0) throw std::invalid_argument("mode tolerance must be >= 0");
  const bool screw_still = std::abs(screw_rpm) <= tol_rpm;
  const bool spline_still = std::abs(spline_rpm) <= tol_rpm;
  if (screw_still && spline_still) return MotionMode::Idle;
  if (spline_still) return MotionMode::Linear;
  if (std::abs(screw_rpm - spline_rpm) <= tol_rpm) return MotionMode::Rotary;
  return MotionMode::Spiral;
}

}  // namespace needledrive
