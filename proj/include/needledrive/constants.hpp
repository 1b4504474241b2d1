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

// Hardware constants of the side-pulley prototype and its validation data.

#include <array>

namespace needledrive::constants {

// Lead screw nut: 4-start, 20 mm diameter, 20 mm lead.
inline constexpr double kLeadMm = 20.0;
inline constexpr int kThreadStarts = 4;

// Ultrasonic motor speeds at the master pulley: nameplate and measured.
inline constexpr double kRatedMotorRpm = 150.0;
inline constexpr double kRealMotorRpm = 75.0;

inline constexpr int kMasterTeeth = 24;
// Slave pulleys 1..5 in table order.
inline constexpr std::array<int, 5> kSlaveTeeth{60, 48, 36, 24, 72};
// The validated build runs slave pulley 1 (1:2.5).
inline constexpr int kDefaultSlavePulley = 1;

// Nut speed measured with the shaft installed.
inline constexpr double kMeasuredNutRpm = 168.0;

// US Digital EM1-0-1250-N read in x4 quadrature.
inline constexpr int kEncoderLines = 1250;
inline constexpr int kQuadratureMultiplier = 4;

// Spiral drift observed during pure rotation: 2.1 mm per 7 shaft turns.
inline constexpr double kObservedDriftMm = 2.1;
inline constexpr int kObservedDriftRevolutions = 7;

// Insertion-motor speed mismatch that reproduces the observed drift:
// drift = eps * lead * revs  =>  eps = 2.1 / (7 * 20) = 0.015.
inline constexpr double kCanonicalMismatch =
    kObservedDriftMm / (kObservedDriftRevolutions * kLeadMm);

struct AccuracyRecord {
  double target;
  double mean_error;
  double std_dev;
};

// Insertion accuracy, n = 5, mm.
inline constexpr std::array<AccuracyRecord, 5> kInsertionAccuracy{{
    {122.0, 0.1, 2.83},
    {164.3, -1.9, 3.43},
    {45.3, -0.94, 1.16},
    {162.5, 1.08, 3.37},
    {8.3, 1.1, 0.74},
}};

// Rotary accuracy, n = 5, degrees.
inline constexpr std::array<AccuracyRecord, 5> kRotaryAccuracy{{
    {182.525, -1.325, 1.304},
    {95.4, -1.06, 1.549},
    {356.75, 1.45, 1.789},
    {142.51, -0.79, 1.221},
    {8.825, 0.835, 0.422},
}};

inline constexpr int kAccuracyRepetitions = 5;

}  // namespace needledrive::constants
