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

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "needledrive/constants.hpp"
#include "needledrive/kinematics.hpp"
#include "oracles.hpp"

using namespace needledrive;
using Catch::Approx;

namespace {

const ScrewSpec kSpec{constants::kLeadMm, constants::kThreadStarts, +1};

}  // namespace

TEST_CASE("forward kinematics matches the integrated screw oracle", "[kinematics]") {
  SECTION("equal nut angles turn the shaft without feeding") {
    const auto pose = forward_kinematics({360.0, 360.0}, kSpec);
    CHECK(pose.insertion_mm == 0.0);
    CHECK(pose.rotation_deg == 360.0);
  }
  SECTION("screw nut alone advances one lead per turn") {
    const double expected = oracle::integrated_travel_mm(360.0, 20.0, +1);
    const auto pose = forward_kinematics({360.0, 0.0}, kSpec);
    CHECK(pose.insertion_mm == Approx(expected).margin(1e-9));
    CHECK(pose.insertion_mm == Approx(20.0).margin(1e-12));
    CHECK(pose.rotation_deg == 0.0);
  }
  SECTION("spline nut alone spirals the shaft back") {
    const double expected = oracle::integrated_travel_mm(-360.0, 20.0, +1);
    const auto pose = forward_kinematics({0.0, 360.0}, kSpec);
    CHECK(pose.insertion_mm == Approx(expected).margin(1e-9));
    CHECK(pose.insertion_mm == Approx(-20.0).margin(1e-12));
    CHECK(pose.rotation_deg == 360.0);
  }
  SECTION("left-hand thread flips insertion") {
    ScrewSpec left = kSpec;
    left.handedness = -1;
    CHECK(forward_kinematics({360.0, 0.0}, left).insertion_mm ==
          Approx(oracle::integrated_travel_mm(360.0, 20.0, -1)).margin(1e-9));
  }
}

TEST_CASE("inverse kinematics examples", "[kinematics]") {
  auto n = inverse_kinematics({0.0, 0.0}, kSpec);
  CHECK(n.screw_deg == 0.0);
  CHECK(n.spline_deg == 0.0);

  n = inverse_kinematics({20.0, 0.0}, kSpec);
  CHECK(n.screw_deg == Approx(360.0).margin(1e-9));
  CHECK(n.spline_deg == 0.0);

  n = inverse_kinematics({10.0, 720.0}, kSpec);
  CHECK(n.screw_deg == Approx(900.0).margin(1e-9));
  CHECK(n.spline_deg == Approx(720.0).margin(1e-9));
}

TEST_CASE("kinematics properties over random poses", "[kinematics][property]") {
  std::mt19937_64 rng(20260101);
  std::uniform_real_distribution<double> ins(-400.0, 400.0);
  std::uniform_real_distribution<double> rot(-7200.0, 7200.0);
  std::uniform_real_distribution<double> lead(0.5, 50.0);

  for (int i = 0; i < 2000; ++i) {
    const ScrewSpec spec{lead(rng), 4, (i % 2) ? 1 : -1};
    const ShaftPose p{ins(rng), rot(rng)};
    const auto back = forward_kinematics(inverse_kinematics(p, spec), spec);
    REQUIRE(back.insertion_mm == Approx(p.insertion_mm).margin(1e-9));
    REQUIRE(back.rotation_deg == Approx(p.rotation_deg).margin(1e-9));

    // Equal increments on both nuts leave insertion unchanged.
    const NutAngles a{rot(rng), rot(rng)};
    const double delta = rot(rng);
    const double before = forward_kinematics(a, spec).insertion_mm;
    const NutAngles shifted{a.screw_deg + delta, a.spline_deg + delta};
    REQUIRE(forward_kinematics(shifted, spec).insertion_mm == Approx(before).margin(1e-9));

    // Linearity in the nut angles.
    const NutAngles b{rot(rng), rot(rng)};
    const auto fa = forward_kinematics(a, spec);
    const auto fb = forward_kinematics(b, spec);
    const auto fab = forward_kinematics({a.screw_deg + b.screw_deg, a.spline_deg + b.spline_deg}, spec);
    REQUIRE(fab.insertion_mm == Approx(fa.insertion_mm + fb.insertion_mm).margin(1e-9));
    REQUIRE(fab.rotation_deg == Approx(fa.rotation_deg + fb.rotation_deg).margin(1e-9));

    // Doubling the lead doubles insertion and leaves rotation alone.
    ScrewSpec doubled = spec;
    doubled.lead_mm *= 2.0;
    const auto fd = forward_kinematics(a, doubled);
    REQUIRE(fd.insertion_mm == Approx(2.0 * fa.insertion_mm).margin(1e-9));
    REQUIRE(fd.rotation_deg == fa.rotation_deg);
  }
}

TEST_CASE("motion mode classification", "[kinematics]") {
  CHECK(classify_motion(150, 150, 0.1) == MotionMode::Rotary);
  CHECK(classify_motion(150, 0, 0.1) == MotionMode::Linear);
  CHECK(classify_motion(0, 0, 0.1) == MotionMode::Idle);
  CHECK(classify_motion(0, 150, 0.1) == MotionMode::Spiral);
  CHECK(classify_motion(150, 120, 0.1) == MotionMode::Spiral);
  CHECK(classify_motion(-150, -150) == MotionMode::Rotary);
  CHECK(classify_motion(0.3, -0.2) == MotionMode::Idle);
  CHECK_THROWS_AS(classify_motion(1, 1, -0.1), std::invalid_argument);
}

TEST_CASE("screw spec validation", "[kinematics]") {
  CHECK_NOTHROW(kSpec.validate());
  CHECK_THROWS(ScrewSpec{0.0, 4, 1}.validate());
  CHECK_THROWS(ScrewSpec{20.0, 0, 1}.validate());
  CHECK_THROWS(ScrewSpec{20.0, 4, 0}.validate());
}
