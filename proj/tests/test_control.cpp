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

#include "needledrive/control.hpp"
#include "oracles.hpp"

using namespace needledrive;
using Catch::Approx;

TEST_CASE("displayed position from encoder counts", "[control][observer]") {
  const EncoderSpec enc{};
  const TransmissionConfig tr{};
  const ScrewSpec spec{};

  auto d = displayed_position(5000, 5000, enc, tr, spec);
  CHECK(d.insertion_mm == 0.0);
  CHECK(d.rotary_deg == 360.0);

  d = displayed_position(5000, 0, enc, tr, spec);
  CHECK(d.insertion_mm == Approx(oracle::integrated_travel_mm(360.0, 20.0, 1)).margin(1e-9));
  CHECK(d.rotary_deg == 0.0);

  d = displayed_position(0, 0, enc, tr, spec);
  CHECK(d.insertion_mm == 0.0);
  CHECK(d.rotary_deg == 0.0);

  SECTION("motor-mounted counts scale by the pulley ratio") {
    EncoderSpec motor = enc;
    motor.mount = EncoderMount::Motor;
    d = displayed_position(2000, 0, motor, tr, spec);  // 0.4 motor turns = 1 nut turn
    CHECK(d.insertion_mm == Approx(20.0).margin(1e-12));
  }
}

TEST_CASE("bang-bang relay", "[control]") {
  ControllerState ctrl;
  ctrl.insertion_target_mm = 10.0;

  SECTION("positive insertion error drives IM forward") {
    const auto out = bang_bang_update(ctrl, {0.0, 0.0});
    CHECK(out.insertion.enabled);
    CHECK(out.insertion.direction == Direction::CW);
    CHECK(out.insertion.speed_rpm == ctrl.config.insertion_speed_rpm);
    CHECK_FALSE(out.rotary.enabled);
  }
  SECTION("left-hand thread reverses IM") {
    CHECK(bang_bang_update(ctrl, {0.0, 0.0}, -1).insertion.direction == Direction::CCW);
  }
  SECTION("negative error drives back") {
    const auto out = bang_bang_update(ctrl, {12.0, 0.0});
    CHECK(out.insertion.direction == Direction::CCW);
  }
  SECTION("inside both deadbands nothing runs") {
    ctrl.rotary_target_deg = 90.0;
    const auto out = bang_bang_update(ctrl, {10.0 - 0.04, 90.3});
    CHECK_FALSE(out.insertion.enabled);
    CHECK_FALSE(out.rotary.enabled);
  }
  SECTION("rotation enable mirrors RM onto IM and holds IE") {
    ctrl = toggle_rotation_enable(ctrl, true);
    ctrl.rotary_target_deg = 360.0;
    const auto out = bang_bang_update(ctrl, {0.0, 0.0});
    CHECK(out.rotary.enabled);
    CHECK(out.insertion.enabled);
    CHECK(out.insertion.direction == out.rotary.direction);
    CHECK(out.insertion.speed_rpm == out.rotary.speed_rpm);
    CHECK(out.state.ie_freeze);
  }
  SECTION("approach band drops to creep speed") {
    ctrl.config.insertion_approach = ApproachBand{1.0, 3.0};
    CHECK(bang_bang_update(ctrl, {9.5, 0.0}).insertion.speed_rpm == 3.0);
    CHECK(bang_bang_update(ctrl, {5.0, 0.0}).insertion.speed_rpm == ctrl.config.insertion_speed_rpm);
  }
}

TEST_CASE("commands never exceed the speed cap", "[control][property]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> pos(-500.0, 500.0);
  std::uniform_real_distribution<double> speed(0.1, 75.0);
  for (int i = 0; i < 5000; ++i) {
    ControllerState ctrl;
    ctrl.config.insertion_speed_rpm = speed(rng);
    ctrl.config.rotary_speed_rpm = speed(rng);
    ctrl.insertion_target_mm = pos(rng);
    ctrl.rotary_target_deg = pos(rng);
    ctrl = toggle_rotation_enable(ctrl, i % 3 == 0);
    const auto out = bang_bang_update(ctrl, {pos(rng), pos(rng)});
    REQUIRE(out.insertion.speed_rpm <= ctrl.config.speed_cap_rpm);
    REQUIRE(out.rotary.speed_rpm <= ctrl.config.speed_cap_rpm);
  }
}

TEST_CASE("rotation enable toggling", "[control][observer]") {
  const PlantConfig plant;
  ControllerState ctrl;

  auto on = toggle_rotation_enable(ctrl, true);
  CHECK(on.mode == ControllerMode::RotationEnabled);
  CHECK(on.ie_freeze);

  SECTION("toggling on twice is a no-op") {
    auto [d, observed] = observe(on, 100, 0, plant);
    const auto again = toggle_rotation_enable(observed, true);
    CHECK(again.mode == observed.mode);
    CHECK(again.held_insertion_counts == observed.held_insertion_counts);
    CHECK(again.hold_pending == observed.hold_pending);
    CHECK(again.pid.integral == observed.pid.integral);
  }

  SECTION("held reading survives the exit re-base") {
    // 12500 counts of IE ahead of RE is 50 mm.
    auto [entry, held] = observe(on, 12500, 0, plant);
    CHECK(entry.insertion_mm == Approx(50.0).margin(1e-12));
    // RE advances 3 turns while IE is held.
    auto [during, still] = observe(held, 12500, 15000, plant);
    CHECK(during.insertion_mm == entry.insertion_mm);
    CHECK(during.rotary_deg == Approx(1080.0));
    auto off = toggle_rotation_enable(still, false);
    CHECK(off.mode == ControllerMode::Normal);
    CHECK_FALSE(off.ie_freeze);
    auto [exit, rebased] = observe(off, 12500, 15000, plant);
    CHECK(exit.insertion_mm == entry.insertion_mm);
    // Afterwards the reading tracks IE - RE from the new base.
    auto [later, _] = observe(rebased, 12500 + 250, 15000, plant);
    CHECK(later.insertion_mm == Approx(51.0).margin(1e-12));
  }

  SECTION("freeze-hold observer reads IE alone") {
    ControllerState fh;
    fh.config.observer = ObserverKind::FreezeHold;
    auto [d, _] = observe(fh, 2500, 999, plant);
    CHECK(d.insertion_mm == Approx(10.0).margin(1e-12));
  }
}

TEST_CASE("PID compensation", "[control][pid]") {
  ControllerState ctrl;
  ctrl.config.pid_enabled = true;

  SECTION("zero error history gives zero correction") {
    for (int i = 0; i < 10; ++i) {
      auto [c, next] = pid_compensation_update(ctrl, 0.0, 0.01);
      CHECK(c == 0.0);
      ctrl = next;
    }
  }
  SECTION("proportional only") {
    ctrl.config.pid = {1.0, 0.0, 0.0, 10.0};
    CHECK(pid_compensation_update(ctrl, 2.0, 0.01).first == 2.0);
  }
  SECTION("constant error integrates up to the clamp") {
    ctrl.config.pid = {0.5, 2.0, 0.0, 10.0};
    const auto expected = oracle::pi_outputs(0.5, 2.0, 3.0, 0.01, 300, 10.0);
    double prev = -1e9;
    bool clamped = false;
    for (double want : expected) {
      auto [c, next] = pid_compensation_update(ctrl, 3.0, 0.01);
      ctrl = next;
      REQUIRE(c == Approx(want).margin(1e-9));
      if (c < 0.5 * 3.0 + 10.0 - 1e-9) {
        REQUIRE(c > prev);
      } else {
        clamped = true;
      }
      prev = c;
    }
    CHECK(clamped);
    CHECK(prev == Approx(11.5));
  }
  SECTION("derivative acts on the error change") {
    ctrl.config.pid = {0.0, 0.0, 0.1, 10.0};
    ctrl = pid_compensation_update(ctrl, 1.0, 0.01).second;
    CHECK(pid_compensation_update(ctrl, 2.0, 0.01).first == Approx(10.0));
  }
  SECTION("disabled compensation is inert") {
    ctrl.config.pid_enabled = false;
    auto [c, next] = pid_compensation_update(ctrl, 5.0, 0.01);
    CHECK(c == 0.0);
    CHECK(next.pid.integral == 0.0);
  }
  CHECK_THROWS_AS(pid_compensation_update(ctrl, 1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(pid_compensation_update(ctrl, 1.0, -0.01), std::invalid_argument);
}

TEST_CASE("controller config validation", "[control]") {
  ControllerConfig c;
  CHECK_NOTHROW(c.validate());
  c.insertion_speed_rpm = 80.0;
  CHECK_THROWS(c.validate());
  c = {};
  c.rotary_tol_deg = 0.0;
  CHECK_THROWS(c.validate());
}
