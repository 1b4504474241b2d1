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
#include <set>
#include <thread>

#include "needledrive/telemetry.hpp"

using namespace needledrive;
using nlohmann::json;

namespace {

std::vector<TelemetryFrame> drain_frames(Subscription& sub) {
  std::vector<TelemetryFrame> out;
  while (auto msg = sub.try_pop()) {
    const auto j = json::parse(*msg);
    if (j["type"] == "telemetry") out.push_back(frame_from_json(j));
  }
  return out;
}

std::vector<Ack> drain_acks(Subscription& sub) {
  std::vector<Ack> out;
  while (auto msg = sub.try_pop()) {
    const auto j = json::parse(*msg);
    if (j["type"] == "ack") out.push_back(ack_from_json(j));
  }
  return out;
}

CommandMessage cmd(CommandKind kind, std::string id, double value = 0.0, bool flag = false, Axis axis = Axis::Insertion) {
  return {kind, std::move(id), value, flag, axis};
}

SimConfig fast_motor_config() {
  SimConfig cfg;
  cfg.plant.insertion_motor.real_speed_cap_rpm = 150.0;
  cfg.plant.rotary_motor.real_speed_cap_rpm = 150.0;
  cfg.controller.speed_cap_rpm = 150.0;
  return cfg;
}

}  // namespace

TEST_CASE("telemetry frame JSON round trip", "[telemetry][protocol]") {
  TelemetryFrame f;
  f.sequence = 42;
  f.time_s = 2.15;
  f.insertion_display_mm = 12.004;
  f.rotary_display_deg = -33.5;
  f.mode = ControllerMode::RotationEnabled;
  f.estop = true;
  f.insertion_motor = {true, Direction::CCW, 24.0, -24.0};
  f.rotary_motor = {false, Direction::CW, 0.0, 0.0};
  f.ie_counts = -1234;
  f.re_counts = 98765;
  const auto j = to_json(f);
  CHECK(j["version"] == kProtocolVersion);
  CHECK(j["type"] == "telemetry");
  CHECK(j["mode"] == "RotationEnabled");
  CHECK(j["motors"]["insertion"]["direction"] == "CCW");
  CHECK(frame_from_json(json::parse(j.dump())) == f);

  auto bad = json::parse(j.dump());
  bad["version"] = 2;
  CHECK_THROWS_AS(frame_from_json(bad), ProtocolError);
}

TEST_CASE("every command kind round trips", "[telemetry][protocol]") {
  const std::vector<CommandMessage> all{
      cmd(CommandKind::SetInsertionTarget, "a", 12.5),
      cmd(CommandKind::SetRotaryTarget, "b", -90.0),
      cmd(CommandKind::SetRotationEnable, "c", 0.0, true),
      cmd(CommandKind::SetSpeed, "d", 40.0, false, Axis::Rotary),
      cmd(CommandKind::EStop, "e", 0.0, true),
  };
  for (const auto& c : all) {
    const auto decoded = decode_command(to_json(c).dump());
    INFO(to_json(c).dump());
    REQUIRE(decoded.command);
    CHECK(*decoded.command == c);
    CHECK(decoded.error.empty());
  }
  const auto j = to_json(all[3]);
  CHECK(j.dump() ==
        R"({"version":1,"type":"command","request_id":"d","kind":"SetSpeed","value":{"axis":"rotary","rpm":40.0}})");
}

TEST_CASE("malformed commands are rejected with a reason", "[telemetry][protocol]") {
  struct Case {
    std::string text;
    std::string id;
    std::string reason_part;
  };
  const std::vector<Case> cases{
      {"not json", "", "JSON"},
      {"[1]", "", "object"},
      {R"({"type":"command","request_id":"r1","kind":"EStop","value":{"engaged":true}})", "r1", "version"},
      {R"({"version":1,"type":"command","kind":"EStop","value":{"engaged":true}})", "", "request_id"},
      {R"({"version":1,"type":"command","request_id":"r2","kind":"Launch","value":{}})", "r2", "unknown command kind"},
      {R"({"version":1,"type":"command","request_id":"r3","kind":"SetSpeed","value":{"axis":"rotary","rpm":"fast"}})",
       "r3", "rpm"},
      {R"({"version":1,"type":"command","request_id":"r4","kind":"SetSpeed","value":{"axis":"yaw","rpm":4}})", "r4",
       "axis"},
      {R"({"version":1,"type":"command","request_id":"r5","kind":"SetInsertionTarget","value":{"mm":1,"deg":2}})",
       "r5", "unknown field"},
      {R"({"version":1,"type":"command","request_id":"r6","kind":"SetRotationEnable","value":{"enabled":1}})", "r6",
       "enabled"},
      {R"({"version":1,"type":"command","request_id":"r7","kind":"EStop","value":{"engaged":true},"x":0})", "r7",
       "unknown field"},
      {R"({"version":1,"type":"frame","request_id":"r8","kind":"EStop","value":{"engaged":true}})", "r8", "type"},
      {R"({"version":1,"type":"command","request_id":"r9","kind":"SetRotaryTarget","value":{"mm":3}})", "r9",
       "unknown field"},
  };
  for (const auto& c : cases) {
    INFO(c.text);
    const auto d = decode_command(c.text);
    CHECK_FALSE(d.command);
    CHECK(d.request_id == c.id);
    CHECK(d.error.find(c.reason_part) != std::string::npos);
  }
}

TEST_CASE("frames arrive every fifth tick at the default rate", "[telemetry]") {
  for (double dt : {0.001, 0.0005, 0.002}) {
    SimConfig cfg;
    cfg.dt_s = dt;
    TelemetryService svc(cfg);
    auto sub = svc.subscribe();
    for (int i = 0; i < 100; ++i) svc.step();
    const auto frames = drain_frames(*sub);
    REQUIRE(frames.size() == 21);  // the initial snapshot plus 20 ticks' worth
    for (std::size_t i = 1; i < frames.size(); ++i) {
      CHECK(frames[i].sequence == frames[i - 1].sequence + 1);
      CHECK(frames[i].time_s - frames[i - 1].time_s == Catch::Approx(0.05).margin(1e-9));
    }
  }
}

TEST_CASE("rotation enable shows in the next frame", "[telemetry]") {
  ServiceCore core(SimConfig{});
  auto ack = core.apply(cmd(CommandKind::SetRotationEnable, "on", 0.0, true));
  CHECK(ack == Ack{"on", true, ""});
  std::optional<TelemetryFrame> frame;
  int ticks = 0;
  while (!frame) {
    frame = core.tick();
    ++ticks;
  }
  CHECK(ticks <= core.ticks_per_frame());
  CHECK(frame->mode == ControllerMode::RotationEnabled);
}

TEST_CASE("pure rotation: rotary display advances, insertion frozen", "[telemetry]") {
  SimConfig cfg;
  TelemetryService svc(cfg);
  svc.submit(cmd(CommandKind::SetInsertionTarget, "i", 10.0), nullptr);
  for (int i = 0; i < 200; ++i) svc.step();
  svc.submit(cmd(CommandKind::SetRotationEnable, "on", 0.0, true), nullptr);
  svc.submit(cmd(CommandKind::SetRotaryTarget, "r", 1000.0), nullptr);
  for (int i = 0; i < 10; ++i) svc.step();

  auto sub = svc.subscribe();  // late subscriber
  for (int i = 0; i < 100; ++i) svc.step();
  const auto frames = drain_frames(*sub);
  REQUIRE(frames.size() > 10);
  for (std::size_t i = 1; i < frames.size(); ++i) {
    CHECK(frames[i].mode == ControllerMode::RotationEnabled);
    CHECK(frames[i].insertion_display_mm == frames[0].insertion_display_mm);
    CHECK(frames[i].rotary_display_deg > frames[i - 1].rotary_display_deg);
    CHECK(frames[i].rotary_motor.enabled);
    CHECK(frames[i].insertion_motor.enabled);  // IM follows RM
  }
}

TEST_CASE("late subscriber starts from the current frame", "[telemetry]") {
  TelemetryService svc(SimConfig{});
  svc.submit(cmd(CommandKind::SetInsertionTarget, "i", 5.0), nullptr);
  for (int i = 0; i < 37; ++i) svc.step();
  auto sub = svc.subscribe();
  auto first = sub->try_pop();
  REQUIRE(first);
  const auto f = frame_from_json(json::parse(*first));
  CHECK(f == svc.latest());
  CHECK(f.sequence == 7);
  CHECK(f.insertion_display_mm > 0.0);
}

TEST_CASE("two subscribers see identical frames", "[telemetry]") {
  TelemetryService svc(SimConfig{});
  auto a = svc.subscribe();
  auto b = svc.subscribe();
  svc.submit(cmd(CommandKind::SetRotaryTarget, "r", 90.0), nullptr);
  for (int i = 0; i < 150; ++i) svc.step();
  const auto fa = drain_frames(*a);
  const auto fb = drain_frames(*b);
  CHECK(fa.size() == 31);
  CHECK(fa == fb);
}

TEST_CASE("slow consumer is dropped without stalling the simulation", "[telemetry]") {
  ServiceOptions opts;
  opts.queue_capacity = 4;
  TelemetryService svc(SimConfig{}, opts);
  auto slow = svc.subscribe();
  auto fast = svc.subscribe();
  std::vector<TelemetryFrame> seen;
  for (int i = 0; i < 100; ++i) {
    svc.step();
    auto got = drain_frames(*fast);
    seen.insert(seen.end(), got.begin(), got.end());
  }
  CHECK(slow->closed());
  CHECK(slow->close_reason() == "slow consumer");
  CHECK(slow->size() == 4);
  CHECK_FALSE(fast->closed());
  CHECK(seen.size() == 21);
  CHECK(svc.latest().sequence == 20);
}

TEST_CASE("estop disables both motors in the next frame and latches", "[telemetry]") {
  ServiceCore core(SimConfig{});
  core.apply(cmd(CommandKind::SetInsertionTarget, "i", 50.0));
  core.apply(cmd(CommandKind::SetRotaryTarget, "r", 300.0));
  for (int i = 0; i < 20; ++i) core.tick();
  REQUIRE(core.snapshot().insertion_motor.enabled);
  REQUIRE(core.snapshot().rotary_motor.enabled);

  CHECK(core.apply(cmd(CommandKind::EStop, "stop", 0.0, true)).accepted);
  std::optional<TelemetryFrame> frame;
  while (!frame) frame = core.tick();
  CHECK(frame->estop);
  CHECK_FALSE(frame->insertion_motor.enabled);
  CHECK_FALSE(frame->rotary_motor.enabled);
  CHECK(frame->insertion_motor.actual_rpm == 0.0);
  CHECK(frame->rotary_motor.actual_rpm == 0.0);

  // New targets do not clear the latch.
  core.apply(cmd(CommandKind::SetInsertionTarget, "i2", 80.0));
  for (int i = 0; i < 50; ++i) core.tick();
  CHECK_FALSE(core.snapshot().insertion_motor.enabled);
  const auto held = core.snapshot().insertion_display_mm;

  core.apply(cmd(CommandKind::EStop, "reset", 0.0, false));
  for (int i = 0; i < 10; ++i) core.tick();
  CHECK(core.snapshot().insertion_motor.enabled);
  CHECK(core.snapshot().insertion_display_mm != held);
}

TEST_CASE("out-of-range speed is rejected and leaves the simulation alone", "[telemetry]") {
  ServiceCore core(fast_motor_config());
  ServiceCore reference(fast_motor_config());
  for (auto* c : {&core, &reference}) c->apply(cmd(CommandKind::SetInsertionTarget, "i", 30.0));

  const auto ack = core.apply(cmd(CommandKind::SetSpeed, "s", 200.0, false, Axis::Insertion));
  CHECK_FALSE(ack.accepted);
  CHECK(ack.request_id == "s");
  CHECK(ack.reason.find("exceeds real_speed_cap") != std::string::npos);
  CHECK(core.apply(cmd(CommandKind::SetSpeed, "z", 0.0, false, Axis::Rotary)).accepted == false);
  CHECK(core.apply(cmd(CommandKind::SetRotaryTarget, "nan", std::nan(""))).accepted == false);

  for (int i = 0; i < 100; ++i) {
    core.tick();
    reference.tick();
  }
  CHECK(core.snapshot() == reference.snapshot());

  CHECK(core.apply(cmd(CommandKind::SetSpeed, "ok", 120.0, false, Axis::Insertion)).accepted);
  CHECK(core.sim().controller().config.insertion_speed_rpm == 120.0);
}

TEST_CASE("each submitted message gets exactly one ack", "[telemetry][property]") {
  TelemetryService svc(SimConfig{});
  auto sub = svc.subscribe();
  std::mt19937_64 rng(99);
  std::set<std::string> expected;
  const std::vector<std::string> bodies{
      R"("kind":"SetInsertionTarget","value":{"mm":12})",
      R"("kind":"SetRotaryTarget","value":{"deg":45})",
      R"("kind":"SetRotationEnable","value":{"enabled":true})",
      R"("kind":"SetRotationEnable","value":{"enabled":false})",
      R"("kind":"SetSpeed","value":{"axis":"insertion","rpm":30})",
      R"("kind":"SetSpeed","value":{"axis":"rotary","rpm":500})",
      R"("kind":"EStop","value":{"engaged":false})",
      R"("kind":"Nope","value":{})",
      R"("kind":"SetSpeed","value":{"rpm":3})",
  };
  for (int i = 0; i < 400; ++i) {
    const auto id = "req-" + std::to_string(i);
    expected.insert(id);
    const auto text = R"({"version":1,"type":"command","request_id":")" + id + R"(",)" + bodies[rng() % bodies.size()] + "}";
    svc.submit_text(text, sub);
    if (rng() % 4 == 0) svc.step();
  }
  svc.step();
  const auto acks = drain_acks(*sub);
  std::multiset<std::string> ids;
  for (const auto& a : acks) ids.insert(a.request_id);
  CHECK(acks.size() == expected.size());
  CHECK(std::set<std::string>(ids.begin(), ids.end()) == expected);
  for (const auto& a : acks) CHECK(a.accepted == a.reason.empty());
}

TEST_CASE("threaded service handles concurrent producers", "[telemetry][thread]") {
  TelemetryService svc(SimConfig{});
  auto sub = svc.subscribe();
  svc.start();
  std::atomic<int> acked{0};
  std::vector<std::thread> producers;
  for (int t = 0; t < 4; ++t) {
    producers.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) {
        svc.submit(cmd(CommandKind::SetRotaryTarget, std::to_string(t) + ":" + std::to_string(i), 10.0 * i),
                   [&](const Ack& a) {
                     if (a.accepted) ++acked;
                   });
      }
    });
  }
  for (auto& p : producers) p.join();
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
  while (acked < 100 && std::chrono::steady_clock::now() < deadline) {
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  std::this_thread::sleep_for(std::chrono::milliseconds(120));
  svc.stop();
  CHECK(acked == 100);

  const auto frames = drain_frames(*sub);
  REQUIRE(frames.size() >= 2);
  for (std::size_t i = 1; i < frames.size(); ++i) CHECK(frames[i].sequence > frames[i - 1].sequence);
}

TEST_CASE("state document carries the configured lead", "[telemetry]") {
  SimConfig cfg;
  cfg.plant.screw.lead_mm = 12.0;
  TelemetryService svc(cfg);
  const auto doc = svc.state_document();
  CHECK(doc["version"] == kProtocolVersion);
  CHECK(doc["config"]["lead_mm"] == 12.0);
  CHECK(doc["config"]["frame_rate_hz"] == Catch::Approx(20.0));
  CHECK(doc["frame"]["type"] == "telemetry");
}
