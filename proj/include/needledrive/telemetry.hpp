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

// Telemetry service: wire messages, per-subscriber outbound queues and the
// simulation owner that drains commands, ticks the simulator and broadcasts
// frames. Transport lives in telemetry_server.hpp; message schemas are in
// docs/protocol.md.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "needledrive/simulator.hpp"

namespace needledrive {

inline constexpr int kProtocolVersion = 1;
inline constexpr double kDefaultFrameRateHz = 20.0;
inline constexpr unsigned short kDefaultPort = 8080;

struct MotorTelemetry {
  bool enabled = false;
  Direction direction = Direction::CW;
  double commanded_rpm = 0.0;
  double actual_rpm = 0.0;

  friend bool operator==(const MotorTelemetry&, const MotorTelemetry&) = default;
};

struct TelemetryFrame {
  std::uint64_t sequence = 0;
  double time_s = 0.0;
  double insertion_display_mm = 0.0;
  double rotary_display_deg = 0.0;
  ControllerMode mode = ControllerMode::Normal;
  bool estop = false;
  MotorTelemetry insertion_motor{};
  MotorTelemetry rotary_motor{};
  std::int64_t ie_counts = 0;
  std::int64_t re_counts = 0;

  friend bool operator==(const TelemetryFrame&, const TelemetryFrame&) = default;
};

enum class CommandKind { SetInsertionTarget, SetRotaryTarget, SetRotationEnable, SetSpeed, EStop };

constexpr std::string_view to_string(CommandKind k) {
  switch (k) {
    case CommandKind::SetInsertionTarget: return "SetInsertionTarget";
    case CommandKind::SetRotaryTarget: return "SetRotaryTarget";
    case CommandKind::SetRotationEnable: return "SetRotationEnable";
    case CommandKind::SetSpeed: return "SetSpeed";
    case CommandKind::EStop: return "EStop";
  }
  return "?";
}

/// `value` carries mm, deg or rpm depending on kind; `flag` carries the
/// boolean of SetRotationEnable and EStop.
struct CommandMessage {
  CommandKind kind = CommandKind::EStop;
  std::string request_id;
  double value = 0.0;
  bool flag = false;
  Axis axis = Axis::Insertion;

  friend bool operator==(const CommandMessage&, const CommandMessage&) = default;
};

struct Ack {
  std::string request_id;
  bool accepted = false;
  std::string reason;

  friend bool operator==(const Ack&, const Ack&) = default;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace telemetry_detail {

using ojson = nlohmann::ordered_json;

inline ojson motor_json(const MotorTelemetry& m) {
  return {{"enabled", m.enabled},
          {"direction", std::string(to_string(m.direction))},
          {"commanded_rpm", m.commanded_rpm},
          {"actual_rpm", m.actual_rpm}};
}

inline MotorTelemetry motor_from(const nlohmann::json& j) {
  MotorTelemetry m;
  m.enabled = j.at("enabled").get<bool>();
  m.direction = j.at("direction").get<std::string>() == "CW" ? Direction::CW : Direction::CCW;
  m.commanded_rpm = j.at("commanded_rpm").get<double>();
  m.actual_rpm = j.at("actual_rpm").get<double>();
  return m;
}

inline void check_version(const nlohmann::json& j) {
  if (!j.contains("version") || !j["version"].is_number_integer() || j["version"].get<int>() != kProtocolVersion) {
    throw ProtocolError("unsupported or missing protocol version");
  }
}

inline void only_keys(const nlohmann::json& j, std::initializer_list<std::string_view> keys, const char* where) {
  for (const auto& item : j.items()) {
    bool known = false;
    for (auto k : keys) known = known || item.key() == k;
    if (!known) throw ProtocolError(std::string("unknown field '") + item.key() + "' in " + where);
  }
}

inline double finite_number(const nlohmann::json& v, const char* name) {
  if (!v.contains(name) || !v[name].is_number()) throw ProtocolError(std::string("value.") + name + " must be a number");
  const double x = v[name].get<double>();
  if (!std::isfinite(x)) throw ProtocolError(std::string("value.") + name + " must be finite");
  return x;
}

inline bool flag_field(const nlohmann::json& v, const char* name) {
  if (!v.contains(name) || !v[name].is_boolean()) throw ProtocolError(std::string("value.") + name + " must be a boolean");
  return v[name].get<bool>();
}

}  // namespace telemetry_detail

inline nlohmann::ordered_json to_json(const TelemetryFrame& f) {
  using telemetry_detail::motor_json;
  return {{"version", kProtocolVersion},
          {"type", "telemetry"},
          {"sequence", f.sequence},
          {"time_s", f.time_s},
          {"insertion_display_mm", f.insertion_display_mm},
          {"rotary_display_deg", f.rotary_display_deg},
          {"mode", std::string(to_string(f.mode))},
          {"estop", f.estop},
          {"motors", {{"insertion", motor_json(f.insertion_motor)}, {"rotary", motor_json(f.rotary_motor)}}},
          {"encoders", {{"ie", f.ie_counts}, {"re", f.re_counts}}}};
}

inline TelemetryFrame frame_from_json(const nlohmann::json& j) {
  telemetry_detail::check_version(j);
  if (j.value("type", "") != "telemetry") throw ProtocolError("not a telemetry frame");
  TelemetryFrame f;
  try {
    f.sequence = j.at("sequence").get<std::uint64_t>();
    f.time_s = j.at("time_s").get<double>();
    f.insertion_display_mm = j.at("insertion_display_mm").get<double>();
    f.rotary_display_deg = j.at("rotary_display_deg").get<double>();
    f.mode = j.at("mode").get<std::string>() == "Normal" ? ControllerMode::Normal : ControllerMode::RotationEnabled;
    f.estop = j.at("estop").get<bool>();
    f.insertion_motor = telemetry_detail::motor_from(j.at("motors").at("insertion"));
    f.rotary_motor = telemetry_detail::motor_from(j.at("motors").at("rotary"));
    f.ie_counts = j.at("encoders").at("ie").get<std::int64_t>();
    f.re_counts = j.at("encoders").at("re").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed telemetry frame: ") + e.what());
  }
  return f;
}

inline nlohmann::ordered_json to_json(const CommandMessage& c) {
  nlohmann::ordered_json value;
  switch (c.kind) {
    case CommandKind::SetInsertionTarget: value = {{"mm", c.value}}; break;
    case CommandKind::SetRotaryTarget: value = {{"deg", c.value}}; break;
    case CommandKind::SetRotationEnable: value = {{"enabled", c.flag}}; break;
    case CommandKind::SetSpeed: value = {{"axis", std::string(to_string(c.axis))}, {"rpm", c.value}}; break;
    case CommandKind::EStop: value = {{"engaged", c.flag}}; break;
  }
  return {{"version", kProtocolVersion},
          {"type", "command"},
          {"request_id", c.request_id},
          {"kind", std::string(to_string(c.kind))},
          {"value", value}};
}

/// Outcome of decoding a client message. On failure `error` is set and
/// `request_id` holds whatever id could be recovered, so the rejection can
/// still be addressed.
struct DecodedCommand {
  std::optional<CommandMessage> command;
  std::string request_id;
  std::string error;
};

inline DecodedCommand decode_command(std::string_view text) {
  using namespace telemetry_detail;
  DecodedCommand out;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    out.error = "message is not valid JSON";
    return out;
  }
  if (!j.is_object()) {
    out.error = "message must be a JSON object";
    return out;
  }
  if (j.contains("request_id") && j["request_id"].is_string()) out.request_id = j["request_id"].get<std::string>();
  try {
    check_version(j);
    only_keys(j, {"version", "type", "request_id", "kind", "value"}, "command");
    if (j.value("type", "") != "command") throw ProtocolError("type must be \"command\"");
    if (!j.contains("request_id") || !j["request_id"].is_string() || out.request_id.empty()) {
      throw ProtocolError("request_id must be a non-empty string");
    }
    if (!j.contains("kind") || !j["kind"].is_string()) throw ProtocolError("kind must be a string");
    if (!j.contains("value") || !j["value"].is_object()) throw ProtocolError("value must be an object");
    const auto& v = j["value"];
    const auto kind = j["kind"].get<std::string>();

    CommandMessage c;
    c.request_id = out.request_id;
    if (kind == "SetInsertionTarget") {
      only_keys(v, {"mm"}, "value");
      c.kind = CommandKind::SetInsertionTarget;
      c.value = finite_number(v, "mm");
    } else if (kind == "SetRotaryTarget") {
      only_keys(v, {"deg"}, "value");
      c.kind = CommandKind::SetRotaryTarget;
      c.value = finite_number(v, "deg");
    } else if (kind == "SetRotationEnable") {
      only_keys(v, {"enabled"}, "value");
      c.kind = CommandKind::SetRotationEnable;
      c.flag = flag_field(v, "enabled");
    } else if (kind == "SetSpeed") {
      only_keys(v, {"axis", "rpm"}, "value");
      c.kind = CommandKind::SetSpeed;
      const auto axis = v.contains("axis") && v["axis"].is_string() ? v["axis"].get<std::string>() : "";
      if (axis == "insertion") {
        c.axis = Axis::Insertion;
      } else if (axis == "rotary") {
        c.axis = Axis::Rotary;
      } else {
        throw ProtocolError("value.axis must be \"insertion\" or \"rotary\"");
      }
      c.value = finite_number(v, "rpm");
    } else if (kind == "EStop") {
      only_keys(v, {"engaged"}, "value");
      c.kind = CommandKind::EStop;
      c.flag = flag_field(v, "engaged");
    } else {
      throw ProtocolError("unknown command kind '" + kind + "'");
    }
    out.command = c;
  } catch (const ProtocolError& e) {
    out.error = e.what();
  }
  return out;
}

inline nlohmann::ordered_json to_json(const Ack& a) {
  nlohmann::ordered_json j{{"version", kProtocolVersion},
                           {"type", "ack"},
                           {"request_id", a.request_id},
                           {"status", a.accepted ? "accepted" : "rejected"}};
  if (!a.accepted) j["reason"] = a.reason;
  return j;
}

inline Ack ack_from_json(const nlohmann::json& j) {
  telemetry_detail::check_version(j);
  if (j.value("type", "") != "ack") throw ProtocolError("not an ack");
  Ack a;
  a.request_id = j.at("request_id").get<std::string>();
  a.accepted = j.at("status").get<std::string>() == "accepted";
  if (!a.accepted) a.reason = j.value("reason", "");
  return a;
}

/// Single-threaded core: the simulator plus frame bookkeeping. Everything
/// here runs on the simulation owner.
class ServiceCore {
 public:
  explicit ServiceCore(SimConfig cfg, int ticks_per_frame = 5) : sim_(std::move(cfg)), ticks_per_frame_(ticks_per_frame) {
    if (ticks_per_frame_ < 1) throw std::invalid_argument("ticks_per_frame must be >= 1");
  }

  const Simulator& sim() const { return sim_; }
  int ticks_per_frame() const { return ticks_per_frame_; }

  Ack apply(const CommandMessage& c) {
    Ack ack{c.request_id, true, {}};
    const auto& cfg = sim_.config();
    try {
      switch (c.kind) {
        case CommandKind::SetInsertionTarget: sim_.set_insertion_target(c.value); break;
        case CommandKind::SetRotaryTarget: sim_.set_rotary_target(c.value); break;
        case CommandKind::SetRotationEnable: sim_.set_rotation_enable(c.flag); break;
        case CommandKind::SetSpeed:
          if (c.value > cfg.controller.speed_cap_rpm) {
            throw std::out_of_range(fmt::format("exceeds real_speed_cap ({} rpm)", cfg.controller.speed_cap_rpm));
          }
          sim_.set_axis_speed(c.axis, c.value);
          break;
        case CommandKind::EStop: sim_.set_estop(c.flag); break;
      }
    } catch (const std::exception& e) {
      ack.accepted = false;
      ack.reason = e.what();
    }
    return ack;
  }

  /// One control period; returns a frame when one is due.
  std::optional<TelemetryFrame> tick() {
    sim_.tick();
    if (sim_.ticks() % ticks_per_frame_ != 0) return std::nullopt;
    ++sequence_;
    return snapshot();
  }

  TelemetryFrame snapshot() const {
    const auto& s = sim_.state();
    const auto disp = sim_.peek_display();
    const auto motor = [](const MotorState& m) {
      return MotorTelemetry{m.enabled, m.direction, m.commanded_speed_rpm, m.actual_speed_rpm};
    };
    TelemetryFrame f;
    f.sequence = sequence_;
    f.time_s = s.time_s;
    f.insertion_display_mm = disp.insertion_mm;
    f.rotary_display_deg = disp.rotary_deg;
    f.mode = sim_.controller().mode;
    f.estop = sim_.estopped();
    f.insertion_motor = motor(s.insertion_motor);
    f.rotary_motor = motor(s.rotary_motor);
    f.ie_counts = s.ie.counts;
    f.re_counts = s.re.counts;
    return f;
  }

 private:
  Simulator sim_;
  int ticks_per_frame_;
  std::uint64_t sequence_ = 0;
};

/// Bounded outbound queue for one subscriber. Frames are offered and, when
/// the queue is full, the subscriber is closed instead of growing the queue;
/// acks are always queued since there is at most one per client message.
class Subscription {
 public:
  explicit Subscription(std::size_t capacity) : capacity_(capacity) {}

  bool push_frame(std::string msg) {
    std::function<void()> notify;
    {
      std::lock_guard lock(mu_);
      if (closed_) return false;
      if (frames_queued_ >= capacity_) {
        closed_ = true;
        reason_ = "slow consumer";
      } else {
        queue_.push_back({std::move(msg), true});
        ++frames_queued_;
      }
      notify = notify_;
    }
    cv_.notify_all();
    if (notify) notify();
    return !closed();
  }

  void push_control(std::string msg) {
    std::function<void()> notify;
    {
      std::lock_guard lock(mu_);
      if (closed_) return;
      queue_.push_back({std::move(msg), false});
      notify = notify_;
    }
    cv_.notify_all();
    if (notify) notify();
  }

  std::optional<std::string> try_pop() {
    std::lock_guard lock(mu_);
    return pop_locked();
  }

  std::optional<std::string> wait_pop(std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return !queue_.empty() || closed_; });
    return pop_locked();
  }

  void close(std::string reason) {
    std::function<void()> notify;
    {
      std::lock_guard lock(mu_);
      if (closed_) return;
      closed_ = true;
      reason_ = std::move(reason);
      notify = notify_;
    }
    cv_.notify_all();
    if (notify) notify();
  }

  bool closed() const {
    std::lock_guard lock(mu_);
    return closed_;
  }

  std::string close_reason() const {
    std::lock_guard lock(mu_);
    return reason_;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return queue_.size();
  }

  /// Called (from the producing thread) whenever something is queued or
  /// the subscription closes. Must not block.
  void set_notify(std::function<void()> fn) {
    std::lock_guard lock(mu_);
    notify_ = std::move(fn);
  }

 private:
  struct Item {
    std::string text;
    bool frame;
  };

  std::optional<std::string> pop_locked() {
    if (queue_.empty()) return std::nullopt;
    Item item = std::move(queue_.front());
    queue_.pop_front();
    if (item.frame) --frames_queued_;
    return std::move(item.text);
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Item> queue_;
  std::size_t capacity_;
  std::size_t frames_queued_ = 0;
  bool closed_ = false;
  std::string reason_;
  std::function<void()> notify_;
};

struct ServiceOptions {
  double frame_rate_hz = kDefaultFrameRateHz;
  std::size_t queue_capacity = 64;
};

/// Owns the simulation. Commands from any thread are queued and applied at
/// the start of the next tick; frames are encoded once and fanned out.
class TelemetryService {
 public:
  explicit TelemetryService(SimConfig cfg, ServiceOptions opts = {})
      : core_(cfg, frame_ticks(cfg, opts)), opts_(opts), config_(std::move(cfg)) {
    publish_latest(core_.snapshot());
  }

  ~TelemetryService() { stop(); }

  TelemetryService(const TelemetryService&) = delete;
  TelemetryService& operator=(const TelemetryService&) = delete;

  const SimConfig& config() const { return config_; }

  /// New subscribers get the current frame first.
  std::shared_ptr<Subscription> subscribe() {
    auto sub = std::make_shared<Subscription>(opts_.queue_capacity);
    std::lock_guard lock(subs_mu_);
    sub->push_frame(latest_text_locked());
    subs_.push_back(sub);
    return sub;
  }

  void unsubscribe(const std::shared_ptr<Subscription>& sub) {
    std::lock_guard lock(subs_mu_);
    std::erase(subs_, sub);
  }

  using AckSink = std::function<void(const Ack&)>;

  void submit(CommandMessage c, AckSink reply) {
    std::lock_guard lock(cmd_mu_);
    commands_.push_back({std::move(c), std::move(reply)});
  }

  /// Decodes a client message; malformed ones are rejected at once, the
  /// rest are acked when applied. Either way `reply` sees exactly one ack.
  void submit_text(std::string_view text, const std::shared_ptr<Subscription>& reply) {
    const auto sink = [weak = std::weak_ptr<Subscription>(reply)](const Ack& a) {
      if (auto s = weak.lock()) s->push_control(to_json(a).dump());
    };
    auto decoded = decode_command(text);
    if (!decoded.command) {
      sink(Ack{decoded.request_id, false, decoded.error});
      return;
    }
    submit(std::move(*decoded.command), sink);
  }

  /// One control period: apply queued commands, tick, broadcast if due.
  void step() {
    std::vector<Pending> batch;
    {
      std::lock_guard lock(cmd_mu_);
      batch.swap(commands_);
    }
    for (auto& p : batch) {
      const Ack ack = core_.apply(p.command);
      if (p.reply) p.reply(ack);
    }
    if (auto frame = core_.tick()) broadcast(*frame);
  }

  /// Runs step() on a background thread paced to the control period.
  void start() {
    if (running_.exchange(true)) return;
    worker_ = std::thread([this] { loop(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    if (worker_.joinable()) worker_.join();
  }

  bool running() const { return running_; }

  TelemetryFrame latest() const {
    std::lock_guard lock(latest_mu_);
    return latest_;
  }

  /// Current frame plus the static configuration a client needs to
  /// interpret it.
  nlohmann::ordered_json state_document() const {
    const auto& p = config_.plant;
    const auto& c = config_.controller;
    nlohmann::ordered_json doc;
    doc["version"] = kProtocolVersion;
    doc["type"] = "state";
    doc["frame"] = to_json(latest());
    doc["config"] = {{"lead_mm", p.screw.lead_mm},
                     {"starts", p.screw.starts},
                     {"handedness", p.screw.handedness},
                     {"screw_ratio", p.screw_transmission.ratio()},
                     {"spline_ratio", p.spline_transmission.ratio()},
                     {"counts_per_rev", p.ie.counts_per_rev()},
                     {"control_period_s", c.control_period_s},
                     {"frame_rate_hz", 1.0 / (c.control_period_s * core_.ticks_per_frame())},
                     {"speed_cap_rpm", c.speed_cap_rpm},
                     {"insertion_tol_mm", c.insertion_tol_mm},
                     {"rotary_tol_deg", c.rotary_tol_deg}};
    return doc;
  }

 private:
  struct Pending {
    CommandMessage command;
    AckSink reply;
  };

  static int frame_ticks(const SimConfig& cfg, const ServiceOptions& opts) {
    if (!(opts.frame_rate_hz > 0.0)) throw std::invalid_argument("frame rate must be positive");
    if (opts.queue_capacity < 1) throw std::invalid_argument("queue capacity must be >= 1");
    const double ticks = 1.0 / (opts.frame_rate_hz * cfg.controller.control_period_s);
    return std::max(1, static_cast<int>(std::lround(ticks)));
  }

  void publish_latest(const TelemetryFrame& f) {
    std::lock_guard lock(latest_mu_);
    latest_ = f;
    latest_text_ = to_json(f).dump();
  }

  std::string latest_text_locked() const {
    std::lock_guard lock(latest_mu_);
    return latest_text_;
  }

  // Holding subs_mu_ across the publish keeps a concurrent subscribe() from
  // seeing this frame twice.
  void broadcast(const TelemetryFrame& f) {
    std::lock_guard lock(subs_mu_);
    publish_latest(f);
    const auto text = latest_text_locked();
    std::erase_if(subs_, [&](const std::shared_ptr<Subscription>& s) { return !s->push_frame(text); });
  }

  void loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(
        std::chrono::duration<double>(config_.controller.control_period_s));
    auto next = clock::now();
    while (running_) {
      step();
      next += period;
      const auto now = clock::now();
      if (next < now - 10 * period) next = now;  // fell far behind; don't burst
      std::this_thread::sleep_until(next);
    }
  }

  ServiceCore core_;
  ServiceOptions opts_;
  SimConfig config_;

  std::mutex cmd_mu_;
  std::vector<Pending> commands_;

  std::mutex subs_mu_;
  std::vector<std::shared_ptr<Subscription>> subs_;

  mutable std::mutex latest_mu_;
  TelemetryFrame latest_{};
  std::string latest_text_;

  std::atomic<bool> running_{false};
  std::thread worker_;
};

}  // namespace needledrive
