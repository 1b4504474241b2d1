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

// Validation campaign: accuracy trials with a distance-proportional
// measurement-noise model, spiral-drift accumulation, and the pulley speed
// table.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "needledrive/drivetrain.hpp"
#include "needledrive/simulator.hpp"

namespace needledrive {

/// A failed closed-loop trial. Never dropped silently.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, int trial) : std::runtime_error(what), trial_(trial) {}
  int trial() const { return trial_; }

 private:
  int trial_;
};

struct TrialSpec {
  Axis axis = Axis::Insertion;
  double target = 0.0;  // mm or degrees
  int repetitions = constants::kAccuracyRepetitions;
};

/// Measurement error model for hand-tool readings: the reading is biased by
/// `bias_slope * target` and scattered with sigma = intercept + slope * |target|.
struct NoiseModel {
  double sigma_intercept = 0.0;
  double sigma_slope = 0.0;
  double bias_slope = 0.0;
  std::uint64_t seed = 0;

  double sigma_at(double target) const { return sigma_intercept + sigma_slope * std::abs(target); }

  void validate() const {
    if (!(sigma_intercept >= 0.0) || !(sigma_slope >= 0.0) || !std::isfinite(sigma_intercept) ||
        !std::isfinite(sigma_slope) || !std::isfinite(bias_slope)) {
      throw std::invalid_argument("noise model needs finite, non-negative sigma terms");
    }
  }

  friend bool operator==(const NoiseModel&, const NoiseModel&) = default;
};

/// One accuracy table row. `n` is the repetition count behind the statistics.
struct AccuracyRow {
  double target = 0.0;
  double mean_error = 0.0;
  double std_dev = 0.0;
  std::int64_t n = 0;

  friend bool operator==(const AccuracyRow&, const AccuracyRow&) = default;
};

struct ExperimentStats {
  double target = 0.0;
  double mean_error = 0.0;
  double std_dev = 0.0;
  std::vector<double> samples;  // measured values, ascending

  std::int64_t n() const { return static_cast<std::int64_t>(samples.size()); }
  AccuracyRow row() const { return {target, mean_error, std_dev, n()}; }
};

/// Mean and n-1 standard deviation of (sample - target), summed over the
/// sorted samples so the result does not depend on trial order.
inline ExperimentStats make_stats(double target, std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("statistics need at least one sample");
  std::sort(samples.begin(), samples.end());
  double sum = 0.0;
  for (double s : samples) sum += s - target;
  const double n = static_cast<double>(samples.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (double s : samples) {
    const double d = (s - target) - mean;
    ss += d * d;
  }
  const double sd = samples.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return {target, mean, sd, std::move(samples)};
}

namespace detail {

// Sub-seed per (seed, axis, target, trial) so trials are independent and can
// run in any order.
inline std::mt19937_64 trial_rng(std::uint64_t seed, Axis axis, double target, int trial) {
  const auto bits = std::bit_cast<std::uint64_t>(target);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(axis),  static_cast<std::uint32_t>(bits),
                    static_cast<std::uint32_t>(bits >> 32), static_cast<std::uint32_t>(trial)};
  return std::mt19937_64(seq);
}

inline double move_timeout_s(const TrialSpec& spec, const SimConfig& cfg) {
  const auto& c = cfg.controller;
  const double rate = spec.axis == Axis::Insertion
                          ? insertion_rate_mm_s(c.insertion_speed_rpm, cfg.plant)
                          : transmission_output(c.rotary_speed_rpm, cfg.plant.spline_transmission) * kDegPerSecPerRpm;
  return 2.0 * std::abs(spec.target) / rate + 10.0;
}

}  // namespace detail

/// Noise-free final position of one closed-loop move from the home pose.
/// Insertion moves run in Normal mode; rotary moves run with Rotation Enable.
inline double run_closed_loop_move(const TrialSpec& spec, const SimConfig& cfg, int trial = 0) {
  Simulator sim(cfg);
  if (spec.axis == Axis::Insertion) {
    sim.set_insertion_target(spec.target);
  } else {
    sim.set_rotation_enable(true);
    sim.set_rotary_target(spec.target);
  }
  if (!sim.run_until_settled(detail::move_timeout_s(spec, cfg))) {
    throw ConvergenceError("trial " + std::to_string(trial) + " toward " + std::string(to_string(spec.axis)) +
                               " target " + std::to_string(spec.target) + " did not settle",
                           trial);
  }
  return spec.axis == Axis::Insertion ? sim.state().pose.insertion_mm : sim.state().pose.rotation_deg;
}

inline ExperimentStats run_accuracy_trials(const TrialSpec& spec, const NoiseModel& noise, const SimConfig& cfg) {
  if (spec.repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  if (!std::isfinite(spec.target)) throw std::invalid_argument("trial target must be finite");
  noise.validate();

  std::vector<double> samples;
  samples.reserve(static_cast<std::size_t>(spec.repetitions));
  for (int trial = 0; trial < spec.repetitions; ++trial) {
    const double reached = run_closed_loop_move(spec, cfg, trial);
    auto rng = detail::trial_rng(noise.seed, spec.axis, spec.target, trial);
    std::normal_distribution<double> gauss(0.0, 1.0);
    samples.push_back(reached + noise.bias_slope * spec.target + noise.sigma_at(spec.target) * gauss(rng));
  }
  return make_stats(spec.target, std::move(samples));
}

struct NoiseFit {
  NoiseModel model;
  std::vector<double> sigma_residuals;  // observed - fitted, per row
  std::vector<double> mean_residuals;
};

/// Least-squares fit of std_dev ~ a + b |target| and mean_error ~ c * target.
inline NoiseFit calibrate_noise(std::span<const AccuracyRow> rows, std::uint64_t seed = 0) {
  if (rows.size() < 2) throw std::invalid_argument("noise calibration needs at least two rows");
  const double n = static_cast<double>(rows.size());
  double mx = 0.0, my = 0.0;
  for (const auto& r : rows) {
    mx += std::abs(r.target);
    my += r.std_dev;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, stt = 0.0, stm = 0.0;
  for (const auto& r : rows) {
    const double dx = std::abs(r.target) - mx;
    sxx += dx * dx;
    sxy += dx * (r.std_dev - my);
    stt += r.target * r.target;
    stm += r.target * r.mean_error;
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("degenerate noise fit: all targets are equal");

  NoiseFit fit;
  fit.model.sigma_slope = sxy / sxx;
  fit.model.sigma_intercept = my - fit.model.sigma_slope * mx;
  fit.model.bias_slope = stm / stt;
  fit.model.seed = seed;
  for (const auto& r : rows) {
    fit.sigma_residuals.push_back(r.std_dev - fit.model.sigma_at(r.target));
    fit.mean_residuals.push_back(r.mean_error - fit.model.bias_slope * r.target);
  }
  return fit;
}

struct DriftResult {
  double total_rotation_deg = 0.0;
  double insertion_drift_mm = 0.0;
  double drift_per_rev_mm = 0.0;
};

struct DriftOptions {
  bool pid = false;
  // Hold time after the rotation settles, so the compensator can pull IM back
  // into step.
  double settle_s = 5.0;
};

/// Pure rotation under Rotation Enable with IM running (1 + epsilon) fast.
inline DriftResult run_drift_experiment(int revolutions, double epsilon, SimConfig cfg, DriftOptions opts = {}) {
  if (revolutions < 1) throw std::invalid_argument("revolutions must be >= 1");
  cfg.insertion_mismatch = epsilon;
  cfg.controller.pid_enabled = opts.pid;

  Simulator sim(cfg);
  const double start_insertion = sim.state().pose.insertion_mm;
  sim.set_rotation_enable(true);
  sim.set_rotary_target(360.0 * revolutions);
  const TrialSpec spec{Axis::Rotary, 360.0 * revolutions, 1};
  if (!sim.run_until_settled(detail::move_timeout_s(spec, cfg))) {
    throw ConvergenceError("drift rotation did not settle", 0);
  }
  if (opts.pid) sim.run_for(opts.settle_s);

  DriftResult r;
  r.total_rotation_deg = sim.state().pose.rotation_deg;
  r.insertion_drift_mm = sim.state().pose.insertion_mm - start_insertion;
  r.drift_per_rev_mm = r.insertion_drift_mm / (r.total_rotation_deg / 360.0);
  return r;
}

/// Nut speeds for one motor speed across the given pulley pairs.
inline std::vector<double> speed_table(double motor_rpm, std::span<const TransmissionConfig> configs) {
  if (!std::isfinite(motor_rpm) || motor_rpm < 0.0) {
    throw std::invalid_argument("motor speed must be finite and non-negative");
  }
  std::vector<double> out;
  out.reserve(configs.size());
  for (const auto& c : configs) out.push_back(transmission_output(motor_rpm, c));
  return out;
}

}  // namespace needledrive
