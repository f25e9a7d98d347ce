#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "mergesim/types.hpp"

namespace mergesim {

// Time to collision; kInf when the gap is opening.
inline double ttc(double gap, double closing_speed) {
  if (gap <= 0.0) throw ContractViolation("ttc: gap must be positive");
  if (closing_speed <= 0.0) return kInf;
  return gap / closing_speed;
}

struct ConflictAreaCrossing {
  int vehicle_id = -1;
  double entry_time = 0.0;
  double exit_time = 0.0;
};

struct PetRecord {
  int first_id = -1;
  int second_id = -1;
  double pet = 0.0;
  bool overlap = false;  // simultaneous occupancy
};

// Post-encroachment times between consecutive traversals of the merge
// conflict area. Crossings are matched in entry-time order; simultaneous
// occupancy yields PET 0 with the overlap flag set.
inline std::vector<PetRecord> pet_series(std::vector<ConflictAreaCrossing> log) {
  std::sort(log.begin(), log.end(), [](const auto& a, const auto& b) {
    if (a.entry_time != b.entry_time) return a.entry_time < b.entry_time;
    return a.vehicle_id < b.vehicle_id;
  });
  std::vector<PetRecord> out;
  for (std::size_t k = 1; k < log.size(); ++k) {
    const auto& prev = log[k - 1];
    const auto& cur = log[k];
    double gap = cur.entry_time - prev.exit_time;
    if (gap < 0.0) {
      out.push_back({prev.vehicle_id, cur.vehicle_id, 0.0, true});
    } else {
      out.push_back({prev.vehicle_id, cur.vehicle_id, gap, false});
    }
  }
  return out;
}

// Discrete jerk: (a_t - a_{t-1}) / dt. Length n input -> length n-1 output.
inline std::vector<double> jerk_trace(const std::vector<double>& accel, double dt) {
  std::vector<double> out;
  if (accel.size() < 2) return out;
  out.reserve(accel.size() - 1);
  for (std::size_t i = 1; i < accel.size(); ++i) {
    out.push_back((accel[i] - accel[i - 1]) / dt);
  }
  return out;
}

struct DetectorRecord {
  double position = 0.0;   // m
  int lane = 0;
  double interval_end = 0.0;  // s
  double flow = 0.0;       // veh/h
  std::optional<double> mean_speed;  // m/s, absent with no crossings
  double occupancy = 0.0;  // fraction of interval
};

struct DetectorCrossing {
  double time = 0.0;
  double speed = 0.0;
  double length = 5.0;
};

// Fixed-interval loop aggregation: flow from crossing counts, harmonic-free
// arithmetic mean speed, occupancy as summed passage time over the interval.
inline DetectorRecord detector_aggregate(const std::vector<DetectorCrossing>& crossings,
                                         double interval, double interval_end,
                                         double position, int lane) {
  DetectorRecord rec;
  rec.position = position;
  rec.lane = lane;
  rec.interval_end = interval_end;
  rec.flow = static_cast<double>(crossings.size()) * 3600.0 / interval;
  double occ = 0.0;
  if (!crossings.empty()) {
    double speed_sum = 0.0;
    for (const auto& c : crossings) {
      speed_sum += c.speed;
      if (c.speed > 0.0) occ += c.length / c.speed;
    }
    rec.mean_speed = speed_sum / static_cast<double>(crossings.size());
  }
  rec.occupancy = std::clamp(occ / interval, 0.0, 1.0);
  return rec;
}

struct RecoveryResult {
  bool recovered = false;
  double seconds = 0.0;  // valid when recovered
  double horizon = 0.0;  // scan end relative to shift when not recovered
};

// First time after shift_time at which the (already smoothed) throughput
// series regains 90% of the pre-shift baseline. The series is sampled at
// fixed sample_dt starting at t = t0.
inline RecoveryResult recovery_time(const std::vector<double>& series, double t0,
                                    double sample_dt, double shift_time,
                                    double baseline_window) {
  if (series.empty() || sample_dt <= 0.0)
    throw ConfigError("recovery_time: empty series or bad sample step");
  double base_sum = 0.0;
  int base_n = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    double t = t0 + static_cast<double>(i) * sample_dt;
    if (t >= shift_time - baseline_window && t < shift_time) {
      base_sum += series[i];
      ++base_n;
    }
  }
  if (base_n == 0) throw ConfigError("recovery_time: empty baseline window");
  double threshold = 0.9 * (base_sum / base_n);
  double last_t = t0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    double t = t0 + static_cast<double>(i) * sample_dt;
    last_t = t;
    if (t < shift_time) continue;
    if (series[i] >= threshold) {
      return {true, t - shift_time, 0.0};
    }
  }
  return {false, 0.0, last_t - shift_time};
}

struct EpisodeMetrics {
  int merge_attempts = 0;
  int conflicted_merges = 0;
  int completed_merges = 0;
  int collisions = 0;
  std::optional<double> collision_rate;  // percent of merge attempts
  std::optional<double> mean_travel_time;  // s, completed trips
  std::optional<double> mean_abs_jerk;     // m/s^3, CAV steps
  std::optional<double> throughput;        // veh/h at the bottleneck detector
  std::optional<double> min_ttc;           // s
  std::optional<double> min_pet;           // s
  int vehicles_spawned = 0;
  int vehicles_exited = 0;
};

// Streaming per-episode accumulator; warmup filtering is the caller's duty.
class EpisodeAccumulator {
 public:
  void add_travel_time(double seconds) {
    travel_sum_ += seconds;
    ++travel_n_;
  }
  void add_cav_jerk(double jerk) {
    jerk_sum_ += std::abs(jerk);
    ++jerk_n_;
  }
  void add_merge_attempt() { ++attempts_; }
  void add_conflicted_merge() { ++conflicts_; }
  void add_completed_merge() { ++completed_; }
  void add_collision() { ++collisions_; }
  void note_ttc(double t) { min_ttc_ = std::min(min_ttc_, t); }
  void note_pet(double t) { min_pet_ = std::min(min_pet_, t); }
  void note_spawn() { ++spawned_; }
  void note_exit() { ++exited_; }

  int merge_attempts() const { return attempts_; }

  EpisodeMetrics finish(std::optional<double> throughput) const {
    EpisodeMetrics m;
    m.merge_attempts = attempts_;
    m.conflicted_merges = conflicts_;
    m.completed_merges = completed_;
    m.collisions = collisions_;
    if (attempts_ > 0)
      m.collision_rate = 100.0 * static_cast<double>(conflicts_) / attempts_;
    if (travel_n_ > 0) m.mean_travel_time = travel_sum_ / travel_n_;
    if (jerk_n_ > 0) m.mean_abs_jerk = jerk_sum_ / jerk_n_;
    m.throughput = throughput;
    if (std::isfinite(min_ttc_)) m.min_ttc = min_ttc_;
    if (std::isfinite(min_pet_)) m.min_pet = min_pet_;
    m.vehicles_spawned = spawned_;
    m.vehicles_exited = exited_;
    return m;
  }

 private:
  double travel_sum_ = 0.0;
  int travel_n_ = 0;
  double jerk_sum_ = 0.0;
  long long jerk_n_ = 0;
  int attempts_ = 0;
  int conflicts_ = 0;
  int completed_ = 0;
  int collisions_ = 0;
  double min_ttc_ = kInf;
  double min_pet_ = kInf;
  int spawned_ = 0;
  int exited_ = 0;
};

// Trailing moving average used to smooth per-interval throughput before the
// recovery scan; window is in samples.
inline std::vector<double> moving_average(const std::vector<double>& xs, int window) {
  if (window <= 1) return xs;
  std::vector<double> out(xs.size(), 0.0);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::size_t lo = i >= static_cast<std::size_t>(window - 1) ? i - (window - 1) : 0;
    double sum = 0.0;
    int n = 0;
    for (std::size_t j = lo; j <= i; ++j) {
      sum += xs[j];
      ++n;
    }
    out[i] = sum / n;
  }
  return out;
}

}  // namespace mergesim
