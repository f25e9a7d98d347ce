#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mergesim/rng.hpp"
#include "mergesim/types.hpp"

namespace mergesim {

struct RoadNetwork {
  double mainline_length = 10000.0;  // m
  int mainline_lanes = 2;
  double lane_width = 3.75;          // m
  double mainline_speed_limit = 33.3;  // m/s
  double ramp_speed_advisory = 22.2;   // m/s
  double merge_zone_start = 5000.0;    // m, ramp joins lane 0 here
  double accel_lane_length = 300.0;    // m
  double ramp_length = 300.0;          // m of approach before the merge point
  double detector_spacing = 250.0;     // m
  std::vector<double> detector_positions;  // per lane, chainages in (0, length]

  double accel_lane_end() const { return merge_zone_start + accel_lane_length; }
  double ramp_spawn_position() const { return merge_zone_start - ramp_length; }

  double lane_speed_limit(int lane) const {
    return lane == kRampLane ? ramp_speed_advisory : mainline_speed_limit;
  }

  // Lanes adjacent to `lane` a vehicle could move into. The ramp feeds lane 0
  // only inside the acceleration lane; mainline vehicles never enter the ramp.
  std::vector<int> adjacent_lanes(int lane, double position) const {
    std::vector<int> out;
    if (lane == kRampLane) {
      if (position >= merge_zone_start && position <= accel_lane_end()) out.push_back(0);
      return out;
    }
    if (lane + 1 < mainline_lanes) out.push_back(lane + 1);
    if (lane - 1 >= 0) out.push_back(lane - 1);
    return out;
  }

  bool in_accel_lane(const VehicleState& v) const {
    return v.lane == kRampLane && v.position >= merge_zone_start &&
           v.position <= accel_lane_end();
  }

  // 1 at the end of the acceleration lane, 0 at its start and off-ramp.
  double merge_urgency(const VehicleState& v) const {
    if (!in_accel_lane(v)) return 0.0;
    double remaining = accel_lane_end() - v.position;
    return std::clamp(1.0 - remaining / accel_lane_length, 0.0, 1.0);
  }
};

struct DemandBreakpoint {
  double t = 0.0;          // s
  double mainline = 0.0;   // veh/h
  double ramp = 0.0;       // veh/h
};

// Fixed split demand or a piecewise-linear profile over breakpoints.
struct DemandProfile {
  double fixed_level = 600.0;    // veh/h total when no breakpoints given
  double mainline_split = 0.8;
  std::vector<DemandBreakpoint> breakpoints;  // sorted by t when present

  bool dynamic() const { return !breakpoints.empty(); }
};

struct PenetrationShift {
  double time = 0.0;
  double before = 0.0;
  double after = 0.0;
};

struct ScenarioConfig {
  double demand_level = 600.0;     // veh/h, fixed-demand runs
  double cav_penetration = 0.5;
  double duration = 600.0;         // s of measured simulation
  double warmup = 120.0;           // s discarded before metrics
  double dt = 0.1;                 // s
  std::uint64_t seed = 1;
  ControllerMode controller = ControllerMode::TrustFull;
  RoadNetwork network;             // geometry template; detectors filled by build_network
  DemandProfile profile;
  std::optional<PenetrationShift> penetration_shift;
  bool spawning_enabled = true;
  bool driver_style_variation = true;
};

inline RoadNetwork build_network(const ScenarioConfig& config) {
  RoadNetwork net = config.network;
  if (net.mainline_length <= 0.0 || net.accel_lane_length <= 0.0 ||
      net.detector_spacing <= 0.0 || net.ramp_length <= 0.0 || net.lane_width <= 0.0) {
    throw ConfigError("build_network: all lengths must be positive");
  }
  if (net.mainline_lanes < 1) throw ConfigError("build_network: need at least one mainline lane");
  if (net.merge_zone_start + net.accel_lane_length >= net.mainline_length) {
    throw ConfigError("build_network: merge zone extends past the corridor end");
  }
  if (net.merge_zone_start <= 0.0) {
    throw ConfigError("build_network: merge_zone_start must be inside the corridor");
  }
  net.detector_positions.clear();
  for (int k = 1; k * net.detector_spacing <= net.mainline_length + 1e-9; ++k) {
    net.detector_positions.push_back(k * net.detector_spacing);
  }
  return net;
}

// Demand at time t. Fixed runs split the level mainline/ramp; dynamic runs
// interpolate linearly between breakpoints and clamp beyond the ends.
inline std::pair<double, double> demand_rate(const DemandProfile& profile, double t,
                                             double duration) {
  if (t < 0.0 || t > duration) throw ConfigError("demand_rate: t outside the run horizon");
  if (!profile.dynamic()) {
    return {profile.mainline_split * profile.fixed_level,
            (1.0 - profile.mainline_split) * profile.fixed_level};
  }
  const auto& bp = profile.breakpoints;
  if (t <= bp.front().t) return {bp.front().mainline, bp.front().ramp};
  if (t >= bp.back().t) return {bp.back().mainline, bp.back().ramp};
  for (std::size_t i = 1; i < bp.size(); ++i) {
    if (t <= bp[i].t) {
      double w = (t - bp[i - 1].t) / (bp[i].t - bp[i - 1].t);
      return {bp[i - 1].mainline + w * (bp[i].mainline - bp[i - 1].mainline),
              bp[i - 1].ramp + w * (bp[i].ramp - bp[i - 1].ramp)};
    }
  }
  return {bp.back().mainline, bp.back().ramp};
}

// Per-entry-lane arrival process: Bernoulli thinning of the hourly rate at
// each step, a deferred backlog when the entry gap is blocked, and the CAV
// coin flip at draw time. One spawner per entry lane keeps streams
// independent of other lanes' traffic.
class LaneSpawner {
 public:
  LaneSpawner() = default;
  LaneSpawner(std::uint64_t seed, const std::string& stream_id)
      : arrivals_(seed, stream_id + "/arrivals"), traits_(seed, stream_id + "/traits") {}

  // Draws this step's arrival and returns the number of vehicles to spawn
  // now given whether the entry is currently blocked. Deferred arrivals stay
  // queued until the entry opens.
  int poll(double rate_veh_per_h, double dt, bool entry_blocked) {
    double p = std::min(1.0, rate_veh_per_h * dt / 3600.0);
    if (arrivals_.bernoulli(p)) ++backlog_;
    if (entry_blocked || backlog_ == 0) return 0;
    int n = 1;  // at most one vehicle fits the entry gap per step
    backlog_ -= n;
    return n;
  }

  bool draw_is_cav(double penetration) { return traits_.bernoulli(penetration); }

  DriverStyle draw_style() {
    return static_cast<DriverStyle>(traits_.uniform_index(3));
  }

  int backlog() const { return backlog_; }

 private:
  RngStream arrivals_;
  RngStream traits_;
  int backlog_ = 0;
};

// Driver style scaling applied to HV parameters at spawn.
inline void apply_driver_style(VehicleState& v) {
  switch (v.style) {
    case DriverStyle::Aggressive:
      v.idm.T *= 0.7;
      v.idm.a *= 1.3;
      v.idm.v_d *= 1.08;
      v.mobil.p = 0.05;
      v.mobil.delta_a_th *= 0.7;
      break;
    case DriverStyle::Normal:
      break;
    case DriverStyle::Cautious:
      v.idm.T *= 1.3;
      v.idm.a *= 0.8;
      v.idm.v_d *= 0.93;
      v.mobil.p = 0.4;
      v.mobil.delta_a_th *= 1.3;
      break;
  }
}

// Entry speed: fast enough to keep up, slow enough that the IDM desired gap
// fits behind the current last vehicle.
inline double safe_entry_speed(double speed_limit, std::optional<double> leader_gap,
                               std::optional<double> leader_speed, const IdmParams& idm) {
  double v = speed_limit;
  if (leader_gap) {
    double by_gap = (*leader_gap - idm.s0) / idm.T;
    v = std::min(v, std::max(0.0, by_gap));
    if (leader_speed) v = std::min(std::max(v, 0.0), std::max(*leader_speed, 5.0));
  }
  return std::clamp(v, 0.0, speed_limit);
}

}  // namespace mergesim
