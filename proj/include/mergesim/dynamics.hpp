#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>
#include <vector>

#include "mergesim/types.hpp"

namespace mergesim {

// Intelligent driver model. gap is the bumper-to-bumper distance to the
// leader (kInf when there is none), delta_v = own speed - leader speed.
// Result clamped to [-kEmergencyDecel, params.a].
inline double idm_acceleration(double v, double delta_v, double gap,
                               const IdmParams& p) {
  if (gap <= 0.0) {
    throw ContractViolation("idm_acceleration: gap must be positive (collision not flagged?)");
  }
  double free_term = 1.0 - std::pow(v / p.v_d, 4.0);
  double interaction = 0.0;
  if (std::isfinite(gap)) {
    double desired = p.s0 + std::max(v * p.T + v * delta_v / (2.0 * std::sqrt(p.a * p.b)), 0.0);
    interaction = (desired / gap) * (desired / gap);
  }
  double acc = p.a * (free_term - interaction);
  return std::clamp(acc, -kEmergencyDecel, p.a);
}

enum class MobilDecision { Stay, Change };

// Incentive criterion plus the new-follower safety veto. All inputs are
// acceleration deltas computed from hypothetical pre/post configurations.
inline MobilDecision mobil_decision(double ego_gain, double follower_new_change,
                                    double follower_old_change,
                                    double new_follower_accel_after,
                                    const MobilParams& p) {
  bool incentive = ego_gain + p.p * (follower_new_change + follower_old_change) > p.delta_a_th;
  bool safe = new_follower_accel_after > -p.b_safe;
  return (incentive && safe) ? MobilDecision::Change : MobilDecision::Stay;
}

// Semi-implicit Euler with a speed floor at rest.
inline VehicleState step_kinematics(VehicleState s, double accel, double dt) {
  if (dt <= 0.0) throw ContractViolation("step_kinematics: dt must be positive");
  s.prev_accel = s.accel;
  s.accel = accel;
  s.speed = std::max(0.0, s.speed + accel * dt);
  s.position += s.speed * dt;
  s.lane_change_cooldown = std::max(0.0, s.lane_change_cooldown - dt);
  return s;
}

inline double bumper_gap(const VehicleState& leader, const VehicleState& follower) {
  return leader.rear() - follower.position;
}

// Immutable per-step snapshot with per-lane position ordering. Ties in
// position are broken by id so neighbor queries stay deterministic.
class WorldView {
 public:
  WorldView() = default;

  explicit WorldView(std::vector<VehicleState> vehicles)
      : vehicles_(std::move(vehicles)) {
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      by_id_[vehicles_[i].id] = i;
      lanes_[vehicles_[i].lane].push_back(i);
    }
    for (auto& [lane, idx] : lanes_) {
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (vehicles_[a].position != vehicles_[b].position)
          return vehicles_[a].position < vehicles_[b].position;
        return vehicles_[a].id < vehicles_[b].id;
      });
    }
  }

  const std::vector<VehicleState>& vehicles() const { return vehicles_; }

  const VehicleState* find(int id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &vehicles_[it->second];
  }

  // Nearest vehicle strictly ahead of `position` in `lane`.
  const VehicleState* leader_in_lane(int lane, double position, int exclude_id = -1) const {
    auto it = lanes_.find(lane);
    if (it == lanes_.end()) return nullptr;
    for (std::size_t i : it->second) {
      const VehicleState& v = vehicles_[i];
      if (v.id == exclude_id) continue;
      if (v.position > position) return &v;
    }
    return nullptr;
  }

  // Nearest vehicle at or behind `position` in `lane`.
  const VehicleState* follower_in_lane(int lane, double position, int exclude_id = -1) const {
    auto it = lanes_.find(lane);
    if (it == lanes_.end()) return nullptr;
    const VehicleState* best = nullptr;
    for (std::size_t i : it->second) {
      const VehicleState& v = vehicles_[i];
      if (v.id == exclude_id) continue;
      if (v.position > position) break;
      best = &v;
    }
    return best;
  }

  const VehicleState* leader_of(const VehicleState& v) const {
    return leader_in_lane(v.lane, v.position, v.id);
  }

  const VehicleState* follower_of(const VehicleState& v) const {
    return follower_in_lane(v.lane, v.position, v.id);
  }

  const std::vector<std::size_t>* lane_order(int lane) const {
    auto it = lanes_.find(lane);
    return it == lanes_.end() ? nullptr : &it->second;
  }

  std::vector<int> lanes() const {
    std::vector<int> out;
    out.reserve(lanes_.size());
    for (const auto& [lane, _] : lanes_) out.push_back(lane);
    return out;
  }

 private:
  std::vector<VehicleState> vehicles_;
  std::unordered_map<int, std::size_t> by_id_;
  std::map<int, std::vector<std::size_t>> lanes_;
};

struct CollisionEvent {
  int leader_id = -1;
  int follower_id = -1;
  double position = 0.0;
  bool lateral = false;  // produced by a lane change into an occupied slot
};

// Same-lane bumper overlap scan; gap <= 0 counts. Adjacent pairs only, so a
// three-vehicle pileup yields two events.
inline std::vector<CollisionEvent> detect_collisions(const WorldView& view) {
  std::vector<CollisionEvent> events;
  for (int lane : view.lanes()) {
    const auto* order = view.lane_order(lane);
    if (!order) continue;
    for (std::size_t k = 1; k < order->size(); ++k) {
      const VehicleState& follower = view.vehicles()[(*order)[k - 1]];
      const VehicleState& leader = view.vehicles()[(*order)[k]];
      if (bumper_gap(leader, follower) <= 0.0) {
        events.push_back({leader.id, follower.id, follower.position, false});
      }
    }
  }
  return events;
}

}  // namespace mergesim
