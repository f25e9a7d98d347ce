#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "mergesim/types.hpp"

namespace mergesim {

struct RewardParams {
  double w_s = 1.0;
  double w_c = 1.0;
  double w_e = 1.0;
  double d_safe = 4.0;      // m
  double v_desired = 30.0;  // m/s
};

struct RewardBreakdown {
  double safety = 0.0;      // -1 headway indicator, else 0
  double comfort = 0.0;     // -|jerk|
  double efficiency = 0.0;  // -|v - v_desired|
  double self_total = 0.0;
  double coop = 0.0;
  double lambda = 0.0;
  double total = 0.0;
};

// Penalty-only self reward; headway = kInf disables the safety indicator.
inline RewardBreakdown self_reward(double headway, double jerk, double v,
                                   const RewardParams& p) {
  RewardBreakdown r;
  r.safety = (headway < p.d_safe) ? -1.0 : 0.0;
  r.comfort = -std::abs(jerk);
  r.efficiency = -std::abs(v - p.v_desired);
  r.self_total = p.w_s * r.safety + p.w_c * r.comfort + p.w_e * r.efficiency;
  return r;
}

// Trust-weighted average of neighbor self rewards; 0 when no signal exists.
inline double coop_reward(const std::vector<std::pair<double, double>>& neighbor_rewards) {
  double num = 0.0, den = 0.0;
  for (const auto& [trust, r_self] : neighbor_rewards) {
    num += trust * r_self;
    den += trust;
  }
  if (den <= 0.0) return 0.0;
  return num / den;
}

inline double total_reward(double self_total, double coop, double lambda) {
  return (1.0 - lambda) * self_total + lambda * coop;
}

}  // namespace mergesim
