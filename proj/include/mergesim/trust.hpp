#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "mergesim/dynamics.hpp"
#include "mergesim/types.hpp"

namespace mergesim {

struct TrustParams {
  double alpha_hat = 0.6;    // smoothing factor
  double tau = 0.4;          // cooperation threshold
  double initial = 0.5;      // first-contact trust
};

// Exponentially weighted update toward the binary cooperativeness signal.
inline double update_trust(double trust, int delta, const TrustParams& p) {
  double t = (1.0 - p.alpha_hat) * trust + p.alpha_hat * static_cast<double>(delta);
  return std::clamp(t, 0.0, 1.0);
}

// Maps trust to the reward blend weight; identically 0 at or below tau.
inline double cooperation_factor(double trust, double tau) {
  return std::min(1.0, std::max(0.0, (trust - tau) / (1.0 - tau)));
}

enum class GameType { Cooperative, NonCooperative };

inline GameType game_type(double trust, double tau) {
  return trust >= tau ? GameType::Cooperative : GameType::NonCooperative;
}

// Pairwise trust held by CAV observers toward any vehicle they have scanned.
class TrustMatrix {
 public:
  explicit TrustMatrix(TrustParams params = {}) : params_(params) {}

  const TrustParams& params() const { return params_; }

  bool has(int observer, int observed) const {
    return entries_.count(key(observer, observed)) > 0;
  }

  // Inserts the first-contact default when the pair is new.
  double get_or_init(int observer, int observed) {
    auto [it, inserted] = entries_.try_emplace(key(observer, observed), params_.initial);
    return it->second;
  }

  std::optional<double> get(int observer, int observed) const {
    auto it = entries_.find(key(observer, observed));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void set(int observer, int observed, double trust) {
    entries_[key(observer, observed)] = std::clamp(trust, 0.0, 1.0);
  }

  void apply_observation(int observer, int observed, int delta) {
    double t = get_or_init(observer, observed);
    entries_[key(observer, observed)] = update_trust(t, delta, params_);
  }

  // Drops every entry the vehicle participates in, either side.
  void purge(int vehicle_id) {
    for (auto it = entries_.begin(); it != entries_.end();) {
      int i = static_cast<int>(it->first >> 32);
      int j = static_cast<int>(it->first & 0xffffffffULL);
      if (i == vehicle_id || j == vehicle_id) it = entries_.erase(it);
      else ++it;
    }
  }

  // Trust-weighted neighborhood mean sum(T^2)/sum(T); missing pairs are
  // initialized on first contact. Empty neighborhood yields nullopt.
  std::optional<double> weighted_mean(int observer, const std::vector<int>& neighbors) {
    double num = 0.0, den = 0.0;
    for (int j : neighbors) {
      double t = get_or_init(observer, j);
      num += t * t;
      den += t;
    }
    if (neighbors.empty() || den <= 0.0) return std::nullopt;
    return num / den;
  }

  std::size_t size() const { return entries_.size(); }

 private:
  static std::uint64_t key(int observer, int observed) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(observer)) << 32) |
           static_cast<std::uint64_t>(static_cast<std::uint32_t>(observed));
  }

  TrustParams params_;
  std::unordered_map<std::uint64_t, double> entries_;
};

struct CoopRuleParams {
  double d_safe = 4.0;        // cut-in gap bound, m
  double comfortable_decel = 1.5;  // clause (b) bound (IDM b)
  double scan_range = 100.0;  // m
};

// Concrete cooperativeness rule. Evaluated on two snapshots taken one
// classification interval apart. Returns nullopt when the observed vehicle
// was not in an interaction role (leader, follower, or counterpart in the
// observer's merge target lane) within scan range in the pre snapshot.
//
//   delta = 0 when any clause fires:
//     (a) observed cut into the observer's lane leaving a gap < d_safe
//     (b) observed now leads the observer and forces an IDM response
//         below -comfortable_decel
//     (c) observer holds a lane-change intent into the observed's lane and
//         the observed sped up while the gap between them was closing
//
// merge_target_lane: the lane the observer currently intends to enter, if any.
inline std::optional<int> classify_cooperative(const WorldView& pre, const WorldView& post,
                                               int observer_id, int observed_id,
                                               std::optional<int> merge_target_lane,
                                               const CoopRuleParams& p) {
  const VehicleState* obs_pre = pre.find(observer_id);
  const VehicleState* tgt_pre = pre.find(observed_id);
  if (!obs_pre || !tgt_pre) return std::nullopt;
  if (std::abs(tgt_pre->position - obs_pre->position) > p.scan_range) return std::nullopt;

  bool was_leader = pre.leader_of(*obs_pre) && pre.leader_of(*obs_pre)->id == observed_id;
  bool was_follower = pre.follower_of(*obs_pre) && pre.follower_of(*obs_pre)->id == observed_id;
  bool was_counterpart = merge_target_lane && tgt_pre->lane == *merge_target_lane;
  if (!was_leader && !was_follower && !was_counterpart) return std::nullopt;

  const VehicleState* obs_post = post.find(observer_id);
  const VehicleState* tgt_post = post.find(observed_id);
  if (!obs_post || !tgt_post) return std::nullopt;

  // (a) cut-in below d_safe
  if (tgt_pre->lane != obs_pre->lane && tgt_post->lane == obs_post->lane &&
      tgt_post->position > obs_post->position &&
      bumper_gap(*tgt_post, *obs_post) < p.d_safe) {
    return 0;
  }

  // (b) forced hard braking by the observed as leader
  const VehicleState* post_leader = post.leader_of(*obs_post);
  if (post_leader && post_leader->id == observed_id) {
    double gap = bumper_gap(*post_leader, *obs_post);
    if (gap <= 0.0) return 0;
    double response = idm_acceleration(obs_post->speed, obs_post->speed - post_leader->speed,
                                       gap, obs_post->idm);
    if (response < -p.comfortable_decel) return 0;
  }

  // (c) gap denial against an active lane-change intent
  if (merge_target_lane && tgt_pre->lane == *merge_target_lane &&
      tgt_post->lane == *merge_target_lane) {
    double gap_pre = std::abs(tgt_pre->position - obs_pre->position);
    double gap_post = std::abs(tgt_post->position - obs_post->position);
    if (gap_post < gap_pre && tgt_post->speed > tgt_pre->speed) return 0;
  }

  return 1;
}

}  // namespace mergesim
