#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "mergesim/dynamics.hpp"
#include "mergesim/rng.hpp"
#include "mergesim/trust.hpp"
#include "mergesim/types.hpp"

namespace mergesim {

// Strategy spaces, in the row/column order of the payoff tables:
// follower rows {Accelerate, Keep, Decelerate, ChangeLane},
// ego columns {ChangeLane, NotChangeLane}.
enum class EgoStrategy { ChangeLane = 0, NotChangeLane = 1 };
enum class FollowerStrategy { Accelerate = 0, Keep = 1, Decelerate = 2, ChangeLane = 3 };

inline const char* to_string(EgoStrategy s) {
  return s == EgoStrategy::ChangeLane ? "change" : "stay";
}
inline const char* to_string(FollowerStrategy s) {
  switch (s) {
    case FollowerStrategy::Accelerate: return "accelerate";
    case FollowerStrategy::Keep: return "keep";
    case FollowerStrategy::Decelerate: return "decelerate";
    case FollowerStrategy::ChangeLane: return "change";
  }
  return "?";
}

struct PayoffMatrix {
  std::array<std::array<double, 2>, 4> cell{};  // [follower][ego]

  double& at(FollowerStrategy f, EgoStrategy e) {
    return cell[static_cast<int>(f)][static_cast<int>(e)];
  }
  double at(FollowerStrategy f, EgoStrategy e) const {
    return cell[static_cast<int>(f)][static_cast<int>(e)];
  }
};

struct GamePayoffWeights {
  double eff = 0.3;
  double comf = 0.3;
  double lc = 0.2;
  double mlc = 0.2;
};

enum class NoiseMode { Off, SeededGumbel };

struct NonCoopParams {
  // ego payoff P = a0 + a1*Acc + a2*dV (+ noise)
  double alpha0 = 0.0, alpha1 = 1.0, alpha2 = 0.5;
  // follower payoff Q = b0 + b1*Acc + b2*dV (+ noise)
  double beta0 = 0.0, beta1 = 1.0, beta2 = 0.5;
  NoiseMode noise = NoiseMode::Off;
};

struct DriverType {
  DriverStyle label = DriverStyle::Normal;
  std::array<double, 4> p{};  // follower mixed strategy when ego changes lane
  std::array<double, 4> q{};  // follower mixed strategy when ego keeps lane
  double prior = 1.0;
};

inline std::vector<DriverType> default_driver_types() {
  return {
      {DriverStyle::Aggressive, {0.5, 0.2, 0.1, 0.2}, {0.5, 0.2, 0.1, 0.2}, 1.0 / 3.0},
      {DriverStyle::Normal, {0.2, 0.4, 0.3, 0.1}, {0.2, 0.4, 0.3, 0.1}, 1.0 / 3.0},
      {DriverStyle::Cautious, {0.05, 0.35, 0.5, 0.1}, {0.05, 0.35, 0.5, 0.1}, 1.0 / 3.0},
  };
}

inline void validate_types(const std::vector<DriverType>& types) {
  if (types.empty()) throw ConfigError("driver type set is empty");
  double prior_sum = 0.0;
  for (const DriverType& t : types) {
    prior_sum += t.prior;
    double ps = 0.0, qs = 0.0;
    for (int n = 0; n < 4; ++n) {
      if (t.p[n] <= 0.0 || t.q[n] <= 0.0)
        throw ConfigError("mixed strategy entries must be positive");
      ps += t.p[n];
      qs += t.q[n];
    }
    if (std::abs(ps - 1.0) > 1e-9 || std::abs(qs - 1.0) > 1e-9)
      throw ConfigError("mixed strategy does not sum to 1");
  }
  if (std::abs(prior_sum - 1.0) > 1e-9)
    throw ConfigError("driver type prior does not sum to 1");
}

struct GameParams {
  GamePayoffWeights weights;
  NonCoopParams noncoop;
  std::vector<DriverType> type_prior = default_driver_types();
  bool eq23_literal = false;       // evaluate the printed sum instead of standard EU
  double decision_margin = 0.05;   // required EU advantage under low trust
  double lookahead = 1.0;          // s
  double commit_duration = 2.0;    // s a cooperative agreement binds
  double d_safe = 4.0;             // m, abort bound in the non-cooperative look-ahead
  double b_safe = 4.0;             // m/s^2, hard safety check bound
  double scan_range = 100.0;       // m
};

// Follower strategy -> constant look-ahead acceleration.
inline double follower_action_accel(FollowerStrategy s) {
  switch (s) {
    case FollowerStrategy::Accelerate: return 1.0;
    case FollowerStrategy::Keep: return 0.0;
    case FollowerStrategy::Decelerate: return -1.5;
    case FollowerStrategy::ChangeLane: return 0.0;
  }
  return 0.0;
}

// Local scene for one ego / new-follower game. Gaps are bumper-to-bumper,
// kInf when the slot is empty; lag_gap is ego rear minus follower front
// after a hypothetical insertion.
struct GameScene {
  double ego_v = 0.0;
  IdmParams ego_idm;
  double cur_leader_gap = kInf, cur_leader_dv = 0.0;
  double tgt_leader_gap = kInf, tgt_leader_dv = 0.0;
  bool has_follower = false;
  double fol_v = 0.0;
  IdmParams fol_idm;
  double lag_gap = kInf;
  double fol_cur_leader_gap = kInf, fol_cur_leader_dv = 0.0;
  bool fol_can_change = false;
  double fol_alt_leader_gap = kInf, fol_alt_leader_dv = 0.0;
  double urgency = 0.0;  // 1 at the end of the acceleration lane, 0 elsewhere
};

namespace detail {

inline double safe_idm(double v, double dv, double gap, const IdmParams& p) {
  if (gap <= 0.0) return -kEmergencyDecel;
  return idm_acceleration(v, dv, gap, p);
}

inline double ego_cell_accel(const GameScene& s, EgoStrategy e) {
  if (e == EgoStrategy::NotChangeLane)
    return safe_idm(s.ego_v, s.cur_leader_dv, s.cur_leader_gap, s.ego_idm);
  if (s.lag_gap <= 0.0 && s.has_follower) return -kEmergencyDecel;
  return safe_idm(s.ego_v, s.tgt_leader_dv, s.tgt_leader_gap, s.ego_idm);
}

inline double follower_cell_accel(const GameScene& s, FollowerStrategy f, EgoStrategy e) {
  if (!s.has_follower) return 0.0;
  double gap, dv;
  if (e == EgoStrategy::ChangeLane) {
    gap = s.lag_gap;
    dv = s.fol_v - s.ego_v;
  } else {
    gap = s.fol_cur_leader_gap;
    dv = s.fol_cur_leader_dv;
  }
  if (f == FollowerStrategy::ChangeLane) {
    if (s.fol_can_change)
      return safe_idm(s.fol_v, s.fol_alt_leader_dv, s.fol_alt_leader_gap, s.fol_idm);
    return std::min(0.0, safe_idm(s.fol_v, dv, gap, s.fol_idm));
  }
  return std::min(follower_action_accel(f), safe_idm(s.fol_v, dv, gap, s.fol_idm));
}

}  // namespace detail

// Joint payoff of one cell: efficiency, comfort, and discretionary/mandatory
// lane-change terms over a 1 s constant-action look-ahead.
inline PayoffMatrix coop_payoff_matrix(const GameScene& s, const GamePayoffWeights& w,
                                       double lookahead = 1.0, double b_safe = 4.0) {
  PayoffMatrix m;
  double a_stay = detail::ego_cell_accel(s, EgoStrategy::NotChangeLane);
  double a_go = detail::ego_cell_accel(s, EgoStrategy::ChangeLane);
  double v_stay = std::max(0.0, s.ego_v + a_stay * lookahead);
  double v_go = std::max(0.0, s.ego_v + a_go * lookahead);
  for (int fi = 0; fi < 4; ++fi) {
    for (int ei = 0; ei < 2; ++ei) {
      auto f = static_cast<FollowerStrategy>(fi);
      auto e = static_cast<EgoStrategy>(ei);
      double a_e = detail::ego_cell_accel(s, e);
      double a_f = detail::follower_cell_accel(s, f, e);
      double v_e = std::max(0.0, s.ego_v + a_e * lookahead);
      double v_f = std::max(0.0, s.fol_v + a_f * lookahead);
      double r_eff = (v_e - s.ego_v) / s.ego_idm.v_d;
      double r_comf = -std::abs(a_e);
      if (s.has_follower) {
        r_eff += (v_f - s.fol_v) / s.ego_idm.v_d;
        r_comf -= std::abs(a_f);
      }
      r_comf /= b_safe;
      bool change = e == EgoStrategy::ChangeLane;
      double r_lc = (change && v_go > v_stay) ? 1.0 : 0.0;
      double r_mlc = change ? s.urgency : 0.0;
      m.at(f, e) = w.eff * r_eff + w.comf * r_comf + w.lc * r_lc + w.mlc * r_mlc;
    }
  }
  return m;
}

// Team solution over all 8 cells ("binding agreements"). Ties resolve in a
// fixed safety-first order: ego NotChangeLane before ChangeLane, follower
// Keep, Decelerate, Accelerate, ChangeLane.
inline std::pair<FollowerStrategy, EgoStrategy> solve_cooperative(const PayoffMatrix& m) {
  constexpr EgoStrategy ego_order[2] = {EgoStrategy::NotChangeLane, EgoStrategy::ChangeLane};
  constexpr FollowerStrategy fol_order[4] = {
      FollowerStrategy::Keep, FollowerStrategy::Decelerate,
      FollowerStrategy::Accelerate, FollowerStrategy::ChangeLane};
  FollowerStrategy best_f = fol_order[0];
  EgoStrategy best_e = ego_order[0];
  double best = m.at(best_f, best_e);
  for (EgoStrategy e : ego_order) {
    for (FollowerStrategy f : fol_order) {
      if (m.at(f, e) > best) {
        best = m.at(f, e);
        best_f = f;
        best_e = e;
      }
    }
  }
  return {best_f, best_e};
}

// One cell of the non-cooperative payoff pair, from already-computed
// look-ahead accelerations and speed changes.
inline std::pair<double, double> noncoop_payoffs(double acc_ego, double dv_ego,
                                                 double acc_fol, double dv_fol,
                                                 const NonCoopParams& p,
                                                 double eps = 0.0, double delta = 0.0) {
  double P = p.alpha0 + p.alpha1 * acc_ego + p.alpha2 * dv_ego + eps;
  double Q = p.beta0 + p.beta1 * acc_fol + p.beta2 * dv_fol + delta;
  return {P, Q};
}

// Scene-based non-cooperative tables. The ego acceleration in a ChangeLane
// cell is replaced by an abort-braking response (-b_safe) when the
// follower's action closes the lag gap below d_safe within the look-ahead,
// which is what lets the type prior matter in the best response.
inline std::pair<PayoffMatrix, PayoffMatrix> noncoop_tables(const GameScene& s,
                                                            const GameParams& gp,
                                                            RngStream* noise_rng = nullptr) {
  PayoffMatrix P, Q;
  for (int fi = 0; fi < 4; ++fi) {
    for (int ei = 0; ei < 2; ++ei) {
      auto f = static_cast<FollowerStrategy>(fi);
      auto e = static_cast<EgoStrategy>(ei);
      double a_f = detail::follower_cell_accel(s, f, e);
      double a_e = detail::ego_cell_accel(s, e);
      if (e == EgoStrategy::ChangeLane && s.has_follower && f != FollowerStrategy::ChangeLane) {
        double disp_e = s.ego_v * gp.lookahead + 0.5 * a_e * gp.lookahead * gp.lookahead;
        double disp_f = s.fol_v * gp.lookahead + 0.5 * a_f * gp.lookahead * gp.lookahead;
        double lag_after = s.lag_gap + disp_e - disp_f;
        if (lag_after < gp.d_safe) a_e = -gp.b_safe;
      }
      double eps = 0.0, del = 0.0;
      if (gp.noncoop.noise == NoiseMode::SeededGumbel && noise_rng) {
        eps = noise_rng->gumbel();
        del = noise_rng->gumbel();
      }
      auto [pv, qv] = noncoop_payoffs(a_e, a_e * gp.lookahead, a_f, a_f * gp.lookahead,
                                      gp.noncoop, eps, del);
      P.at(f, e) = pv;
      Q.at(f, e) = qv;
    }
  }
  return {P, Q};
}

// Expected-utility best response over the Harsanyi type prior. Standard mode
// weighs the ego payoff by the follower's mixed strategy; the literal mode
// reproduces the printed combined sum. Ties go to NotChangeLane.
inline EgoStrategy ego_best_response(const PayoffMatrix& P, const PayoffMatrix& Q,
                                     const std::vector<DriverType>& types,
                                     bool literal, double* eu_out = nullptr) {
  validate_types(types);
  double eu[2] = {0.0, 0.0};
  for (int ei = 0; ei < 2; ++ei) {
    auto e = static_cast<EgoStrategy>(ei);
    for (const DriverType& t : types) {
      double acc = 0.0;
      for (int n = 0; n < 4; ++n) {
        auto f = static_cast<FollowerStrategy>(n);
        double prob = (e == EgoStrategy::ChangeLane) ? t.p[n] : t.q[n];
        if (literal) {
          acc += P.at(f, e) + prob * Q.at(f, e);
        } else {
          acc += prob * P.at(f, e);
        }
      }
      eu[ei] += t.prior * acc;
    }
  }
  if (eu_out) {
    eu_out[0] = eu[0];
    eu_out[1] = eu[1];
  }
  double cl = eu[static_cast<int>(EgoStrategy::ChangeLane)];
  double ncl = eu[static_cast<int>(EgoStrategy::NotChangeLane)];
  return cl > ncl ? EgoStrategy::ChangeLane : EgoStrategy::NotChangeLane;
}

struct Commitment {
  int vehicle_id = -1;
  FollowerStrategy action = FollowerStrategy::Keep;
  double accel = 0.0;
  double expires_at = 0.0;  // simulation time
};

struct GameOutcome {
  bool change = false;
  std::optional<Commitment> commitment;
  // audit
  bool played = false;
  GameType type = GameType::NonCooperative;
  int counterpart = -1;
  double trust = -1.0;
  EgoStrategy ego_cell = EgoStrategy::NotChangeLane;
  FollowerStrategy fol_cell = FollowerStrategy::Keep;
  double eu_change = 0.0, eu_stay = 0.0;
  bool safety_vetoed = false;
};

// Builds the dyadic scene for ego against the prospective new follower in
// target_lane. mainline_lanes bounds the follower's escape lane.
inline GameScene build_game_scene(const WorldView& view, const VehicleState& ego,
                                  int target_lane, int mainline_lanes, double urgency) {
  GameScene s;
  s.ego_v = ego.speed;
  s.ego_idm = ego.idm;
  s.urgency = urgency;
  if (const VehicleState* l = view.leader_of(ego)) {
    s.cur_leader_gap = bumper_gap(*l, ego);
    s.cur_leader_dv = ego.speed - l->speed;
  }
  if (const VehicleState* l = view.leader_in_lane(target_lane, ego.position, ego.id)) {
    s.tgt_leader_gap = bumper_gap(*l, ego);
    s.tgt_leader_dv = ego.speed - l->speed;
  }
  const VehicleState* j = view.follower_in_lane(target_lane, ego.position, ego.id);
  if (j) {
    s.has_follower = true;
    s.fol_v = j->speed;
    s.fol_idm = j->idm;
    s.lag_gap = ego.rear() - j->position;
    if (const VehicleState* jl = view.leader_of(*j)) {
      s.fol_cur_leader_gap = bumper_gap(*jl, *j);
      s.fol_cur_leader_dv = j->speed - jl->speed;
    }
    int alt = (target_lane + 1 < mainline_lanes && target_lane + 1 != ego.lane)
                  ? target_lane + 1
                  : target_lane - 1;
    if (alt >= 0 && alt < mainline_lanes && alt != ego.lane && j->lane_change_cooldown <= 0.0) {
      s.fol_can_change = true;
      if (const VehicleState* al = view.leader_in_lane(alt, j->position, j->id)) {
        s.fol_alt_leader_gap = bumper_gap(*al, *j);
        s.fol_alt_leader_dv = j->speed - al->speed;
      }
    }
  }
  return s;
}

// Eq.4-style hard check on the prospective new follower, plus physical
// (positive bumper gap) feasibility on both sides and the ego's own braking
// response toward the new leader.
inline bool lane_change_feasible(const WorldView& view, const VehicleState& ego,
                                 int target_lane, double b_safe) {
  const VehicleState* leader = view.leader_in_lane(target_lane, ego.position, ego.id);
  if (leader) {
    double gap = bumper_gap(*leader, ego);
    if (gap <= 0.0) return false;
    double own = idm_acceleration(ego.speed, ego.speed - leader->speed, gap, ego.idm);
    if (own <= -b_safe) return false;
  }
  const VehicleState* follower = view.follower_in_lane(target_lane, ego.position, ego.id);
  if (follower) {
    double gap = ego.rear() - follower->position;
    if (gap <= 0.0) return false;
    double response = idm_acceleration(follower->speed, follower->speed - ego.speed, gap,
                                       follower->idm);
    if (response <= -b_safe) return false;
  }
  return true;
}

// Trust-gated lane-change decision for one CAV toward one candidate lane.
// `counterpart_is_cav` selects the cooperative branch when the gate allows;
// `trust` may be null in the ablation modes without a trust layer, in which
// case CAV counterparts are treated as cooperative and HVs as type-prior
// opponents. All failure paths resolve to keeping the lane.
inline GameOutcome decide_lane_change(const WorldView& view, const VehicleState& ego,
                                      int target_lane, int mainline_lanes, double urgency,
                                      TrustMatrix* trust, const GameParams& gp,
                                      RngStream* noise_rng = nullptr) {
  GameOutcome out;
  const VehicleState* j = view.follower_in_lane(target_lane, ego.position, ego.id);
  bool follower_in_scan = j && std::abs(j->position - ego.position) <= gp.scan_range;

  if (!follower_in_scan) {
    out.change = lane_change_feasible(view, ego, target_lane, gp.b_safe);
    out.safety_vetoed = !out.change;
    return out;
  }

  out.played = true;
  out.counterpart = j->id;
  GameScene scene = build_game_scene(view, ego, target_lane, mainline_lanes, urgency);

  double tau = trust ? trust->params().tau : 0.5;
  double t_ej = trust ? trust->get_or_init(ego.id, j->id) : (j->cls == VehicleClass::CAV ? 1.0 : 0.0);
  out.trust = trust ? t_ej : -1.0;
  GameType gate = game_type(t_ej, tau);
  out.type = gate;

  bool coop = gate == GameType::Cooperative && j->cls == VehicleClass::CAV;
  if (coop) {
    PayoffMatrix m = coop_payoff_matrix(scene, gp.weights, gp.lookahead, gp.b_safe);
    auto [sf, se] = solve_cooperative(m);
    out.fol_cell = sf;
    out.ego_cell = se;
    if (sf != FollowerStrategy::ChangeLane) {
      out.commitment = Commitment{j->id, sf, follower_action_accel(sf), 0.0};
    }
    if (se == EgoStrategy::ChangeLane) {
      bool safe = lane_change_feasible(view, ego, target_lane, gp.b_safe);
      out.change = safe;
      out.safety_vetoed = !safe;
    }
    return out;
  }

  std::vector<DriverType> types;
  if (j->cls == VehicleClass::HV) {
    types = gp.type_prior;
  } else {
    // distrusted CAV: single inferred aggressive type
    DriverType t = default_driver_types()[0];
    t.prior = 1.0;
    types = {t};
  }
  auto [P, Q] = noncoop_tables(scene, gp, noise_rng);
  double eu[2];
  EgoStrategy best = ego_best_response(P, Q, types, gp.eq23_literal, eu);
  out.eu_change = eu[static_cast<int>(EgoStrategy::ChangeLane)];
  out.eu_stay = eu[static_cast<int>(EgoStrategy::NotChangeLane)];
  out.ego_cell = best;
  if (best == EgoStrategy::ChangeLane &&
      out.eu_change > out.eu_stay + gp.decision_margin) {
    bool safe = lane_change_feasible(view, ego, target_lane, gp.b_safe);
    out.change = safe;
    out.safety_vetoed = !safe;
  }
  return out;
}

}  // namespace mergesim
