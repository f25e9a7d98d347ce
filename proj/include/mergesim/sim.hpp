#pragma once

#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mergesim/config.hpp"
#include "mergesim/dynamics.hpp"
#include "mergesim/encoder.hpp"
#include "mergesim/game.hpp"
#include "mergesim/learner.hpp"
#include "mergesim/metrics.hpp"
#include "mergesim/reward.hpp"
#include "mergesim/rng.hpp"
#include "mergesim/scenario.hpp"
#include "mergesim/trust.hpp"
#include "mergesim/types.hpp"

namespace mergesim {

struct FlowSeriesPoint {
  double interval_end = 0.0;
  double bottleneck = 0.0;  // veh/h, mainline lanes at the first post-merge detector
  double ramp_in = 0.0;     // veh/h of ramp arrivals
  double mainline = 0.0;    // veh/h, mainline lanes at the corridor-end detector
};

struct RunSummary {
  EpisodeMetrics metrics;
  std::vector<FlowSeriesPoint> flows;
  std::optional<RecoveryResult> recovery;
  long long steps = 0;
  double duration = 0.0;
  double warmup = 0.0;
  double demand = 0.0;
  double penetration = 0.0;
  std::string controller;
  std::uint64_t seed = 0;
  double mean_cav_reward = 0.0;  // post-warmup mean of the blended reward
};

// One run of the merging corridor. Deterministic given its SimConfig: all
// randomness flows through per-entity seeded streams, vehicles are processed
// in id order, and state mutation happens in one serial commit per step.
class Simulation {
 public:
  explicit Simulation(SimConfig cfg)
      : cfg_(std::move(cfg)), net_(build_network(cfg_.scenario)) {
    cfg_.propagate_shared();
    trust_ = TrustMatrix(cfg_.trust);
    steps_per_decision_ = std::max(1, static_cast<int>(cfg_.decision_period / cfg_.scenario.dt + 0.5));
    for (int lane = 0; lane < net_.mainline_lanes; ++lane) {
      mainline_spawners_.emplace_back(cfg_.scenario.seed, "spawn/main" + std::to_string(lane));
    }
    ramp_spawner_ = LaneSpawner(cfg_.scenario.seed, "spawn/ramp");
    obs_layout_.mainline_lanes = net_.mainline_lanes;
    obs_layout_.scan_range = cfg_.scan_range;
    obs_layout_.group_window = cfg_.group_window;
    obs_layout_.include_trust = cfg_.include_trust_obs;
    detector_interval_end_ = cfg_.detector_interval;
  }

  const SimConfig& config() const { return cfg_; }
  const RoadNetwork& network() const { return net_; }
  const std::vector<VehicleState>& vehicles() const { return vehicles_; }
  TrustMatrix& trust() { return trust_; }
  double time() const { return step_index_ * cfg_.scenario.dt; }
  long long step_index() const { return step_index_; }
  int spawned_count() const { return spawned_; }
  int despawned_count() const { return exited_ + removed_collided_; }
  const std::vector<DetectorRecord>& detector_records() const { return detector_records_; }
  const ObservationLayout& observation_layout() const { return obs_layout_; }

  void set_policy(const LstmParams* encoder, const PolicyParams* policy, bool stochastic) {
    policy_encoder_ = encoder;
    policy_head_ = policy;
    policy_stochastic_ = stochastic;
  }

  void set_transition_hook(std::function<void(int, const Transition&)> hook) {
    transition_hook_ = std::move(hook);
  }

  void set_trace_streams(std::ostream* trajectory, std::ostream* trust_trace,
                         std::ostream* reward_trace, std::ostream* game_trace) {
    trace_traj_ = trajectory;
    trace_trust_ = trust_trace;
    trace_reward_ = reward_trace;
    trace_game_ = game_trace;
    for (std::ostream* os : {trace_traj_, trace_trust_, trace_reward_, trace_game_}) {
      if (os) os->precision(17);
    }
    if (trace_traj_) *trace_traj_ << "t,id,class,lane,x,v,a\n";
    if (trace_trust_) *trace_trust_ << "t,observer,observed,delta,trust\n";
    if (trace_reward_) *trace_reward_ << "t,id,safety,comfort,efficiency,lambda,coop,total\n";
    if (trace_game_) *trace_game_ << "t,ego,counterpart,type,trust,ego_cell,fol_cell,eu_change,eu_stay,changed,vetoed\n";
  }

  // Test hook: directly adds a vehicle (id assigned when negative).
  int inject_vehicle(VehicleState v) {
    if (v.id < 0) v.id = next_id_++;
    else next_id_ = std::max(next_id_, v.id + 1);
    vehicles_.push_back(v);
    ++spawned_;
    return v.id;
  }

  long long total_steps() const {
    double total = cfg_.scenario.warmup + cfg_.scenario.duration;
    return static_cast<long long>(total / cfg_.scenario.dt + 0.5);
  }

  void run() {
    long long steps = total_steps();
    for (long long i = 0; i < steps; ++i) step();
    finish();
  }

  // Closes open merge attempts, terminal transitions, and the PET log.
  // Called by run(); manual step loops call it once at the end.
  void finish() { finalize(); }

  void step() {
    const double dt = cfg_.scenario.dt;
    const double t = time();

    remove_collided();
    if (cfg_.scenario.spawning_enabled) spawn(t, dt);

    WorldView view(vehicles_);
    if (learning_active()) sample_policy_actions(view);
    decide_lane_changes(view, t);

    WorldView decided(vehicles_);
    std::vector<double> prev_pos(vehicles_.size());
    for (std::size_t i = 0; i < vehicles_.size(); ++i) prev_pos[i] = vehicles_[i].position;
    std::vector<double> accels(vehicles_.size());
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      accels[i] = longitudinal_accel(vehicles_[i], decided, t);
    }
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      vehicles_[i] = step_kinematics(vehicles_[i], accels[i], dt);
      if (vehicles_[i].lane == kRampLane && vehicles_[i].position > net_.accel_lane_end()) {
        vehicles_[i].position = net_.accel_lane_end();  // physical end of the ramp
        vehicles_[i].speed = 0.0;
      }
    }

    ++step_index_;
    const double t_next = time();
    const bool measured = t_next > cfg_.scenario.warmup;

    WorldView post(vehicles_);
    record_detector_crossings(prev_pos, t_next);
    flush_detector_interval(t_next);
    handle_collisions(post, t_next, measured);
    track_merges(post, t_next, measured);
    if (step_index_ % steps_per_decision_ == 0) {
      update_trust(post, t_next);
      prev_second_view_ = post;
    }
    update_rewards(post, t_next, measured, dt);
    handle_exits(t_next, measured);
    expire_commitments(t_next);
  }

  RunSummary summarize() const {
    RunSummary s;
    double throughput_sum = 0.0;
    int throughput_n = 0;
    for (const FlowSeriesPoint& p : flows_) {
      if (p.interval_end > cfg_.scenario.warmup) {
        throughput_sum += p.bottleneck;
        ++throughput_n;
      }
    }
    std::optional<double> throughput;
    if (throughput_n > 0) throughput = throughput_sum / throughput_n;
    s.metrics = acc_.finish(throughput);
    s.flows = flows_;
    s.steps = step_index_;
    s.duration = cfg_.scenario.duration;
    s.warmup = cfg_.scenario.warmup;
    s.demand = cfg_.scenario.demand_level;
    s.penetration = cfg_.scenario.cav_penetration;
    s.controller = to_string(cfg_.scenario.controller);
    s.seed = cfg_.scenario.seed;
    s.mean_cav_reward = reward_steps_ > 0 ? reward_sum_ / reward_steps_ : 0.0;
    if (cfg_.scenario.penetration_shift && !flows_.empty()) {
      std::vector<double> series;
      series.reserve(flows_.size());
      for (const FlowSeriesPoint& p : flows_) series.push_back(p.mainline);
      int w = std::max(1, static_cast<int>(cfg_.recovery_smooth_window / cfg_.detector_interval + 0.5));
      std::vector<double> smooth = moving_average(series, w);
      s.recovery = recovery_time(smooth, flows_.front().interval_end, cfg_.detector_interval,
                                 cfg_.scenario.penetration_shift->time,
                                 cfg_.recovery_baseline_window);
    }
    return s;
  }

 private:
  struct AgentRuntime {
    ObservationHistory history{8};
    RngStream policy_stream;
    int lat = 0;
    double a_long = 0.0;
    bool has_action = false;
    std::optional<Transition> pending;
  };

  struct MergeAttempt {
    double start = 0.0;
    bool merged = false;
    bool conflicted = false;
    bool counted = false;  // attempt started inside the measured window
    double min_ttc = kInf;
  };

  bool learning_active() const {
    return policy_encoder_ != nullptr || transition_hook_ != nullptr;
  }

  bool mode_uses_game() const {
    ControllerMode m = cfg_.scenario.controller;
    return m == ControllerMode::GameOnly || m == ControllerMode::LearnGame ||
           m == ControllerMode::TrustFull;
  }

  bool mode_uses_trust() const { return cfg_.scenario.controller == ControllerMode::TrustFull; }

  double current_penetration(double t) const {
    const auto& shift = cfg_.scenario.penetration_shift;
    if (shift) return t >= shift->time ? shift->after : shift->before;
    return cfg_.scenario.cav_penetration;
  }

  void remove_collided() {
    for (auto it = vehicles_.begin(); it != vehicles_.end();) {
      if (it->collided) {
        despawn_bookkeeping(it->id, /*exited=*/false);
        ++removed_collided_;
        it = vehicles_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void spawn(double t, double dt) {
    auto [ml_rate, ramp_rate] = demand_rate(cfg_.scenario.profile, std::min(t, cfg_.scenario.warmup + cfg_.scenario.duration),
                                            cfg_.scenario.warmup + cfg_.scenario.duration);
    double pen = current_penetration(t);
    WorldView view(vehicles_);
    for (int lane = 0; lane < net_.mainline_lanes; ++lane) {
      double per_lane = ml_rate / net_.mainline_lanes;
      spawn_on_lane(mainline_spawners_[lane], per_lane, lane, 0.0,
                    net_.mainline_speed_limit, Origin::Mainline, pen, view, t, dt);
    }
    int ramp_spawned = spawn_on_lane(ramp_spawner_, ramp_rate, kRampLane, net_.ramp_spawn_position(),
                                     net_.ramp_speed_advisory, Origin::Ramp, pen, view, t, dt);
    ramp_arrivals_interval_ += ramp_spawned;
  }

  int spawn_on_lane(LaneSpawner& spawner, double rate, int lane, double entry_pos,
                    double speed_limit, Origin origin, double penetration,
                    const WorldView& view, double t, double dt) {
    const VehicleState* leader = view.leader_in_lane(lane, entry_pos - 1e-9);
    bool blocked = false;
    std::optional<double> leader_gap, leader_speed;
    if (leader) {
      double gap = leader->position - entry_pos;
      blocked = gap < cfg_.idm.s0 + leader->length;
      leader_gap = leader->rear() - entry_pos;
      leader_speed = leader->speed;
    }
    int n = spawner.poll(rate, dt, blocked);
    for (int k = 0; k < n; ++k) {
      VehicleState v;
      v.id = next_id_++;
      v.cls = spawner.draw_is_cav(penetration) ? VehicleClass::CAV : VehicleClass::HV;
      v.lane = lane;
      v.position = entry_pos;
      v.idm = cfg_.idm;
      v.mobil = cfg_.mobil;
      v.origin = origin;
      v.spawn_time = t;
      if (v.cls == VehicleClass::HV) {
        v.style = cfg_.scenario.driver_style_variation ? spawner.draw_style() : DriverStyle::Normal;
        apply_driver_style(v);
      } else {
        spawner.draw_style();  // keep arrival/trait draw alignment across penetrations
      }
      v.speed = safe_entry_speed(std::min(speed_limit, v.idm.v_d), leader_gap, leader_speed, v.idm);
      vehicles_.push_back(v);
      ++spawned_;
      acc_.note_spawn();
    }
    return n;
  }

  // --- lateral decisions -------------------------------------------------

  void sample_policy_actions(const WorldView& view) {
    if (!policy_encoder_ || !policy_head_) {
      // rollouts without a policy still maintain windows for the hook
      for (const VehicleState& v : vehicles_) {
        if (v.cls != VehicleClass::CAV) continue;
        AgentRuntime& rt = agent_runtime(v.id);
        rt.history.push(normalized_observation(view, v));
      }
      return;
    }
    for (const VehicleState& v : vehicles_) {
      if (v.cls != VehicleClass::CAV) continue;
      AgentRuntime& rt = agent_runtime(v.id);
      rt.history.push(normalized_observation(view, v));
      Vec h = encode_history(*policy_encoder_, rt.history.padded());
      PolicyOut po = policy_forward(*policy_head_, h);
      if (policy_stochastic_) {
        double u = rt.policy_stream.u01();
        double acc_p = 0.0;
        rt.lat = kLateralActions - 1;
        for (int l = 0; l < kLateralActions; ++l) {
          acc_p += po.probs[l];
          if (u < acc_p) {
            rt.lat = l;
            break;
          }
        }
        SquashedSample s = squashed_gaussian(po.mu, po.log_std, rt.policy_stream.normal(),
                                             cfg_.learner.a_max);
        rt.a_long = s.a;
      } else {
        int argmax = 0;
        po.probs.maxCoeff(&argmax);
        rt.lat = argmax;
        rt.a_long = po.mean_accel;
      }
      rt.has_action = true;
    }
  }

  Vec normalized_observation(const WorldView& view, const VehicleState& v) {
    double trust_mean = 0.0;
    if (obs_layout_.include_trust && mode_uses_trust()) {
      auto neighbors = neighbors_in_scan(view, v);
      auto mean = trust_.weighted_mean(v.id, neighbors);
      trust_mean = mean.value_or(cfg_.trust.initial);
    }
    return normalize_observation(observe(view, v.id, obs_layout_, trust_mean), obs_layout_,
                                 cfg_.idm.v_d);
  }

  std::vector<int> neighbors_in_scan(const WorldView& view, const VehicleState& v) const {
    std::vector<int> out;
    for (const VehicleState& o : view.vehicles()) {
      if (o.id == v.id) continue;
      if (std::abs(o.position - v.position) <= cfg_.scan_range) out.push_back(o.id);
    }
    return out;
  }

  struct PendingChange {
    int id;
    int target;
    double b_limit;  // safety bound to re-verify at commit time
  };

  void decide_lane_changes(const WorldView& view, double t) {
    std::vector<PendingChange> pending;
    for (const VehicleState& v : vehicles_) {
      if (v.collided || v.lane_change_cooldown > 0.0) continue;
      if ((step_index_ + v.id) % steps_per_decision_ != 0) continue;
      if (commitments_.count(v.id)) continue;  // bound by a cooperative agreement

      bool rule_vehicle = v.cls == VehicleClass::HV ||
                          cfg_.scenario.controller == ControllerMode::Rule;
      if (rule_vehicle) {
        rule_lateral(view, v, pending);
      } else {
        cav_lateral(view, v, t, pending);
      }
    }
    commit_lane_changes(pending, t);
  }

  void rule_lateral(const WorldView& view, const VehicleState& v,
                    std::vector<PendingChange>& pending) {
    if (v.lane == kRampLane) {
      if (!net_.in_accel_lane(v)) return;
      double u = net_.merge_urgency(v);
      double b_eff = v.mobil.b_safe * (1.0 + cfg_.urgency_relax * u);
      if (rule_merge_acceptable(view, v, 0, b_eff)) {
        pending.push_back({v.id, 0, b_eff});
      }
      return;
    }
    // discretionary MOBIL between mainline lanes
    double best_gain = -kInf;
    int best_target = -1;
    for (int target : net_.adjacent_lanes(v.lane, v.position)) {
      auto gain = mobil_gain(view, v, target);
      if (!gain) continue;
      auto [ego_gain, f_new, f_old, nf_after] = *gain;
      if (mobil_decision(ego_gain, f_new, f_old, nf_after, v.mobil) == MobilDecision::Change &&
          ego_gain > best_gain) {
        best_gain = ego_gain;
        best_target = target;
      }
    }
    if (best_target >= 0) pending.push_back({v.id, best_target, v.mobil.b_safe});
  }

  // Ego and new-follower deceleration bounds with the urgency-relaxed limit.
  bool rule_merge_acceptable(const WorldView& view, const VehicleState& v, int target,
                             double b_eff) const {
    const VehicleState* leader = view.leader_in_lane(target, v.position, v.id);
    const VehicleState* follower = view.follower_in_lane(target, v.position, v.id);
    if (leader) {
      double gap = bumper_gap(*leader, v);
      if (gap <= 0.0) return false;
      if (idm_acceleration(v.speed, v.speed - leader->speed, gap, v.idm) <= -b_eff) return false;
    }
    if (follower) {
      double gap = v.rear() - follower->position;
      if (gap <= 0.0) return false;
      if (idm_acceleration(follower->speed, follower->speed - v.speed, gap, follower->idm) <= -b_eff)
        return false;
    }
    return true;
  }

  // (ego_gain, follower_new_change, follower_old_change, new_follower_after)
  std::optional<std::array<double, 4>> mobil_gain(const WorldView& view, const VehicleState& v,
                                                  int target) const {
    const VehicleState* tgt_leader = view.leader_in_lane(target, v.position, v.id);
    const VehicleState* tgt_follower = view.follower_in_lane(target, v.position, v.id);
    if (tgt_leader && bumper_gap(*tgt_leader, v) <= 0.0) return std::nullopt;
    if (tgt_follower && v.rear() - tgt_follower->position <= 0.0) return std::nullopt;

    double a_now = accel_toward(view.leader_of(v), v);
    double a_tgt = accel_toward(tgt_leader, v);
    double ego_gain = a_tgt - a_now;

    double f_new = 0.0, nf_after = 0.0;
    if (tgt_follower) {
      double before = accel_toward(view.leader_of(*tgt_follower), *tgt_follower);
      nf_after = idm_acceleration(tgt_follower->speed, tgt_follower->speed - v.speed,
                                  std::max(v.rear() - tgt_follower->position, 1e-6),
                                  tgt_follower->idm);
      f_new = nf_after - before;
    }
    double f_old = 0.0;
    if (const VehicleState* of = view.follower_of(v)) {
      double before = accel_toward(&v, *of);
      double after = accel_toward(view.leader_of(v), *of);
      f_old = after - before;
    }
    return std::array<double, 4>{ego_gain, f_new, f_old, nf_after};
  }

  double accel_toward(const VehicleState* leader, const VehicleState& follower) const {
    if (!leader) {
      IdmParams p = follower.idm;
      p.v_d = std::min(p.v_d, net_.lane_speed_limit(follower.lane));
      return idm_acceleration(follower.speed, 0.0, kInf, p);
    }
    double gap = leader->rear() - follower.position;
    if (gap <= 0.0) return -kEmergencyDecel;
    return idm_acceleration(follower.speed, follower.speed - leader->speed, gap, follower.idm);
  }

  void cav_lateral(const WorldView& view, const VehicleState& v, double t,
                   std::vector<PendingChange>& pending) {
    ControllerMode mode = cfg_.scenario.controller;
    std::optional<int> target;

    // courtesy gap creation: vacate lane 0 for a trusted merger when the
    // target lane is genuinely free and the move disturbs nobody
    if (mode_uses_trust() && v.lane == 0 && net_.mainline_lanes > 1) {
      if (const VehicleState* merger = merger_to_receive(v, view)) {
        double trust = trust_.get_or_init(v.id, merger->id);
        if (game_type(trust, cfg_.trust.tau) == GameType::Cooperative) {
          double a_now = accel_toward(view.leader_of(v), v);
          double a_left = accel_toward(view.leader_in_lane(1, v.position, v.id), v);
          const VehicleState* lf = view.follower_in_lane(1, v.position, v.id);
          double lf_after = 0.0;
          if (lf) {
            double gap = v.rear() - lf->position;
            lf_after = gap > 0.0 ? idm_acceleration(lf->speed, lf->speed - v.speed, gap, lf->idm)
                                 : -kEmergencyDecel;
          }
          if (a_left > a_now - 0.1 && a_left >= -0.3 && lf_after > -1.0 &&
              lane_change_feasible(view, v, 1, cfg_.mobil.b_safe)) {
            pending.push_back({v.id, 1, cfg_.mobil.b_safe});
            return;
          }
        }
      }
    }

    if (v.lane == kRampLane) {
      if (net_.in_accel_lane(v)) target = 0;  // mandatory merge intent
    } else if (policy_active() && agents_.count(v.id) && agents_.at(v.id).has_action) {
      int lat = agents_.at(v.id).lat;
      if (lat == 1 && v.lane + 1 < net_.mainline_lanes) target = v.lane + 1;
      if (lat == 2 && v.lane - 1 >= 0) target = v.lane - 1;
    } else {
      // IDM-gain screening for a discretionary candidate
      double best = cfg_.mobil.delta_a_th;
      for (int cand : net_.adjacent_lanes(v.lane, v.position)) {
        const VehicleState* tl = view.leader_in_lane(cand, v.position, v.id);
        if (tl && bumper_gap(*tl, v) <= 0.0) continue;
        double gain = accel_toward(tl, v) - accel_toward(view.leader_of(v), v);
        if (gain > best) {
          best = gain;
          target = cand;
        }
      }
    }

    if (!target) {
      intents_.erase(v.id);
      return;
    }
    intents_[v.id] = *target;

    if (mode == ControllerMode::LearnOnly) {
      if (lane_change_feasible(view, v, *target, cfg_.mobil.b_safe)) {
        pending.push_back({v.id, *target, cfg_.mobil.b_safe});
      }
      return;
    }

    // game arbitration (game_only, learn_game, trust_full)
    TrustMatrix* trust = mode_uses_trust() ? &trust_ : nullptr;
    RngStream noise(cfg_.scenario.seed,
                    "game/" + std::to_string(v.id) + "/" + std::to_string(step_index_));
    GameOutcome out = decide_lane_change(view, v, *target, net_.mainline_lanes,
                                         net_.merge_urgency(v), trust, cfg_.game, &noise);
    if (out.commitment) {
      Commitment c = *out.commitment;
      c.expires_at = t + cfg_.game.commit_duration;
      commitments_[c.vehicle_id] = c;
    }
    if (trace_game_ && out.played) {
      *trace_game_ << t << ',' << v.id << ',' << out.counterpart << ','
                   << (out.type == GameType::Cooperative ? "coop" : "noncoop") << ','
                   << out.trust << ',' << to_string(out.ego_cell) << ','
                   << to_string(out.fol_cell) << ',' << out.eu_change << ',' << out.eu_stay
                   << ',' << (out.change ? 1 : 0) << ',' << (out.safety_vetoed ? 1 : 0) << '\n';
    }
    if (out.change) pending.push_back({v.id, *target, cfg_.game.b_safe});
  }

  bool policy_active() const { return policy_encoder_ != nullptr && policy_head_ != nullptr; }

  void commit_lane_changes(const std::vector<PendingChange>& pending, double t) {
    // id order gives the deterministic winner of a contested gap
    std::vector<PendingChange> sorted = pending;
    std::sort(sorted.begin(), sorted.end(),
              [](const PendingChange& a, const PendingChange& b) { return a.id < b.id; });
    for (const PendingChange& pc : sorted) {
      WorldView view(vehicles_);
      const VehicleState* v = view.find(pc.id);
      if (!v || v->collided) continue;
      const VehicleState* leader = view.leader_in_lane(pc.target, v->position, v->id);
      const VehicleState* follower = view.follower_in_lane(pc.target, v->position, v->id);
      if (leader && bumper_gap(*leader, *v) <= 0.0) continue;
      if (follower) {
        double gap = v->rear() - follower->position;
        if (gap <= 0.0) continue;
        double response =
            idm_acceleration(follower->speed, follower->speed - v->speed, gap, follower->idm);
        if (response <= -pc.b_limit) continue;
      }
      for (VehicleState& w : vehicles_) {
        if (w.id != pc.id) continue;
        bool was_ramp = w.lane == kRampLane;
        w.lane = pc.target;
        w.lane_change_cooldown = cfg_.lane_change_cooldown;
        intents_.erase(w.id);
        if (was_ramp) {
          auto it = attempts_.find(w.id);
          if (it != attempts_.end() && !it->second.merged) {
            it->second.merged = true;
            if (it->second.counted) acc_.add_completed_merge();
          }
          // post-encroachment at the insertion point: merger rear clears it
          // at commit, the new follower's front reaches it lag_gap/v later
          if (follower && t > cfg_.scenario.warmup) {
            double lag = w.rear() - follower->position;
            if (follower->speed > 0.0) acc_.note_pet(lag / follower->speed);
          }
        }
        break;
      }
    }
  }

  // --- longitudinal ------------------------------------------------------

  double longitudinal_accel(const VehicleState& v, const WorldView& view, double t) {
    IdmParams p = v.idm;
    p.v_d = std::min(p.v_d, net_.lane_speed_limit(v.lane));

    const VehicleState* leader = view.leader_of(v);
    double a;
    if (leader) {
      double gap = bumper_gap(*leader, v);
      if (gap <= 0.0) return -kEmergencyDecel;
      a = idm_acceleration(v.speed, v.speed - leader->speed, gap, p);
    } else {
      a = idm_acceleration(v.speed, 0.0, kInf, p);
    }

    if (v.lane == kRampLane) {
      double wall_gap = net_.accel_lane_end() - v.position;
      if (wall_gap <= 0.0) return -kEmergencyDecel;
      a = std::min(a, idm_acceleration(v.speed, v.speed, wall_gap, p));
    }

    if (v.cls == VehicleClass::HV && v.lane == 0) {
      a = std::min(a, hv_yield_accel(v, view, p));
    }

    if (v.cls == VehicleClass::CAV) {
      if (mode_uses_trust() && v.lane == 0) {
        a = std::min(a, cav_yield_accel(v, view, p));
      }
      auto it = commitments_.find(v.id);
      if (it != commitments_.end() && t < it->second.expires_at) {
        a = std::min(it->second.accel, a);
      } else if (policy_active() && agents_.count(v.id) && agents_.at(v.id).has_action) {
        a = std::max(std::min(agents_.at(v.id).a_long, a), -kEmergencyDecel);
      }
    }
    return a;
  }

  // Courtesy yielding toward accel-lane vehicles, by driver style: cautious
  // drivers always yield, normal ones yield to a merger keeping pace,
  // aggressive ones never do.
  double hv_yield_accel(const VehicleState& v, const WorldView& view, const IdmParams& p) const {
    if (v.style == DriverStyle::Aggressive) return kInf;
    if (v.position < net_.merge_zone_start - cfg_.hv_yield_range ||
        v.position > net_.accel_lane_end()) {
      return kInf;
    }
    const VehicleState* best = nullptr;
    for (const VehicleState& r : view.vehicles()) {
      if (r.lane != kRampLane || !net_.in_accel_lane(r)) continue;
      double ahead = r.rear() - v.position;
      if (ahead <= 0.0 || ahead > cfg_.hv_yield_range) continue;
      if (!best || r.position < best->position) best = &r;
    }
    if (!best) return kInf;
    if (v.style == DriverStyle::Normal && best->speed < v.speed - 3.0) return kInf;
    double gap = best->rear() - v.position;
    return idm_acceleration(v.speed, v.speed - best->speed, gap, p);
  }

  // The merger this vehicle would become the new follower of, if any: the
  // nearest accel-lane vehicle ahead with no other lane-0 vehicle between.
  const VehicleState* merger_to_receive(const VehicleState& v, const WorldView& view) const {
    if (v.position < net_.merge_zone_start - cfg_.hv_yield_range ||
        v.position > net_.accel_lane_end()) {
      return nullptr;
    }
    const VehicleState* best = nullptr;
    for (const VehicleState& r : view.vehicles()) {
      if (r.lane != kRampLane || !net_.in_accel_lane(r)) continue;
      double ahead = r.rear() - v.position;
      if (ahead <= 0.0 || ahead > cfg_.hv_yield_range) continue;
      if (!best || r.position < best->position) best = &r;
    }
    if (!best) return nullptr;
    const VehicleState* fol = view.follower_in_lane(0, best->position, best->id);
    if (!fol || fol->id != v.id) return nullptr;
    return best;
  }

  // Trust-gated lane-gap creation: a CAV approaching the merge zone gently
  // matches a trusted merger's speed so the cut-in happens without a braking
  // transient. Speed matching carries no gap feedback, so it cannot limit-
  // cycle. Distrusted mergers get no slack (defensive lane-keeping).
  double cav_yield_accel(const VehicleState& v, const WorldView& view, const IdmParams& p) {
    const VehicleState* best = merger_to_receive(v, view);
    if (!best) return kInf;
    if (std::abs(best->position - v.position) > cfg_.scan_range) return kInf;
    double trust = trust_.get_or_init(v.id, best->id);
    if (game_type(trust, cfg_.trust.tau) != GameType::Cooperative) return kInf;
    if (v.speed <= best->speed) return kInf;
    // no slack needed if the cut-in would already be comfortable
    double gap = best->rear() - v.position;
    if (gap > 0.0 &&
        idm_acceleration(v.speed, v.speed - best->speed, gap, p) > -1.0) {
      return kInf;
    }
    return std::max((best->speed - v.speed) / 2.0, -0.8);
  }

  // --- post-step bookkeeping ----------------------------------------------

  void record_detector_crossings(const std::vector<double>& prev_pos, double t) {
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      const VehicleState& v = vehicles_[i];
      if (v.lane == kRampLane) continue;
      for (std::size_t d = 0; d < net_.detector_positions.size(); ++d) {
        double pos = net_.detector_positions[d];
        if (prev_pos[i] < pos && v.position >= pos) {
          crossings_[{v.lane, static_cast<int>(d)}].push_back({t, v.speed, v.length});
        }
      }
    }
  }

  void flush_detector_interval(double t) {
    if (t + 1e-9 < detector_interval_end_) return;
    FlowSeriesPoint flow;
    flow.interval_end = detector_interval_end_;
    int bottleneck = bottleneck_detector_index();
    int corridor_end = static_cast<int>(net_.detector_positions.size()) - 1;
    for (int lane = 0; lane < net_.mainline_lanes; ++lane) {
      for (std::size_t d = 0; d < net_.detector_positions.size(); ++d) {
        auto key = std::make_pair(lane, static_cast<int>(d));
        auto it = crossings_.find(key);
        std::vector<DetectorCrossing> empty;
        const auto& xs = it == crossings_.end() ? empty : it->second;
        DetectorRecord rec = detector_aggregate(xs, cfg_.detector_interval, detector_interval_end_,
                                                net_.detector_positions[d], lane);
        detector_records_.push_back(rec);
        if (static_cast<int>(d) == bottleneck) flow.bottleneck += rec.flow;
        if (static_cast<int>(d) == corridor_end) flow.mainline += rec.flow;
      }
    }
    flow.ramp_in = ramp_arrivals_interval_ * 3600.0 / cfg_.detector_interval;
    ramp_arrivals_interval_ = 0;
    flows_.push_back(flow);
    crossings_.clear();
    detector_interval_end_ += cfg_.detector_interval;
  }

  int bottleneck_detector_index() const {
    for (std::size_t d = 0; d < net_.detector_positions.size(); ++d) {
      if (net_.detector_positions[d] >= net_.accel_lane_end()) return static_cast<int>(d);
    }
    return static_cast<int>(net_.detector_positions.size()) - 1;
  }

  void handle_collisions(const WorldView& view, double t, bool measured) {
    for (const CollisionEvent& e : detect_collisions(view)) {
      bool fresh = false;
      for (VehicleState& v : vehicles_) {
        if (v.id == e.leader_id || v.id == e.follower_id) {
          if (!v.collided) fresh = true;
          v.collided = true;
        }
      }
      if (!fresh) continue;
      if (measured) acc_.add_collision();
      for (int id : {e.leader_id, e.follower_id}) {
        auto it = attempts_.find(id);
        if (it != attempts_.end()) it->second.conflicted = true;
      }
      (void)t;
    }
  }

  void track_merges(const WorldView& view, double t, bool measured) {
    for (const VehicleState& v : vehicles_) {
      if (v.origin != Origin::Ramp) continue;
      auto it = attempts_.find(v.id);
      if (it == attempts_.end()) {
        if (net_.in_accel_lane(v)) {
          MergeAttempt a;
          a.start = t;
          a.counted = measured;
          if (measured) acc_.add_merge_attempt();
          it = attempts_.emplace(v.id, a).first;
        } else {
          continue;
        }
      }
      MergeAttempt& a = it->second;
      if (!a.merged) {
        note_attempt_ttc(a, view, v, 0, /*projected=*/true);
      } else if (v.position <= net_.accel_lane_end()) {
        note_attempt_ttc(a, view, v, v.lane, /*projected=*/false);
      } else {
        finalize_attempt(v.id, a);
        attempts_.erase(it);
      }
    }
    (void)t;
  }

  void note_attempt_ttc(MergeAttempt& a, const WorldView& view, const VehicleState& v,
                        int lane, bool projected) {
    const VehicleState* leader =
        projected ? view.leader_in_lane(lane, v.position, v.id) : view.leader_of(v);
    const VehicleState* follower =
        projected ? view.follower_in_lane(lane, v.position, v.id) : view.follower_of(v);
    auto consider = [&](double gap, double closing) {
      if (gap <= 0.0) return;
      double tc = ttc(gap, closing);
      a.min_ttc = std::min(a.min_ttc, tc);
      if (a.counted && std::isfinite(tc)) acc_.note_ttc(tc);
      if (tc < cfg_.conflict_ttc_threshold) a.conflicted = true;
    };
    if (leader) consider(leader->rear() - v.position, v.speed - leader->speed);
    if (follower) consider(v.rear() - follower->position, follower->speed - v.speed);
  }

  void finalize_attempt(int id, const MergeAttempt& a) {
    if (a.counted && a.conflicted) acc_.add_conflicted_merge();
    (void)id;
  }

  void update_trust(const WorldView& post, double t) {
    if (!mode_uses_trust()) {
      return;
    }
    if (prev_second_view_.vehicles().empty() && vehicles_.empty()) return;
    const WorldView& pre = prev_second_view_;
    CoopRuleParams rule;
    rule.d_safe = cfg_.game.d_safe;
    rule.comfortable_decel = cfg_.idm.b;
    rule.scan_range = cfg_.scan_range;
    for (const VehicleState& obs : post.vehicles()) {
      if (obs.cls != VehicleClass::CAV) continue;
      const VehicleState* pre_obs = pre.find(obs.id);
      if (!pre_obs) continue;
      std::optional<int> intent;
      auto it = intents_.find(obs.id);
      if (it != intents_.end()) intent = it->second;

      std::vector<int> candidates;
      auto add = [&](const VehicleState* v) {
        if (!v) return;
        for (int c : candidates)
          if (c == v->id) return;
        candidates.push_back(v->id);
      };
      add(pre.leader_of(*pre_obs));
      add(pre.follower_of(*pre_obs));
      if (intent) {
        add(pre.leader_in_lane(*intent, pre_obs->position, obs.id));
        add(pre.follower_in_lane(*intent, pre_obs->position, obs.id));
      }
      for (int j : candidates) {
        auto delta = classify_cooperative(pre, post, obs.id, j, intent, rule);
        if (!delta) continue;
        trust_.apply_observation(obs.id, j, *delta);
        if (trace_trust_) {
          *trace_trust_ << t << ',' << obs.id << ',' << j << ',' << *delta << ','
                        << *trust_.get(obs.id, j) << '\n';
        }
      }
    }
  }

  void update_rewards(const WorldView& post, double t, bool measured, double dt) {
    // self rewards for every vehicle (neighbor terms need them)
    std::unordered_map<int, RewardBreakdown> selfs;
    for (const VehicleState& v : post.vehicles()) {
      double headway = kInf;
      if (const VehicleState* l = post.leader_of(v)) {
        headway = bumper_gap(*l, v);
      }
      double age = t - v.spawn_time;
      double jerk = age < 1.5 * dt ? 0.0 : (v.accel - v.prev_accel) / dt;
      selfs[v.id] = self_reward(headway, jerk, v.speed, cfg_.reward);
      if (v.cls == VehicleClass::CAV && measured) acc_.add_cav_jerk(jerk);
      if (trace_traj_) {
        *trace_traj_ << t << ',' << v.id << ',' << (v.cls == VehicleClass::CAV ? "CAV" : "HV")
                     << ',' << v.lane << ',' << v.position << ',' << v.speed << ',' << v.accel
                     << '\n';
      }
    }

    for (const VehicleState& v : post.vehicles()) {
      if (v.cls != VehicleClass::CAV) continue;
      RewardBreakdown r = selfs[v.id];
      double lambda = 0.0;
      double coop = 0.0;
      if (mode_uses_trust()) {
        auto neighbors = neighbors_in_scan(post, v);
        auto mean = trust_.weighted_mean(v.id, neighbors);
        if (mean) {
          lambda = cooperation_factor(*mean, cfg_.trust.tau);
          std::vector<std::pair<double, double>> terms;
          terms.reserve(neighbors.size());
          for (int j : neighbors) {
            terms.push_back({trust_.get_or_init(v.id, j), selfs[j].self_total});
          }
          coop = coop_reward(terms);
        }
      }
      r.lambda = lambda;
      r.coop = coop;
      r.total = total_reward(r.self_total, coop, lambda);
      if (measured) {
        reward_sum_ += r.total;
        ++reward_steps_;
      }
      if (trace_reward_) {
        *trace_reward_ << t << ',' << v.id << ',' << r.safety << ',' << r.comfort << ','
                       << r.efficiency << ',' << r.lambda << ',' << r.coop << ',' << r.total
                       << '\n';
      }
      if (learning_active()) record_transition(post, v, r.total);
    }
  }

  void record_transition(const WorldView& post, const VehicleState& v, double total) {
    AgentRuntime& rt = agent_runtime(v.id);
    if (rt.history.empty()) return;
    std::vector<Vec> window = rt.history.padded();
    if (rt.pending) {
      rt.pending->next_frames = window;
      rt.pending->done = false;
      emit_transition(v.id, *rt.pending);
    }
    Transition tr;
    tr.frames = window;
    tr.lat = rt.has_action ? rt.lat : 0;
    tr.a_long = rt.has_action ? rt.a_long : 0.0;
    tr.reward = total;
    tr.done = false;
    rt.pending = std::move(tr);
    (void)post;
  }

  void emit_transition(int id, const Transition& tr) {
    if (transition_hook_) transition_hook_(id, tr);
  }

  void handle_exits(double t, bool measured) {
    for (auto it = vehicles_.begin(); it != vehicles_.end();) {
      if (it->position >= net_.mainline_length) {
        if (measured) {
          acc_.add_travel_time(t - it->spawn_time);
          acc_.note_exit();
        }
        despawn_bookkeeping(it->id, /*exited=*/true);
        ++exited_;
        it = vehicles_.erase(it);
      } else {
        ++it;
      }
    }
  }

  void despawn_bookkeeping(int id, bool exited) {
    trust_.purge(id);
    intents_.erase(id);
    commitments_.erase(id);
    auto at = attempts_.find(id);
    if (at != attempts_.end()) {
      finalize_attempt(id, at->second);
      attempts_.erase(at);
    }
    auto rt = agents_.find(id);
    if (rt != agents_.end()) {
      if (rt->second.pending) {
        rt->second.pending->next_frames = rt->second.pending->frames;
        rt->second.pending->done = true;
        emit_transition(id, *rt->second.pending);
      }
      agents_.erase(rt);
    }
    (void)exited;
  }

  void expire_commitments(double t) {
    for (auto it = commitments_.begin(); it != commitments_.end();) {
      if (t >= it->second.expires_at) it = commitments_.erase(it);
      else ++it;
    }
  }

  void finalize() {
    for (auto& [id, a] : attempts_) finalize_attempt(id, a);
    attempts_.clear();
    for (auto& [id, rt] : agents_) {
      if (rt.pending) {
        rt.pending->next_frames = rt.pending->frames;
        rt.pending->done = true;
        emit_transition(id, *rt.pending);
      }
      rt.pending.reset();
    }
  }

  AgentRuntime& agent_runtime(int id) {
    auto it = agents_.find(id);
    if (it == agents_.end()) {
      AgentRuntime rt;
      rt.history = ObservationHistory(cfg_.learner.window_k);
      rt.policy_stream = RngStream(cfg_.scenario.seed, "policy/" + std::to_string(id));
      it = agents_.emplace(id, std::move(rt)).first;
    }
    return it->second;
  }

  SimConfig cfg_;
  RoadNetwork net_;
  TrustMatrix trust_;
  ObservationLayout obs_layout_;
  std::vector<VehicleState> vehicles_;
  std::vector<LaneSpawner> mainline_spawners_;
  LaneSpawner ramp_spawner_;
  long long step_index_ = 0;
  int steps_per_decision_ = 10;
  int next_id_ = 0;
  int spawned_ = 0;
  int exited_ = 0;
  int removed_collided_ = 0;

  std::map<int, Commitment> commitments_;
  std::map<int, int> intents_;
  std::map<int, MergeAttempt> attempts_;
  WorldView prev_second_view_;

  std::map<std::pair<int, int>, std::vector<DetectorCrossing>> crossings_;
  std::vector<DetectorRecord> detector_records_;
  std::vector<FlowSeriesPoint> flows_;
  double detector_interval_end_ = 60.0;
  int ramp_arrivals_interval_ = 0;

  EpisodeAccumulator acc_;
  double reward_sum_ = 0.0;
  long long reward_steps_ = 0;

  const LstmParams* policy_encoder_ = nullptr;
  const PolicyParams* policy_head_ = nullptr;
  bool policy_stochastic_ = true;
  std::function<void(int, const Transition&)> transition_hook_;
  std::map<int, AgentRuntime> agents_;

  std::ostream* trace_traj_ = nullptr;
  std::ostream* trace_trust_ = nullptr;
  std::ostream* trace_reward_ = nullptr;
  std::ostream* trace_game_ = nullptr;
};

}  // namespace mergesim
