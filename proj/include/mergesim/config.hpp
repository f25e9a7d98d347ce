#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mergesim/game.hpp"
#include "mergesim/learner.hpp"
#include "mergesim/reward.hpp"
#include "mergesim/scenario.hpp"
#include "mergesim/trust.hpp"
#include "mergesim/types.hpp"

namespace mergesim {

inline constexpr const char* kVersion = "0.1.0";

// Full run configuration: scenario plus every model parameter set. The
// scenario file is a flat key = value schema over these fields; shared
// quantities (d_safe, scan range, b_safe) are single keys propagated to all
// module parameter sets.
struct SimConfig {
  ScenarioConfig scenario;
  IdmParams idm;
  MobilParams mobil;
  TrustParams trust;
  RewardParams reward;
  GameParams game;
  LearnerConfig learner;
  double scan_range = 100.0;
  double group_window = 250.0;
  bool include_trust_obs = false;
  double conflict_ttc_threshold = 1.5;
  double detector_interval = 60.0;
  double recovery_smooth_window = 60.0;    // s
  double recovery_baseline_window = 300.0; // s
  double lane_change_cooldown = 2.0;       // s
  double decision_period = 1.0;            // s between lateral decisions per vehicle
  double hv_yield_range = 80.0;            // m lookahead for courtesy yielding
  double urgency_relax = 1.0;              // rule-mode safety relaxation with urgency
  double cav_jerk_limit = 3.0;             // m/s^3 slew bound on CAV commands (non-rule modes)

  void propagate_shared() {
    reward.d_safe = game.d_safe;
    reward.v_desired = idm.v_d;
    game.b_safe = mobil.b_safe;
    game.scan_range = scan_range;
    game.commit_duration = std::max(game.commit_duration, 0.0);
    learner.a_max = idm.a;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for key '" + key + "': " + v);
  }
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "on") return true;
  if (v == "0" || v == "false" || v == "off") return false;
  throw ConfigError("bad boolean value for key '" + key + "': " + v);
}

}  // namespace detail

// Applies one key = value setting. Unknown keys raise ConfigError naming the
// key. Repeatable keys: `point` (demand breakpoints).
inline void apply_config_key(SimConfig& cfg, const std::string& key, const std::string& value) {
  using detail::to_bool;
  using detail::to_double;
  auto num = [&]() { return to_double(key, value); };

  if (key == "duration") cfg.scenario.duration = num();
  else if (key == "warmup") cfg.scenario.warmup = num();
  else if (key == "dt") cfg.scenario.dt = num();
  else if (key == "seed") cfg.scenario.seed = static_cast<std::uint64_t>(num());
  else if (key == "controller") cfg.scenario.controller = controller_mode_from_string(value);
  else if (key == "demand") { cfg.scenario.demand_level = num(); cfg.scenario.profile.fixed_level = cfg.scenario.demand_level; }
  else if (key == "cav_penetration") cfg.scenario.cav_penetration = num();
  else if (key == "mainline_split") cfg.scenario.profile.mainline_split = num();
  else if (key == "driver_style_variation") cfg.scenario.driver_style_variation = to_bool(key, value);
  else if (key == "mainline_length") cfg.scenario.network.mainline_length = num();
  else if (key == "mainline_lanes") cfg.scenario.network.mainline_lanes = static_cast<int>(num());
  else if (key == "lane_width") cfg.scenario.network.lane_width = num();
  else if (key == "mainline_speed_limit") cfg.scenario.network.mainline_speed_limit = num();
  else if (key == "ramp_speed_advisory") cfg.scenario.network.ramp_speed_advisory = num();
  else if (key == "merge_zone_start") cfg.scenario.network.merge_zone_start = num();
  else if (key == "accel_lane_length") cfg.scenario.network.accel_lane_length = num();
  else if (key == "ramp_length") cfg.scenario.network.ramp_length = num();
  else if (key == "detector_spacing") cfg.scenario.network.detector_spacing = num();
  else if (key == "idm_a") cfg.idm.a = num();
  else if (key == "idm_b") cfg.idm.b = num();
  else if (key == "idm_T") cfg.idm.T = num();
  else if (key == "idm_s0") cfg.idm.s0 = num();
  else if (key == "idm_v_d") cfg.idm.v_d = num();
  else if (key == "mobil_p") cfg.mobil.p = num();
  else if (key == "mobil_delta_a_th") cfg.mobil.delta_a_th = num();
  else if (key == "mobil_b_safe") cfg.mobil.b_safe = num();
  else if (key == "trust_initial") cfg.trust.initial = num();
  else if (key == "trust_alpha_hat") cfg.trust.alpha_hat = num();
  else if (key == "trust_tau") cfg.trust.tau = num();
  else if (key == "w_s") cfg.reward.w_s = num();
  else if (key == "w_c") cfg.reward.w_c = num();
  else if (key == "w_e") cfg.reward.w_e = num();
  else if (key == "d_safe") cfg.game.d_safe = num();
  else if (key == "gamma_eff") cfg.game.weights.eff = num();
  else if (key == "gamma_comf") cfg.game.weights.comf = num();
  else if (key == "gamma_lc") cfg.game.weights.lc = num();
  else if (key == "gamma_mlc") cfg.game.weights.mlc = num();
  else if (key == "noncoop_alpha0") cfg.game.noncoop.alpha0 = num();
  else if (key == "noncoop_alpha1") cfg.game.noncoop.alpha1 = num();
  else if (key == "noncoop_alpha2") cfg.game.noncoop.alpha2 = num();
  else if (key == "noncoop_beta0") cfg.game.noncoop.beta0 = num();
  else if (key == "noncoop_beta1") cfg.game.noncoop.beta1 = num();
  else if (key == "noncoop_beta2") cfg.game.noncoop.beta2 = num();
  else if (key == "noncoop_noise") {
    if (value == "off") cfg.game.noncoop.noise = NoiseMode::Off;
    else if (value == "gumbel") cfg.game.noncoop.noise = NoiseMode::SeededGumbel;
    else throw ConfigError("bad value for key 'noncoop_noise': " + value);
  }
  else if (key == "eq23_literal") cfg.game.eq23_literal = to_bool(key, value);
  else if (key == "decision_margin") cfg.game.decision_margin = num();
  else if (key == "commit_duration") cfg.game.commit_duration = num();
  else if (key == "scan_range") cfg.scan_range = num();
  else if (key == "group_window") cfg.group_window = num();
  else if (key == "include_trust_obs") cfg.include_trust_obs = to_bool(key, value);
  else if (key == "replay_capacity") cfg.learner.replay_capacity = static_cast<std::size_t>(num());
  else if (key == "batch_size") cfg.learner.batch_size = static_cast<std::size_t>(num());
  else if (key == "gamma") cfg.learner.gamma = num();
  else if (key == "lr_actor") cfg.learner.lr_actor = num();
  else if (key == "lr_critic") cfg.learner.lr_critic = num();
  else if (key == "entropy_coef") cfg.learner.entropy_coef = num();
  else if (key == "target_smoothing") cfg.learner.target_smoothing = num();
  else if (key == "clip_norm") cfg.learner.clip_norm = num();
  else if (key == "hidden_size") cfg.learner.hidden = static_cast<int>(num());
  else if (key == "critic_hidden") cfg.learner.critic_hidden = static_cast<int>(num());
  else if (key == "window_k") cfg.learner.window_k = static_cast<int>(num());
  else if (key == "conflict_ttc_threshold") cfg.conflict_ttc_threshold = num();
  else if (key == "detector_interval") cfg.detector_interval = num();
  else if (key == "recovery_smooth_window") cfg.recovery_smooth_window = num();
  else if (key == "recovery_baseline_window") cfg.recovery_baseline_window = num();
  else if (key == "lane_change_cooldown") cfg.lane_change_cooldown = num();
  else if (key == "decision_period") cfg.decision_period = num();
  else if (key == "hv_yield_range") cfg.hv_yield_range = num();
  else if (key == "urgency_relax") cfg.urgency_relax = num();
  else if (key == "cav_jerk_limit") cfg.cav_jerk_limit = num();
  else if (key == "point") {
    std::istringstream ps(value);
    DemandBreakpoint bp;
    if (!(ps >> bp.t >> bp.mainline >> bp.ramp))
      throw ConfigError("bad value for key 'point': expected 't mainline ramp'");
    cfg.scenario.profile.breakpoints.push_back(bp);
  }
  else if (key == "penetration_shift") {
    std::istringstream ps(value);
    PenetrationShift sh;
    if (!(ps >> sh.time >> sh.before >> sh.after))
      throw ConfigError("bad value for key 'penetration_shift': expected 't before after'");
    cfg.scenario.penetration_shift = sh;
  }
  else throw ConfigError("unknown key in scenario file: '" + key + "'");
}

inline void validate_config(const SimConfig& cfg) {
  const ScenarioConfig& s = cfg.scenario;
  if (s.dt <= 0.0) throw ConfigError("dt must be positive");
  if (s.warmup < 0.0 || s.duration <= 0.0) throw ConfigError("duration must exceed warmup >= 0");
  if (s.cav_penetration < 0.0 || s.cav_penetration > 1.0)
    throw ConfigError("cav_penetration must lie in [0,1]");
  if (s.profile.mainline_split < 0.0 || s.profile.mainline_split > 1.0)
    throw ConfigError("mainline_split must lie in [0,1]");
  if (cfg.trust.alpha_hat <= 0.0 || cfg.trust.alpha_hat >= 1.0)
    throw ConfigError("trust_alpha_hat must lie in (0,1)");
  if (cfg.trust.tau < 0.0 || cfg.trust.tau >= 1.0)
    throw ConfigError("trust_tau must lie in [0,1)");
  if (cfg.learner.gamma <= 0.0 || cfg.learner.gamma >= 1.0)
    throw ConfigError("gamma must lie in (0,1)");
  if (cfg.idm.a <= 0.0 || cfg.idm.b <= 0.0 || cfg.idm.T <= 0.0 || cfg.idm.s0 <= 0.0 ||
      cfg.idm.v_d <= 0.0)
    throw ConfigError("idm parameters must be positive");
  if (cfg.mobil.p < 0.0 || cfg.mobil.p > 1.0) throw ConfigError("mobil_p must lie in [0,1]");
}

inline SimConfig parse_scenario_stream(std::istream& is) {
  SimConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("scenario file line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    apply_config_key(cfg, key, value);
  }
  cfg.propagate_shared();
  validate_config(cfg);
  return cfg;
}

inline SimConfig parse_scenario_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open scenario file: " + path);
  return parse_scenario_stream(is);
}

// Flat key/value snapshot of a resolved configuration, reparsable by
// apply_config_key. Used by the run manifest.
inline std::vector<std::pair<std::string, std::string>> config_snapshot(const SimConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  auto num = [&](const std::string& k, double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    out.push_back({k, os.str()});
  };
  auto str = [&](const std::string& k, const std::string& v) { out.push_back({k, v}); };

  num("duration", cfg.scenario.duration);
  num("warmup", cfg.scenario.warmup);
  num("dt", cfg.scenario.dt);
  num("seed", static_cast<double>(cfg.scenario.seed));
  str("controller", to_string(cfg.scenario.controller));
  num("demand", cfg.scenario.demand_level);
  num("cav_penetration", cfg.scenario.cav_penetration);
  num("mainline_split", cfg.scenario.profile.mainline_split);
  str("driver_style_variation", cfg.scenario.driver_style_variation ? "1" : "0");
  num("mainline_length", cfg.scenario.network.mainline_length);
  num("mainline_lanes", cfg.scenario.network.mainline_lanes);
  num("lane_width", cfg.scenario.network.lane_width);
  num("mainline_speed_limit", cfg.scenario.network.mainline_speed_limit);
  num("ramp_speed_advisory", cfg.scenario.network.ramp_speed_advisory);
  num("merge_zone_start", cfg.scenario.network.merge_zone_start);
  num("accel_lane_length", cfg.scenario.network.accel_lane_length);
  num("ramp_length", cfg.scenario.network.ramp_length);
  num("detector_spacing", cfg.scenario.network.detector_spacing);
  num("idm_a", cfg.idm.a);
  num("idm_b", cfg.idm.b);
  num("idm_T", cfg.idm.T);
  num("idm_s0", cfg.idm.s0);
  num("idm_v_d", cfg.idm.v_d);
  num("mobil_p", cfg.mobil.p);
  num("mobil_delta_a_th", cfg.mobil.delta_a_th);
  num("mobil_b_safe", cfg.mobil.b_safe);
  num("trust_initial", cfg.trust.initial);
  num("trust_alpha_hat", cfg.trust.alpha_hat);
  num("trust_tau", cfg.trust.tau);
  num("w_s", cfg.reward.w_s);
  num("w_c", cfg.reward.w_c);
  num("w_e", cfg.reward.w_e);
  num("d_safe", cfg.game.d_safe);
  num("gamma_eff", cfg.game.weights.eff);
  num("gamma_comf", cfg.game.weights.comf);
  num("gamma_lc", cfg.game.weights.lc);
  num("gamma_mlc", cfg.game.weights.mlc);
  num("noncoop_alpha0", cfg.game.noncoop.alpha0);
  num("noncoop_alpha1", cfg.game.noncoop.alpha1);
  num("noncoop_alpha2", cfg.game.noncoop.alpha2);
  num("noncoop_beta0", cfg.game.noncoop.beta0);
  num("noncoop_beta1", cfg.game.noncoop.beta1);
  num("noncoop_beta2", cfg.game.noncoop.beta2);
  str("noncoop_noise", cfg.game.noncoop.noise == NoiseMode::Off ? "off" : "gumbel");
  str("eq23_literal", cfg.game.eq23_literal ? "1" : "0");
  num("decision_margin", cfg.game.decision_margin);
  num("commit_duration", cfg.game.commit_duration);
  num("scan_range", cfg.scan_range);
  num("group_window", cfg.group_window);
  str("include_trust_obs", cfg.include_trust_obs ? "1" : "0");
  num("replay_capacity", static_cast<double>(cfg.learner.replay_capacity));
  num("batch_size", static_cast<double>(cfg.learner.batch_size));
  num("gamma", cfg.learner.gamma);
  num("lr_actor", cfg.learner.lr_actor);
  num("lr_critic", cfg.learner.lr_critic);
  num("entropy_coef", cfg.learner.entropy_coef);
  num("target_smoothing", cfg.learner.target_smoothing);
  num("clip_norm", cfg.learner.clip_norm);
  num("hidden_size", cfg.learner.hidden);
  num("critic_hidden", cfg.learner.critic_hidden);
  num("window_k", cfg.learner.window_k);
  num("conflict_ttc_threshold", cfg.conflict_ttc_threshold);
  num("detector_interval", cfg.detector_interval);
  num("recovery_smooth_window", cfg.recovery_smooth_window);
  num("recovery_baseline_window", cfg.recovery_baseline_window);
  num("lane_change_cooldown", cfg.lane_change_cooldown);
  num("decision_period", cfg.decision_period);
  num("hv_yield_range", cfg.hv_yield_range);
  num("urgency_relax", cfg.urgency_relax);
  num("cav_jerk_limit", cfg.cav_jerk_limit);
  for (const auto& bp : cfg.scenario.profile.breakpoints) {
    std::ostringstream os;
    os.precision(17);
    os << bp.t << ' ' << bp.mainline << ' ' << bp.ramp;
    out.push_back({"point", os.str()});
  }
  if (cfg.scenario.penetration_shift) {
    std::ostringstream os;
    os.precision(17);
    const auto& sh = *cfg.scenario.penetration_shift;
    os << sh.time << ' ' << sh.before << ' ' << sh.after;
    out.push_back({"penetration_shift", os.str()});
  }
  return out;
}

inline SimConfig config_from_snapshot(
    const std::vector<std::pair<std::string, std::string>>& kv) {
  SimConfig cfg;
  for (const auto& [k, v] : kv) apply_config_key(cfg, k, v);
  cfg.propagate_shared();
  validate_config(cfg);
  return cfg;
}

}  // namespace mergesim
