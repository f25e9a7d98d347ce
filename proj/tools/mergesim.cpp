// Batch driver for the merging-corridor simulator: single runs, grid sweeps,
// dynamic-demand experiments, and training.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mergesim/config.hpp"
#include "mergesim/learner.hpp"
#include "mergesim/sim.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace mergesim;

namespace {

std::string timestamp_utc() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string default_out_root() {
  if (const char* env = std::getenv("MERGESIM_OUT")) return env;
  return "out";
}

std::vector<std::uint64_t> parse_seed_list(const std::string& spec) {
  std::vector<std::uint64_t> seeds;
  std::istringstream is(spec);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    auto dots = tok.find("..");
    if (dots != std::string::npos) {
      std::uint64_t lo = std::stoull(tok.substr(0, dots));
      std::uint64_t hi = std::stoull(tok.substr(dots + 2));
      for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    } else if (!tok.empty()) {
      seeds.push_back(std::stoull(tok));
    }
  }
  if (seeds.empty()) throw ConfigError("empty seed list: " + spec);
  return seeds;
}

std::vector<double> parse_double_list(const std::string& spec) {
  std::vector<double> out;
  std::istringstream is(spec);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  if (out.empty()) throw ConfigError("empty list: " + spec);
  return out;
}

std::vector<std::string> parse_string_list(const std::string& spec) {
  std::vector<std::string> out;
  std::istringstream is(spec);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  if (out.empty()) throw ConfigError("empty list: " + spec);
  return out;
}

json metrics_to_json(const EpisodeMetrics& m) {
  auto opt = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);
  };
  json j;
  j["merge_attempts"] = m.merge_attempts;
  j["conflicted_merges"] = m.conflicted_merges;
  j["completed_merges"] = m.completed_merges;
  j["collisions"] = m.collisions;
  j["collision_rate_pct"] = opt(m.collision_rate);
  j["mean_travel_time_s"] = opt(m.mean_travel_time);
  j["mean_abs_jerk_ms3"] = opt(m.mean_abs_jerk);
  j["throughput_vph"] = opt(m.throughput);
  j["min_ttc_s"] = opt(m.min_ttc);
  j["min_pet_s"] = opt(m.min_pet);
  j["vehicles_spawned"] = m.vehicles_spawned;
  j["vehicles_exited"] = m.vehicles_exited;
  return j;
}

json summary_to_json(const RunSummary& s) {
  json j;
  j["scenario"]["controller"] = s.controller;
  j["scenario"]["demand_vph"] = s.demand;
  j["scenario"]["cav_penetration"] = s.penetration;
  j["scenario"]["seed"] = s.seed;
  j["scenario"]["duration_s"] = s.duration;
  j["scenario"]["warmup_s"] = s.warmup;
  j["scenario"]["steps"] = s.steps;
  j["metrics"] = metrics_to_json(s.metrics);
  j["mean_cav_reward"] = s.mean_cav_reward;
  if (s.recovery) {
    j["recovery"]["recovered"] = s.recovery->recovered;
    if (s.recovery->recovered) {
      j["recovery"]["seconds"] = s.recovery->seconds;
    } else {
      j["recovery"]["seconds"] = json(nullptr);
      j["recovery"]["horizon_s"] = s.recovery->horizon;
    }
  } else {
    j["recovery"] = json(nullptr);
  }
  return j;
}

void write_manifest(const fs::path& dir, const std::string& command, const SimConfig& cfg,
                    const std::vector<std::uint64_t>& seeds,
                    const std::vector<std::string>& outputs, const std::string& started,
                    const std::string& finished) {
  json j;
  j["tool"] = "mergesim";
  j["version"] = kVersion;
  j["command"] = command;
  j["started_at"] = started;
  j["finished_at"] = finished;
  j["seeds"] = seeds;
  json cfgj = json::array();
  for (const auto& [k, v] : config_snapshot(cfg)) cfgj.push_back({k, v});
  j["config"] = cfgj;
  j["outputs"] = outputs;
  std::ofstream os(dir / "manifest.json");
  os << j.dump(2) << '\n';
}

SimConfig config_from_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open manifest: " + path);
  json j = json::parse(is, nullptr, true, true);
  std::vector<std::pair<std::string, std::string>> kv;
  for (const auto& entry : j.at("config")) {
    kv.push_back({entry.at(0).get<std::string>(), entry.at(1).get<std::string>()});
  }
  return config_from_snapshot(kv);
}

void write_detectors_csv(const fs::path& path, const std::vector<DetectorRecord>& recs) {
  std::ofstream os(path);
  os.precision(12);
  os << "interval_end,lane,position,flow_vph,mean_speed_ms,occupancy\n";
  for (const auto& r : recs) {
    os << r.interval_end << ',' << r.lane << ',' << r.position << ',' << r.flow << ',';
    if (r.mean_speed) os << *r.mean_speed;
    os << ',' << r.occupancy << '\n';
  }
}

void write_flows_csv(const fs::path& path, const std::vector<FlowSeriesPoint>& flows) {
  std::ofstream os(path);
  os.precision(12);
  os << "interval_end,bottleneck_vph,ramp_in_vph,mainline_vph\n";
  for (const auto& f : flows) {
    os << f.interval_end << ',' << f.bottleneck << ',' << f.ramp_in << ',' << f.mainline << '\n';
  }
}

struct RunArtifacts {
  RunSummary summary;
  std::vector<DetectorRecord> detectors;
};

// Executes one deterministic simulation; traces stream to files when a
// directory is given.
RunArtifacts execute_run(const SimConfig& cfg, const fs::path* trace_dir,
                         const std::string& checkpoint) {
  Simulation sim(cfg);

  std::optional<SacLearner> learner;
  if (!checkpoint.empty()) {
    int obs_dim = sim.observation_layout().dim();
    learner.emplace(obs_dim, cfg.learner, cfg.scenario.seed);
    load_tensors_file(checkpoint, learner->all_tensors());
    sim.set_policy(&learner->encoder(), &learner->policy(), /*stochastic=*/false);
  }

  std::ofstream traj, trust, reward, game;
  if (trace_dir) {
    traj.open(*trace_dir / "trace.csv");
    trust.open(*trace_dir / "trust_trace.csv");
    reward.open(*trace_dir / "reward_trace.csv");
    game.open(*trace_dir / "game_audit.csv");
    sim.set_trace_streams(&traj, &trust, &reward, &game);
  }

  sim.run();
  return {sim.summarize(), sim.detector_records()};
}

void apply_overrides(SimConfig& cfg, const std::optional<double>& duration,
                     const std::optional<double>& warmup, const std::optional<double>& demand,
                     const std::optional<double>& cav, const std::string& controller,
                     const std::optional<std::uint64_t>& seed) {
  if (duration) cfg.scenario.duration = *duration;
  if (warmup) cfg.scenario.warmup = *warmup;
  if (demand) {
    cfg.scenario.demand_level = *demand;
    cfg.scenario.profile.fixed_level = *demand;
  }
  if (cav) cfg.scenario.cav_penetration = *cav;
  if (!controller.empty()) cfg.scenario.controller = controller_mode_from_string(controller);
  if (seed) cfg.scenario.seed = *seed;
  cfg.propagate_shared();
  validate_config(cfg);
}

const char* kRowsHeader =
    "demand,penetration,controller,seed,status,merge_attempts,conflicted_merges,"
    "completed_merges,collisions,collision_rate_pct,mean_travel_time_s,mean_abs_jerk_ms3,"
    "throughput_vph,min_ttc_s,min_pet_s,mean_cav_reward\n";

void write_row(std::ostream& os, const RunSummary& s, const std::string& status) {
  auto opt = [&](const std::optional<double>& v) -> std::string {
    if (!v) return "";
    std::ostringstream o;
    o.precision(12);
    o << *v;
    return o.str();
  };
  os.precision(12);
  os << s.demand << ',' << s.penetration << ',' << s.controller << ',' << s.seed << ','
     << status << ',' << s.metrics.merge_attempts << ',' << s.metrics.conflicted_merges << ','
     << s.metrics.completed_merges << ',' << s.metrics.collisions << ','
     << opt(s.metrics.collision_rate) << ',' << opt(s.metrics.mean_travel_time) << ','
     << opt(s.metrics.mean_abs_jerk) << ',' << opt(s.metrics.throughput) << ','
     << opt(s.metrics.min_ttc) << ',' << opt(s.metrics.min_pet) << ',' << s.mean_cav_reward
     << '\n';
}

int cmd_run(const std::string& scenario, const std::string& manifest_path,
            std::optional<double> duration, std::optional<double> warmup,
            std::optional<double> demand, std::optional<double> cav,
            const std::string& controller, std::optional<std::uint64_t> seed,
            const std::string& out, bool trace, const std::string& checkpoint) {
  SimConfig cfg;
  if (!manifest_path.empty()) {
    cfg = config_from_manifest(manifest_path);
  } else if (!scenario.empty()) {
    cfg = parse_scenario_file(scenario);
  }
  apply_overrides(cfg, duration, warmup, demand, cav, controller, seed);

  fs::path dir = out.empty() ? fs::path(default_out_root()) / "run" : fs::path(out);
  fs::create_directories(dir);
  std::string started = timestamp_utc();

  RunArtifacts art = execute_run(cfg, trace ? &dir : nullptr, checkpoint);

  {
    std::ofstream os(dir / "summary.json");
    os << summary_to_json(art.summary).dump(2) << '\n';
  }
  write_detectors_csv(dir / "detectors.csv", art.detectors);
  write_flows_csv(dir / "flows.csv", art.summary.flows);

  std::vector<std::string> outputs = {"summary.json", "detectors.csv", "flows.csv"};
  if (trace) {
    outputs.insert(outputs.end(),
                   {"trace.csv", "trust_trace.csv", "reward_trace.csv", "game_audit.csv"});
  }
  write_manifest(dir, "run", cfg, {cfg.scenario.seed}, outputs, started, timestamp_utc());

  std::cout << "run complete: " << (dir / "summary.json").string() << '\n';
  std::cout << summary_to_json(art.summary).dump(2) << '\n';
  return 0;
}

struct SweepCell {
  double demand;
  double penetration;
  std::string controller;
  std::uint64_t seed;
};

int cmd_sweep(const std::string& scenario, const std::string& densities,
              const std::string& penetrations, const std::string& controllers,
              const std::string& seeds_spec, const std::string& out, int parallel,
              const std::string& checkpoint) {
  SimConfig base;
  if (!scenario.empty()) base = parse_scenario_file(scenario);
  auto demand_list = parse_double_list(densities);
  auto pen_list = parse_double_list(penetrations);
  auto ctrl_list = parse_string_list(controllers);
  auto seeds = parse_seed_list(seeds_spec);

  std::vector<SweepCell> cells;
  for (double d : demand_list)
    for (double p : pen_list)
      for (const std::string& c : ctrl_list)
        for (std::uint64_t s : seeds)
          cells.push_back({d, p, c, s});

  fs::path dir = out.empty() ? fs::path(default_out_root()) / "sweep" : fs::path(out);
  fs::create_directories(dir);
  std::string started = timestamp_utc();

  std::vector<std::optional<RunSummary>> results(cells.size());
  std::vector<std::string> status(cells.size(), "ok");

  int workers = std::max(1, parallel);
  std::size_t next = 0;
  while (next < cells.size()) {
    std::size_t batch = std::min<std::size_t>(workers, cells.size() - next);
    std::vector<std::future<void>> futures;
    for (std::size_t k = 0; k < batch; ++k) {
      std::size_t idx = next + k;
      futures.push_back(std::async(std::launch::async, [&, idx]() {
        SimConfig cfg = base;
        try {
          apply_overrides(cfg, std::nullopt, std::nullopt, cells[idx].demand,
                          cells[idx].penetration, cells[idx].controller, cells[idx].seed);
          RunArtifacts art = execute_run(cfg, nullptr, checkpoint);
          results[idx] = art.summary;
        } catch (const std::exception& e) {
          status[idx] = std::string("failed: ") + e.what();
          RunSummary s;
          s.demand = cells[idx].demand;
          s.penetration = cells[idx].penetration;
          s.controller = cells[idx].controller;
          s.seed = cells[idx].seed;
          results[idx] = s;
        }
      }));
    }
    for (auto& f : futures) f.get();
    next += batch;
  }

  std::ofstream rows(dir / "rows.csv");
  rows << kRowsHeader;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    write_row(rows, *results[i], status[i] == "ok" ? "ok" : "failed");
  }

  // per-cell means and normal-approximation 95% half-widths over seeds
  std::ofstream cells_csv(dir / "cells.csv");
  cells_csv.precision(12);
  cells_csv << "demand,penetration,controller,n,metric,mean,ci_half\n";
  for (double d : demand_list) {
    for (double p : pen_list) {
      for (const std::string& c : ctrl_list) {
        struct Stat {
          std::vector<double> xs;
        };
        std::map<std::string, Stat> stats;
        for (std::size_t i = 0; i < cells.size(); ++i) {
          if (cells[i].demand != d || cells[i].penetration != p || cells[i].controller != c)
            continue;
          if (status[i] != "ok") continue;
          const EpisodeMetrics& m = results[i]->metrics;
          if (m.collision_rate) stats["collision_rate_pct"].xs.push_back(*m.collision_rate);
          if (m.mean_travel_time) stats["mean_travel_time_s"].xs.push_back(*m.mean_travel_time);
          if (m.mean_abs_jerk) stats["mean_abs_jerk_ms3"].xs.push_back(*m.mean_abs_jerk);
          if (m.throughput) stats["throughput_vph"].xs.push_back(*m.throughput);
        }
        for (const auto& [metric, st] : stats) {
          double n = static_cast<double>(st.xs.size());
          if (n == 0) continue;
          double mean = 0.0;
          for (double x : st.xs) mean += x;
          mean /= n;
          double var = 0.0;
          for (double x : st.xs) var += (x - mean) * (x - mean);
          double half = n > 1 ? 1.96 * std::sqrt(var / (n - 1) / n) : 0.0;
          cells_csv << d << ',' << p << ',' << c << ',' << st.xs.size() << ',' << metric << ','
                    << mean << ',' << half << '\n';
        }
      }
    }
  }

  write_manifest(dir, "sweep", base, seeds, {"rows.csv", "cells.csv"}, started,
                 timestamp_utc());
  std::cout << "sweep complete: " << cells.size() << " cells -> " << (dir / "rows.csv").string()
            << '\n';
  return 0;
}

int cmd_dynamic(const std::string& profile, const std::string& controllers,
                const std::string& seeds_spec, const std::string& out, int parallel,
                const std::string& checkpoint) {
  SimConfig base = parse_scenario_file(profile);
  auto ctrl_list = parse_string_list(controllers);
  auto seeds = parse_seed_list(seeds_spec);

  fs::path dir = out.empty() ? fs::path(default_out_root()) / "dynamic" : fs::path(out);
  fs::create_directories(dir);
  std::string started = timestamp_utc();

  struct Cell {
    std::string controller;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (const std::string& c : ctrl_list)
    for (std::uint64_t s : seeds)
      cells.push_back({c, s});

  std::vector<std::optional<RunSummary>> results(cells.size());
  std::vector<std::string> status(cells.size(), "ok");
  int workers = std::max(1, parallel);
  std::size_t next = 0;
  while (next < cells.size()) {
    std::size_t batch = std::min<std::size_t>(workers, cells.size() - next);
    std::vector<std::future<void>> futures;
    for (std::size_t k = 0; k < batch; ++k) {
      std::size_t idx = next + k;
      futures.push_back(std::async(std::launch::async, [&, idx]() {
        try {
          SimConfig cfg = base;
          apply_overrides(cfg, std::nullopt, std::nullopt, std::nullopt, std::nullopt,
                          cells[idx].controller, cells[idx].seed);
          RunArtifacts art = execute_run(cfg, nullptr, checkpoint);
          results[idx] = art.summary;
        } catch (const std::exception& e) {
          status[idx] = std::string("failed: ") + e.what();
        }
      }));
    }
    for (auto& f : futures) f.get();
    next += batch;
  }

  std::ofstream recovery(dir / "recovery.csv");
  recovery.precision(12);
  recovery << "controller,seed,recovered,seconds,horizon_s\n";
  std::vector<std::string> outputs = {"recovery.csv"};
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!results[i]) continue;
    std::string name = "flows_" + cells[i].controller + "_s" + std::to_string(cells[i].seed) +
                       ".csv";
    write_flows_csv(dir / name, results[i]->flows);
    outputs.push_back(name);
    if (results[i]->recovery) {
      const RecoveryResult& r = *results[i]->recovery;
      recovery << cells[i].controller << ',' << cells[i].seed << ',' << (r.recovered ? 1 : 0)
               << ',';
      if (r.recovered) recovery << r.seconds << ',';
      else recovery << ",>" << r.horizon;
      recovery << '\n';
    }
  }

  write_manifest(dir, "dynamic-demand", base, seeds, outputs, started, timestamp_utc());
  std::cout << "dynamic-demand complete: " << (dir / "recovery.csv").string() << '\n';
  return 0;
}

int cmd_train(const std::string& scenario, int episodes, int update_every,
              const std::string& out, std::optional<std::uint64_t> seed,
              const std::string& resume, bool no_curriculum) {
  SimConfig cfg;
  if (!scenario.empty()) cfg = parse_scenario_file(scenario);
  if (seed) cfg.scenario.seed = *seed;
  cfg.propagate_shared();
  validate_config(cfg);

  fs::path dir = out.empty() ? fs::path(default_out_root()) / "train" : fs::path(out);
  fs::create_directories(dir);
  std::string started = timestamp_utc();

  ObservationLayout layout;
  layout.mainline_lanes = cfg.scenario.network.mainline_lanes;
  layout.scan_range = cfg.scan_range;
  layout.group_window = cfg.group_window;
  layout.include_trust = cfg.include_trust_obs;

  SacLearner learner(layout.dim(), cfg.learner, cfg.scenario.seed);
  if (!resume.empty()) load_tensors_file(resume, learner.all_tensors());
  ReplayBuffer buffer(cfg.learner.replay_capacity);
  RngStream train_rng(cfg.scenario.seed, "train");
  Curriculum curriculum(cfg.scenario.seed);

  std::ofstream log(dir / "training_log.csv");
  log.precision(12);
  log << "episode,update,critic_loss,actor_loss,entropy,mean_episode_reward\n";

  long long update_count = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    SimConfig ep_cfg = cfg;
    if (!no_curriculum) {
      ep_cfg.scenario = curriculum.next_episode(cfg.scenario);
      ep_cfg.scenario.seed = cfg.scenario.seed + static_cast<std::uint64_t>(ep) * 1000003ULL;
    } else {
      ep_cfg.scenario.seed = cfg.scenario.seed + static_cast<std::uint64_t>(ep) * 1000003ULL;
    }
    Simulation sim(ep_cfg);
    sim.set_policy(&learner.encoder(), &learner.policy(), /*stochastic=*/true);
    sim.set_transition_hook([&](int, const Transition& tr) { buffer.push(tr); });

    long long steps = sim.total_steps();
    UpdateDiagnostics last{};
    for (long long s = 0; s < steps; ++s) {
      sim.step();
      if (update_every > 0 && s % update_every == 0) {
        auto batch = buffer.sample(cfg.learner.batch_size, train_rng);
        if (batch) {
          last = learner.update_step(*batch, train_rng);
          ++update_count;
        }
      }
    }
    sim.finish();
    double ep_reward = sim.summarize().mean_cav_reward;
    if (!no_curriculum) curriculum.note_episode_reward(ep_reward);
    log << ep << ',' << update_count << ',' << last.critic_loss << ',' << last.actor_loss << ','
        << last.entropy << ',' << ep_reward << '\n';
    log.flush();
    save_tensors_file((dir / "checkpoint.ckpt").string(), learner.all_tensors());
    std::cout << "episode " << ep << ": mean reward " << ep_reward << ", updates "
              << update_count << ", buffer " << buffer.size() << '\n';
  }

  write_manifest(dir, "train", cfg, {cfg.scenario.seed},
                 {"training_log.csv", "checkpoint.ckpt"}, started, timestamp_utc());
  std::cout << "training complete: " << (dir / "checkpoint.ckpt").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trust-gated game-theoretic on-ramp merging microsimulation"};
  app.require_subcommand(1);

  // run
  auto* run = app.add_subcommand("run", "Single deterministic simulation run");
  std::string scenario, manifest, controller, out, checkpoint;
  std::optional<double> duration, warmup, demand, cav;
  std::optional<std::uint64_t> seed;
  bool trace = false;
  run->add_option("--scenario", scenario, "Scenario file (key = value schema)");
  run->add_option("--from-manifest", manifest, "Re-run the configuration of a manifest.json");
  run->add_option("--duration", duration, "Measured duration, s");
  run->add_option("--warmup", warmup, "Warmup discarded before metrics, s");
  run->add_option("--demand", demand, "Total demand, veh/h");
  run->add_option("--cav", cav, "CAV penetration in [0,1]");
  run->add_option("--controller", controller,
                  "rule|game_only|learn_only|learn_game|trust_full");
  run->add_option("--seed", seed, "Master seed");
  run->add_option("--out", out, "Output directory (default $MERGESIM_OUT/run)");
  run->add_flag("--trace", trace, "Write trajectory/trust/reward/game traces");
  run->add_option("--checkpoint", checkpoint, "Load trained parameters");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Density x penetration x controller grid");
  std::string sw_scenario, sw_densities = "300,600,900", sw_pens = "0,0.3,0.7,1.0";
  std::string sw_controllers = "rule,game_only,learn_only,learn_game,trust_full";
  std::string sw_seeds = "1..10", sw_out, sw_checkpoint;
  int sw_parallel = 1;
  sweep->add_option("--scenario", sw_scenario, "Base scenario file");
  sweep->add_option("--densities", sw_densities, "Comma list of demand levels, veh/h");
  sweep->add_option("--penetrations", sw_pens, "Comma list of CAV penetrations");
  sweep->add_option("--controllers", sw_controllers, "Comma list of controller modes");
  sweep->add_option("--seeds", sw_seeds, "Seed list: 1,2,3 or 1..10");
  sweep->add_option("--out", sw_out, "Output directory");
  sweep->add_option("--parallel", sw_parallel, "Concurrent cells");
  sweep->add_option("--checkpoint", sw_checkpoint, "Trained parameters for learning modes");

  // dynamic-demand
  auto* dyn = app.add_subcommand("dynamic-demand", "Time-varying demand experiment");
  std::string dy_profile, dy_controllers = "rule,trust_full", dy_seeds = "1..10", dy_out;
  std::string dy_checkpoint;
  int dy_parallel = 1;
  dyn->add_option("--profile", dy_profile, "Scenario file with demand breakpoints")->required();
  dyn->add_option("--controllers", dy_controllers, "Comma list of controller modes");
  dyn->add_option("--seeds", dy_seeds, "Seed list");
  dyn->add_option("--out", dy_out, "Output directory");
  dyn->add_option("--parallel", dy_parallel, "Concurrent cells");
  dyn->add_option("--checkpoint", dy_checkpoint, "Trained parameters for learning modes");

  // train
  auto* train = app.add_subcommand("train", "Entropy-regularized actor-critic training");
  std::string tr_scenario, tr_out, tr_resume;
  int tr_episodes = 20, tr_update_every = 10;
  std::optional<std::uint64_t> tr_seed;
  bool tr_nocur = false;
  train->add_option("--scenario", tr_scenario, "Base scenario file");
  train->add_option("--episodes", tr_episodes, "Episode count");
  train->add_option("--update-every", tr_update_every, "Environment steps per gradient update");
  train->add_option("--out", tr_out, "Output directory");
  train->add_option("--seed", tr_seed, "Master seed");
  train->add_option("--checkpoint", tr_resume, "Resume from checkpoint");
  train->add_flag("--no-curriculum", tr_nocur, "Train on the fixed scenario only");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      return cmd_run(scenario, manifest, duration, warmup, demand, cav, controller, seed, out,
                     trace, checkpoint);
    }
    if (sweep->parsed()) {
      return cmd_sweep(sw_scenario, sw_densities, sw_pens, sw_controllers, sw_seeds, sw_out,
                       sw_parallel, sw_checkpoint);
    }
    if (dyn->parsed()) {
      return cmd_dynamic(dy_profile, dy_controllers, dy_seeds, dy_out, dy_parallel,
                         dy_checkpoint);
    }
    if (train->parsed()) {
      return cmd_train(tr_scenario, tr_episodes, tr_update_every, tr_out, tr_seed, tr_resume,
                       tr_nocur);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const ContractViolation& e) {
    std::cerr << "simulation contract violation: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
