#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mergesim/dynamics.hpp"
#include "mergesim/rng.hpp"

using namespace mergesim;
using Catch::Approx;

namespace {

VehicleState make_vehicle(int id, int lane, double pos, double speed) {
  VehicleState v;
  v.id = id;
  v.lane = lane;
  v.position = pos;
  v.speed = speed;
  return v;
}

// Independent root-found equilibrium gap of the car-following law at Δv = 0:
// solve a[1 - (v/vd)^4 - (s*/g)^2] = 0 for g by bisection.
double equilibrium_gap_oracle(double v, const IdmParams& p) {
  double target = 1.0 - std::pow(v / p.v_d, 4.0);
  double desired = p.s0 + v * p.T;
  double lo = desired, hi = 10.0 * desired;
  auto f = [&](double g) { return target - (desired / g) * (desired / g); };
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (f(mid) > 0.0) hi = mid;
    else lo = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("idm free road at desired speed gives zero acceleration") {
  IdmParams p;
  REQUIRE(idm_acceleration(30.0, 0.0, kInf, p) == Approx(0.0).margin(1e-12));
}

TEST_CASE("idm standing start on a free road gives max acceleration") {
  IdmParams p;
  REQUIRE(idm_acceleration(0.0, 0.0, kInf, p) == Approx(1.0).margin(1e-12));
}

TEST_CASE("idm worked example at half desired speed") {
  // v = 15, dv = 0, gap = 20: desired gap = 2 + 15 * 1.2 = 20, so the
  // interaction term is exactly 1 and a = a_max (1 - 0.5^4 - 1) = -0.0625.
  IdmParams p;
  REQUIRE(idm_acceleration(15.0, 0.0, 20.0, p) == Approx(-0.0625).margin(1e-12));
}

TEST_CASE("idm output is clamped to the emergency bound") {
  IdmParams p;
  double a = idm_acceleration(30.0, 10.0, 1.0, p);
  REQUIRE(a == Approx(-kEmergencyDecel));
}

TEST_CASE("idm rejects non-positive gaps") {
  IdmParams p;
  REQUIRE_THROWS_AS(idm_acceleration(10.0, 0.0, 0.0, p), ContractViolation);
  REQUIRE_THROWS_AS(idm_acceleration(10.0, 0.0, -1.0, p), ContractViolation);
}

TEST_CASE("mobil worked example accepts the change") {
  MobilParams p;
  // 0.5 + 0.2 * (-0.5 + 0) = 0.4 > 0.3 and -2.0 > -4.0
  REQUIRE(mobil_decision(0.5, -0.5, 0.0, -2.0, p) == MobilDecision::Change);
}

TEST_CASE("mobil stays without incentive") {
  MobilParams p;
  REQUIRE(mobil_decision(0.0, 0.0, 0.0, 0.0, p) == MobilDecision::Stay);
}

TEST_CASE("mobil safety veto overrides incentive") {
  MobilParams p;
  REQUIRE(mobil_decision(2.0, 0.0, 0.0, -5.0, p) == MobilDecision::Stay);
}

TEST_CASE("mobil with zero politeness depends only on ego gain and the veto") {
  MobilParams p;
  p.p = 0.0;
  RngStream rng(11, "mobil-sym");
  for (int i = 0; i < 200; ++i) {
    double ego = rng.uniform(-1.0, 1.0);
    double fn = rng.uniform(-5.0, 5.0);
    double fo = rng.uniform(-5.0, 5.0);
    double after = rng.uniform(-6.0, 1.0);
    auto d = mobil_decision(ego, fn, fo, after, p);
    auto expected = (ego > p.delta_a_th && after > -p.b_safe) ? MobilDecision::Change
                                                              : MobilDecision::Stay;
    REQUIRE(d == expected);
  }
}

TEST_CASE("kinematic step advances position with the updated speed") {
  VehicleState v = make_vehicle(1, 0, 0.0, 10.0);
  VehicleState next = step_kinematics(v, 0.0, 0.1);
  REQUIRE(next.speed == Approx(10.0));
  REQUIRE(next.position == Approx(1.0));

  next = step_kinematics(v, 1.0, 0.1);
  REQUIRE(next.speed == Approx(10.1).margin(1e-12));
  REQUIRE(next.position == Approx(1.01).margin(1e-12));
}

TEST_CASE("kinematic step floors speed at rest") {
  VehicleState v = make_vehicle(1, 0, 50.0, 0.05);
  VehicleState next = step_kinematics(v, -1.5, 0.1);
  REQUIRE(next.speed == 0.0);
  REQUIRE(next.position == Approx(50.0));
}

TEST_CASE("kinematic step keeps the previous acceleration for jerk") {
  VehicleState v = make_vehicle(1, 0, 0.0, 10.0);
  v.accel = 0.5;
  VehicleState next = step_kinematics(v, 1.0, 0.1);
  REQUIRE(next.prev_accel == Approx(0.5));
  REQUIRE(next.accel == Approx(1.0));
}

TEST_CASE("collision scan ignores healthy spacing") {
  std::vector<VehicleState> vs = {make_vehicle(1, 0, 100.0, 20.0),
                                  make_vehicle(2, 0, 50.0, 20.0)};
  WorldView view(std::move(vs));
  REQUIRE(detect_collisions(view).empty());
}

TEST_CASE("collision scan counts touching bumpers") {
  // leader front at 100, length 5 -> rear at 95; follower front at 95
  std::vector<VehicleState> vs = {make_vehicle(1, 0, 100.0, 20.0),
                                  make_vehicle(2, 0, 95.0, 20.0)};
  WorldView view(std::move(vs));
  auto events = detect_collisions(view);
  REQUIRE(events.size() == 1);
  REQUIRE(events[0].leader_id == 1);
  REQUIRE(events[0].follower_id == 2);
}

TEST_CASE("three-vehicle pileup yields two events") {
  std::vector<VehicleState> vs = {make_vehicle(1, 0, 100.0, 0.0),
                                  make_vehicle(2, 0, 96.0, 0.0),
                                  make_vehicle(3, 0, 92.0, 0.0)};
  WorldView view(std::move(vs));
  auto events = detect_collisions(view);
  REQUIRE(events.size() == 2);
}

TEST_CASE("world view neighbor queries respect lane and order") {
  std::vector<VehicleState> vs = {make_vehicle(1, 0, 100.0, 20.0),
                                  make_vehicle(2, 0, 50.0, 20.0),
                                  make_vehicle(3, 1, 75.0, 20.0)};
  WorldView view(std::move(vs));
  const VehicleState* me = view.find(2);
  REQUIRE(me != nullptr);
  REQUIRE(view.leader_of(*me)->id == 1);
  REQUIRE(view.follower_of(*me) == nullptr);
  REQUIRE(view.leader_in_lane(1, 50.0)->id == 3);
  REQUIRE(view.follower_in_lane(1, 100.0)->id == 3);
}

TEST_CASE("single follower converges to the analytic equilibrium gap") {
  IdmParams p;
  const double v_lead = 15.0;
  const double dt = 0.1;
  VehicleState leader = make_vehicle(1, 0, 100.0, v_lead);
  VehicleState follower = make_vehicle(2, 0, 40.0, v_lead);
  for (int step = 0; step < 3000; ++step) {
    double gap = bumper_gap(leader, follower);
    double a = idm_acceleration(follower.speed, follower.speed - leader.speed, gap, p);
    leader = step_kinematics(leader, 0.0, dt);
    follower = step_kinematics(follower, a, dt);
  }
  double oracle = equilibrium_gap_oracle(v_lead, p);
  REQUIRE(std::abs(bumper_gap(leader, follower) - oracle) < 0.5);
}

TEST_CASE("braking platoon of 20 produces no collisions") {
  IdmParams p;
  const double dt = 0.1;
  std::vector<VehicleState> platoon;
  double eq = 2.0 + 15.0 * 1.2;  // spawn near equilibrium spacing at 15 m/s
  for (int i = 0; i < 20; ++i) {
    platoon.push_back(make_vehicle(i, 0, 2000.0 - i * (eq + 5.0 + 2.0), 15.0));
  }
  bool any_collision = false;
  for (int step = 0; step < 4000; ++step) {
    std::vector<double> accels(platoon.size());
    for (std::size_t i = 0; i < platoon.size(); ++i) {
      if (i == 0) {
        accels[i] = platoon[i].speed > 0.0 ? -p.b : 0.0;
      } else {
        double gap = bumper_gap(platoon[i - 1], platoon[i]);
        if (gap <= 0.0) {
          any_collision = true;
          break;
        }
        accels[i] = idm_acceleration(platoon[i].speed, platoon[i].speed - platoon[i - 1].speed,
                                     gap, p);
      }
    }
    if (any_collision) break;
    for (std::size_t i = 0; i < platoon.size(); ++i) {
      platoon[i] = step_kinematics(platoon[i], accels[i], dt);
    }
    WorldView view(platoon);
    if (!detect_collisions(view).empty()) {
      any_collision = true;
      break;
    }
  }
  REQUIRE_FALSE(any_collision);
}

TEST_CASE("positions strictly increase while speed is positive") {
  RngStream rng(5, "kin");
  for (int trial = 0; trial < 50; ++trial) {
    VehicleState v = make_vehicle(1, 0, 0.0, rng.uniform(0.5, 30.0));
    for (int i = 0; i < 100; ++i) {
      double before = v.position;
      v = step_kinematics(v, rng.uniform(-3.0, 1.0), 0.1);
      REQUIRE(v.speed >= 0.0);
      if (v.speed > 0.0) REQUIRE(v.position > before);
    }
  }
}
