#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "mergesim/rng.hpp"
#include "mergesim/trust.hpp"

using namespace mergesim;
using Catch::Approx;

TEST_CASE("trust update worked examples") {
  TrustParams p;  // alpha_hat 0.6
  REQUIRE(update_trust(0.5, 1, p) == Approx(0.8).margin(1e-12));
  REQUIRE(update_trust(0.5, 0, p) == Approx(0.2).margin(1e-12));
  REQUIRE(update_trust(1.0, 1, p) == Approx(1.0).margin(1e-15));
}

TEST_CASE("trust update maps the unit interval into itself") {
  RngStream rng(21, "trust-closure");
  for (int i = 0; i < 1000; ++i) {
    TrustParams p;
    p.alpha_hat = rng.uniform(1e-6, 1.0 - 1e-6);
    double t = rng.u01();
    int delta = rng.bernoulli(0.5) ? 1 : 0;
    double next = update_trust(t, delta, p);
    REQUIRE(next >= 0.0);
    REQUIRE(next <= 1.0);
  }
}

TEST_CASE("constant delta converges geometrically") {
  RngStream rng(22, "trust-geo");
  for (int trial = 0; trial < 200; ++trial) {
    TrustParams p;
    p.alpha_hat = rng.uniform(0.05, 0.95);
    double t0 = rng.u01();
    int delta = rng.bernoulli(0.5) ? 1 : 0;
    double t = t0;
    for (int k = 1; k <= 25; ++k) {
      t = update_trust(t, delta, p);
      double expected = std::pow(1.0 - p.alpha_hat, k) * std::abs(t0 - delta);
      REQUIRE(std::abs(std::abs(t - delta) - expected) < 1e-12);
    }
  }
}

TEST_CASE("cooperation factor boundary and worked values") {
  REQUIRE(cooperation_factor(0.4, 0.4) == Approx(0.0));
  REQUIRE(cooperation_factor(1.0, 0.4) == Approx(1.0));
  REQUIRE(cooperation_factor(0.7, 0.4) == Approx(0.5).margin(1e-12));
  REQUIRE(cooperation_factor(0.1, 0.4) == Approx(0.0));
}

TEST_CASE("cooperation factor is nondecreasing and zero below tau") {
  double tau = 0.4;
  double prev = -1.0;
  for (int i = 0; i <= 1000; ++i) {
    double t = i / 1000.0;
    double l = cooperation_factor(t, tau);
    REQUIRE(l >= prev);
    if (t <= tau) REQUIRE(l == 0.0);
    prev = l;
  }
}

TEST_CASE("game gate is inclusive at tau and consistent with the factor") {
  double tau = 0.4;
  REQUIRE(game_type(0.39, tau) == GameType::NonCooperative);
  REQUIRE(game_type(0.4, tau) == GameType::Cooperative);
  REQUIRE(game_type(1.0, tau) == GameType::Cooperative);
  RngStream rng(23, "gate");
  for (int i = 0; i < 500; ++i) {
    double t = rng.u01();
    if (game_type(t, tau) == GameType::NonCooperative) {
      REQUIRE(cooperation_factor(t, tau) == 0.0);
    }
  }
}

TEST_CASE("trust matrix initializes on first contact and purges on despawn") {
  TrustMatrix m;
  REQUIRE_FALSE(m.has(1, 2));
  REQUIRE(m.get_or_init(1, 2) == Approx(0.5));
  REQUIRE(m.has(1, 2));
  m.apply_observation(1, 2, 1);
  REQUIRE(*m.get(1, 2) == Approx(0.8).margin(1e-12));
  m.purge(2);
  REQUIRE_FALSE(m.has(1, 2));
}

TEST_CASE("weighted neighborhood mean uses sum T^2 over sum T") {
  TrustMatrix m;
  m.set(1, 2, 0.8);
  m.set(1, 3, 0.2);
  auto mean = m.weighted_mean(1, {2, 3});
  REQUIRE(mean.has_value());
  REQUIRE(*mean == Approx((0.64 + 0.04) / 1.0).margin(1e-12));
  REQUIRE_FALSE(m.weighted_mean(1, {}).has_value());
}

namespace {

VehicleState vehicle(int id, int lane, double pos, double speed,
                     VehicleClass cls = VehicleClass::HV) {
  VehicleState v;
  v.id = id;
  v.lane = lane;
  v.position = pos;
  v.speed = speed;
  v.cls = cls;
  return v;
}

}  // namespace

TEST_CASE("classification skips vehicles outside scan range") {
  CoopRuleParams p;
  WorldView pre({vehicle(1, 0, 0.0, 20.0, VehicleClass::CAV), vehicle(2, 0, 500.0, 20.0)});
  WorldView post({vehicle(1, 0, 20.0, 20.0, VehicleClass::CAV), vehicle(2, 0, 520.0, 20.0)});
  REQUIRE_FALSE(classify_cooperative(pre, post, 1, 2, std::nullopt, p).has_value());
}

TEST_CASE("yielding to a signaled merge classifies cooperative") {
  CoopRuleParams p;
  // observer on the ramp intends lane 0; observed follower decelerates,
  // opening the gap
  WorldView pre({vehicle(1, kRampLane, 100.0, 20.0, VehicleClass::CAV),
                 vehicle(2, 0, 90.0, 22.0)});
  WorldView post({vehicle(1, kRampLane, 120.0, 20.0, VehicleClass::CAV),
                  vehicle(2, 0, 111.0, 20.7)});
  auto delta = classify_cooperative(pre, post, 1, 2, 0, p);
  REQUIRE(delta.has_value());
  REQUIRE(*delta == 1);
}

TEST_CASE("cut-in below the safety threshold classifies uncooperative") {
  CoopRuleParams p;  // d_safe = 4
  // observed moves from lane 1 into lane 0 three meters ahead of observer
  WorldView pre({vehicle(1, 0, 100.0, 20.0, VehicleClass::CAV), vehicle(2, 1, 104.0, 20.0)});
  WorldView post({vehicle(1, 0, 120.0, 20.0, VehicleClass::CAV), vehicle(2, 0, 128.0, 20.0)});
  // post: observed front 128, rear 123, observer front 120 -> gap 3 < 4
  auto delta = classify_cooperative(pre, post, 1, 2, 1, p);
  REQUIRE(delta.has_value());
  REQUIRE(*delta == 0);
}

TEST_CASE("gap denial against a merge intent classifies uncooperative") {
  CoopRuleParams p;
  // observer merging into lane 0; observed accelerates while the gap closes
  WorldView pre({vehicle(1, kRampLane, 100.0, 20.0, VehicleClass::CAV),
                 vehicle(2, 0, 80.0, 21.0)});
  WorldView post({vehicle(1, kRampLane, 120.0, 20.0, VehicleClass::CAV),
                  vehicle(2, 0, 103.0, 23.0)});
  auto delta = classify_cooperative(pre, post, 1, 2, 0, p);
  REQUIRE(delta.has_value());
  REQUIRE(*delta == 0);
}

TEST_CASE("forcing hard braking classifies uncooperative") {
  CoopRuleParams p;
  // observed leads the observer closely at much lower speed in post
  WorldView pre({vehicle(1, 0, 100.0, 25.0, VehicleClass::CAV), vehicle(2, 0, 140.0, 25.0)});
  WorldView post({vehicle(1, 0, 125.0, 25.0, VehicleClass::CAV), vehicle(2, 0, 145.0, 8.0)});
  auto delta = classify_cooperative(pre, post, 1, 2, std::nullopt, p);
  REQUIRE(delta.has_value());
  REQUIRE(*delta == 0);
}
