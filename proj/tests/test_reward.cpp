#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "mergesim/reward.hpp"
#include "mergesim/rng.hpp"

using namespace mergesim;
using Catch::Approx;

TEST_CASE("self reward worked examples") {
  RewardParams p;
  auto r = self_reward(3.0, 0.0, 30.0, p);
  REQUIRE(r.safety == Approx(-1.0));
  REQUIRE(r.comfort == Approx(0.0));
  REQUIRE(r.efficiency == Approx(0.0));
  REQUIRE(r.self_total == Approx(-1.0));

  r = self_reward(kInf, 0.0, 30.0, p);
  REQUIRE(r.self_total == Approx(0.0));

  r = self_reward(10.0, 2.0, 25.0, p);
  REQUIRE(r.self_total == Approx(-7.0).margin(1e-12));
}

TEST_CASE("self reward components are never positive") {
  RngStream rng(31, "reward");
  RewardParams p;
  for (int i = 0; i < 500; ++i) {
    double headway = rng.bernoulli(0.1) ? kInf : rng.uniform(0.1, 200.0);
    auto r = self_reward(headway, rng.uniform(-20.0, 20.0), rng.uniform(0.0, 40.0), p);
    REQUIRE(r.safety <= 0.0);
    REQUIRE(r.comfort <= 0.0);
    REQUIRE(r.efficiency <= 0.0);
    REQUIRE(r.self_total <= 0.0);
  }
}

TEST_CASE("cooperative reward worked examples") {
  REQUIRE(coop_reward({{0.8, -1.0}, {0.2, -3.0}}) == Approx(-1.4).margin(1e-12));
  REQUIRE(coop_reward({}) == Approx(0.0));
  REQUIRE(coop_reward({{0.5, -2.5}, {0.5, -2.5}}) == Approx(-2.5).margin(1e-12));
}

TEST_CASE("cooperative reward stays within neighbor bounds and scale-invariant") {
  RngStream rng(32, "coop");
  for (int i = 0; i < 300; ++i) {
    int n = 1 + static_cast<int>(rng.uniform_index(5));
    std::vector<std::pair<double, double>> xs;
    double lo = kInf, hi = -kInf;
    for (int k = 0; k < n; ++k) {
      double t = rng.uniform(0.01, 1.0);
      double r = rng.uniform(-10.0, 0.0);
      xs.push_back({t, r});
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
    double c = coop_reward(xs);
    REQUIRE(c >= lo - 1e-12);
    REQUIRE(c <= hi + 1e-12);

    double scale = rng.uniform(0.1, 5.0);
    auto scaled = xs;
    for (auto& [t, r] : scaled) t *= scale;
    REQUIRE(coop_reward(scaled) == Approx(c).margin(1e-9));
  }
}

TEST_CASE("total reward worked examples and identities") {
  REQUIRE(total_reward(-2.0, -1.4, 0.0) == Approx(-2.0));
  REQUIRE(total_reward(-2.0, -1.4, 1.0) == Approx(-1.4));
  REQUIRE(total_reward(-2.0, -1.4, 0.5) == Approx(-1.7).margin(1e-12));
}

TEST_CASE("total reward is a convex combination") {
  RngStream rng(33, "blend");
  for (int i = 0; i < 500; ++i) {
    double s = rng.uniform(-10.0, 0.0);
    double c = rng.uniform(-10.0, 0.0);
    double l = rng.u01();
    double t = total_reward(s, c, l);
    REQUIRE(t >= std::min(s, c) - 1e-12);
    REQUIRE(t <= std::max(s, c) + 1e-12);
  }
}
