#include <catch2/catch_amalgamated.hpp>

#include "mergesim/rng.hpp"

using namespace mergesim;

TEST_CASE("identical seed and stream id reproduce the sequence") {
  RngStream a(42, "veh/7");
  RngStream b(42, "veh/7");
  for (int i = 0; i < 1000; ++i) {
    REQUIRE(a.next_u64() == b.next_u64());
  }
}

TEST_CASE("distinct stream ids decorrelate") {
  RngStream a(42, "veh/7");
  RngStream b(42, "veh/8");
  int same = 0;
  for (int i = 0; i < 1000; ++i) {
    if (a.next_u64() == b.next_u64()) ++same;
  }
  REQUIRE(same == 0);
}

TEST_CASE("u01 stays in the unit interval") {
  RngStream r(1, "u01");
  for (int i = 0; i < 10000; ++i) {
    double u = r.u01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("bernoulli frequency tracks p") {
  RngStream r(7, "bern");
  int hits = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    if (r.bernoulli(0.3)) ++hits;
  }
  double freq = static_cast<double>(hits) / n;
  REQUIRE(std::abs(freq - 0.3) < 0.01);
}

TEST_CASE("normal draws have unit-ish moments") {
  RngStream r(3, "norm");
  double sum = 0.0, sq = 0.0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    sum += x;
    sq += x * x;
  }
  REQUIRE(std::abs(sum / n) < 0.02);
  REQUIRE(std::abs(sq / n - 1.0) < 0.05);
}
