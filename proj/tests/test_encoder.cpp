#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "mergesim/encoder.hpp"
#include "mergesim/rng.hpp"

using namespace mergesim;
using Catch::Approx;

namespace {

VehicleState vehicle(int id, int lane, double pos, double speed,
                     VehicleClass cls = VehicleClass::CAV) {
  VehicleState v;
  v.id = id;
  v.lane = lane;
  v.position = pos;
  v.speed = speed;
  v.cls = cls;
  return v;
}

double rel_err(double a, double b) {
  double denom = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / denom;
}

}  // namespace

TEST_CASE("empty road observation carries sentinels") {
  ObservationLayout layout;
  WorldView view({vehicle(1, 0, 500.0, 20.0)});
  Vec obs = observe(view, 1, layout);
  REQUIRE(obs.size() == layout.dim());
  int base = layout.ego_dim();
  for (int slot = 0; slot < 6; ++slot) {
    REQUIRE(obs[base + slot * 3] == 0.0);
    REQUIRE(obs[base + slot * 3 + 1] == Approx(layout.scan_range));
    REQUIRE(obs[base + slot * 3 + 2] == 0.0);
  }
  int gbase = base + layout.local_dim();
  REQUIRE(obs[gbase] == Approx(0.0));      // density
  REQUIRE(obs[gbase + 1] == Approx(0.0));  // sentinel mean speed
}

TEST_CASE("single leader fills the same-lane slot") {
  ObservationLayout layout;
  WorldView view({vehicle(1, 0, 500.0, 25.0), vehicle(2, 0, 530.0, 20.0)});
  Vec obs = observe(view, 1, layout);
  int base = layout.ego_dim();
  REQUIRE(obs[base] == 1.0);
  REQUIRE(obs[base + 1] == Approx(30.0));
  REQUIRE(obs[base + 2] == Approx(-5.0));
  // follower slot empty
  REQUIRE(obs[base + 3] == 0.0);
}

TEST_CASE("scan boundary at exactly 100 m is included") {
  ObservationLayout layout;
  WorldView view({vehicle(1, 0, 500.0, 25.0), vehicle(2, 0, 600.0, 20.0)});
  Vec obs = observe(view, 1, layout);
  int base = layout.ego_dim();
  REQUIRE(obs[base] == 1.0);
  REQUIRE(obs[base + 1] == Approx(100.0));

  WorldView outside({vehicle(1, 0, 500.0, 25.0), vehicle(2, 0, 600.01, 20.0)});
  Vec obs2 = observe(outside, 1, layout);
  REQUIRE(obs2[base] == 0.0);
}

TEST_CASE("observation is translation invariant") {
  ObservationLayout layout;
  RngStream rng(61, "obs-shift");
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<VehicleState> vs;
    vs.push_back(vehicle(1, 0, 2000.0, rng.uniform(5.0, 30.0)));
    for (int k = 0; k < 5; ++k) {
      vs.push_back(vehicle(2 + k, static_cast<int>(rng.uniform_index(2)),
                           2000.0 + rng.uniform(-200.0, 200.0), rng.uniform(5.0, 30.0)));
    }
    double shift = rng.uniform(-500.0, 500.0);
    auto shifted = vs;
    for (auto& v : shifted) v.position += shift;
    Vec a = observe(WorldView(vs), 1, layout);
    Vec b = observe(WorldView(shifted), 1, layout);
    REQUIRE((a - b).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("group density counts the +-250 m band") {
  ObservationLayout layout;
  std::vector<VehicleState> vs = {vehicle(1, 0, 1000.0, 20.0), vehicle(2, 0, 1200.0, 10.0),
                                  vehicle(3, 1, 850.0, 30.0), vehicle(4, 0, 1400.0, 10.0)};
  Vec obs = observe(WorldView(vs), 1, layout);
  int gbase = layout.ego_dim() + layout.local_dim();
  REQUIRE(obs[gbase] == Approx(2.0 / 0.5));  // 2 vehicles in 500 m -> 4 veh/km
  REQUIRE(obs[gbase + 1] == Approx(20.0));
}

TEST_CASE("history pads short windows by repeating the earliest frame") {
  ObservationHistory h(3);
  Vec a = Vec::Constant(2, 1.0), b = Vec::Constant(2, 2.0);
  h.push(a);
  auto frames = h.padded();
  REQUIRE(frames.size() == 4);
  for (const Vec& f : frames) REQUIRE(f[0] == 1.0);
  h.push(b);
  frames = h.padded();
  REQUIRE(frames.size() == 4);
  REQUIRE(frames[0][0] == 1.0);
  REQUIRE(frames[3][0] == 2.0);
}

TEST_CASE("zero cell maps zero input to zero output") {
  LstmParams p = LstmParams::zeros(4, 3);
  Vec x = Vec::Zero(4), h = Vec::Zero(3), c = Vec::Zero(3);
  auto out = lstm_step(p, x, h, c);
  REQUIRE(out.h.cwiseAbs().maxCoeff() == Approx(0.0));
  REQUIRE(out.c.cwiseAbs().maxCoeff() == Approx(0.0));
}

TEST_CASE("zero-parameter cell halves the carried state") {
  // all gates sigmoid(0) = 0.5 and candidate tanh(0) = 0, so c' = 0.5 c and
  // h' = 0.5 tanh(0.5 c)
  LstmParams p = LstmParams::zeros(2, 3);
  Vec x = Vec::Zero(2), h = Vec::Zero(3);
  Vec c = Vec::Constant(3, 1.0);
  auto out = lstm_step(p, x, h, c);
  for (int k = 0; k < 3; ++k) {
    REQUIRE(out.c[k] == Approx(0.5).margin(1e-12));
    REQUIRE(out.h[k] == Approx(0.5 * std::tanh(0.5)).margin(1e-12));
  }
}

TEST_CASE("cell rejects shape mismatches") {
  LstmParams p = LstmParams::zeros(4, 3);
  Vec x = Vec::Zero(5), h = Vec::Zero(3), c = Vec::Zero(3);
  REQUIRE_THROWS_AS(lstm_step(p, x, h, c), ContractViolation);
}

TEST_CASE("cell jacobian matches central finite differences") {
  const int D = 3, H = 4;
  RngStream rng(62, "lstm-fd");
  LstmParams p = LstmParams::init(D, H, rng, 0.4);
  for (Eigen::Index i = 0; i < p.b.rows(); ++i) p.b(i, 0) = 0.2 * rng.normal();
  Vec x(D), h0(H), c0(H);
  for (int k = 0; k < D; ++k) x[k] = rng.normal();
  for (int k = 0; k < H; ++k) {
    h0[k] = 0.5 * rng.normal();
    c0[k] = 0.5 * rng.normal();
  }

  // scalar projection of h' with a fixed random cotangent
  Vec u(H);
  for (int k = 0; k < H; ++k) u[k] = rng.normal();
  auto loss = [&](const LstmParams& q) {
    return u.dot(lstm_step(q, x, h0, c0).h);
  };

  LstmCache cache;
  lstm_step(p, x, h0, c0, &cache);
  LstmParams grads = LstmParams::zeros(D, H);
  lstm_backward_step(p, cache, u, Vec::Zero(H), grads);

  const double eps = 1e-5;
  auto check = [&](Mat& param, const Mat& grad) {
    for (Eigen::Index i = 0; i < param.rows(); ++i) {
      for (Eigen::Index j = 0; j < param.cols(); ++j) {
        double keep = param(i, j);
        param(i, j) = keep + eps;
        double up = loss(p);
        param(i, j) = keep - eps;
        double dn = loss(p);
        param(i, j) = keep;
        double fd = (up - dn) / (2.0 * eps);
        REQUIRE(rel_err(fd, grad(i, j)) < 1e-4);
      }
    }
  };
  check(p.W, grads.W);
  check(p.U, grads.U);
  check(p.b, grads.b);
}

TEST_CASE("history encoding folds from the oldest frame") {
  const int D = 2, H = 3;
  RngStream rng(63, "fold");
  LstmParams p = LstmParams::init(D, H, rng, 0.5);

  // k = 0: single step from zero state
  Vec x0(D);
  x0 << 0.3, -0.7;
  Vec single = encode_history(p, {x0});
  auto direct = lstm_step(p, x0, Vec::Zero(H), Vec::Zero(H));
  REQUIRE((single - direct.h).cwiseAbs().maxCoeff() < 1e-15);

  // constant history equals manual iteration
  std::vector<Vec> frames(5, x0);
  Vec folded = encode_history(p, frames);
  Vec h = Vec::Zero(H), c = Vec::Zero(H);
  for (int t = 0; t < 5; ++t) {
    auto out = lstm_step(p, x0, h, c);
    h = out.h;
    c = out.c;
  }
  REQUIRE((folded - h).cwiseAbs().maxCoeff() < 1e-15);

  // zero parameters give zero output for any history
  LstmParams z = LstmParams::zeros(D, H);
  REQUIRE(encode_history(z, frames).cwiseAbs().maxCoeff() == Approx(0.0));
}

TEST_CASE("temporal order matters for non-constant histories") {
  const int D = 2, H = 4;
  RngStream rng(64, "order");
  LstmParams p = LstmParams::init(D, H, rng, 0.6);
  std::vector<Vec> frames;
  for (int t = 0; t < 6; ++t) {
    Vec x(D);
    x << rng.normal(), rng.normal();
    frames.push_back(x);
  }
  auto reversed = frames;
  std::reverse(reversed.begin(), reversed.end());
  Vec a = encode_history(p, frames);
  Vec b = encode_history(p, reversed);
  REQUIRE((a - b).cwiseAbs().maxCoeff() > 1e-8);
}

TEST_CASE("full history gradient matches finite differences") {
  const int D = 8, H = 4;
  RngStream rng(65, "bptt-fd");
  LstmParams p = LstmParams::init(D, H, rng, 0.3);
  std::vector<Vec> frames;
  for (int t = 0; t < 5; ++t) {
    Vec x(D);
    for (int k = 0; k < D; ++k) x[k] = rng.normal();
    frames.push_back(x);
  }
  Vec u(H);
  for (int k = 0; k < H; ++k) u[k] = rng.normal();
  auto loss = [&](const LstmParams& q) { return u.dot(encode_history(q, frames)); };

  std::vector<LstmCache> caches;
  encode_history(p, frames, &caches);
  LstmParams grads = LstmParams::zeros(D, H);
  encode_history_backward(p, caches, u, grads);

  const double eps = 1e-5;
  auto grad_pairs = p.tensors();
  auto grads_pairs = grads.tensors();
  for (std::size_t t = 0; t < grad_pairs.size(); ++t) {
    Mat& param = *grad_pairs[t].second;
    const Mat& g = *grads_pairs[t].second;
    for (Eigen::Index i = 0; i < param.rows(); ++i) {
      for (Eigen::Index j = 0; j < param.cols(); ++j) {
        double keep = param(i, j);
        param(i, j) = keep + eps;
        double up = loss(p);
        param(i, j) = keep - eps;
        double dn = loss(p);
        param(i, j) = keep;
        double fd = (up - dn) / (2.0 * eps);
        REQUIRE(rel_err(fd, g(i, j)) < 1e-3);
      }
    }
  }
}

TEST_CASE("zero-weight policy head is uniform with zero mean") {
  PolicyParams p = PolicyParams::zeros(4);
  Vec h = Vec::Constant(4, 0.7);
  PolicyOut out = policy_forward(p, h);
  for (int k = 0; k < kLateralActions; ++k) {
    REQUIRE(out.probs[k] == Approx(1.0 / 3.0).margin(1e-12));
  }
  REQUIRE(out.mean_accel == Approx(0.0));
}

TEST_CASE("softmax worked example") {
  Vec logits(3);
  logits << std::log(2.0), 0.0, 0.0;
  Vec probs = softmax(logits);
  REQUIRE(probs[0] == Approx(0.5).margin(1e-12));
  REQUIRE(probs[1] == Approx(0.25).margin(1e-12));
  REQUIRE(probs[2] == Approx(0.25).margin(1e-12));
}

TEST_CASE("softmax normalizes for random parameter draws") {
  RngStream rng(66, "softmax");
  for (int i = 0; i < 100; ++i) {
    PolicyParams p = PolicyParams::init(5, rng, 1.0);
    Vec h(5);
    for (int k = 0; k < 5; ++k) h[k] = rng.normal();
    PolicyOut out = policy_forward(p, h);
    REQUIRE(out.probs.sum() == Approx(1.0).margin(1e-12));
    REQUIRE(out.probs.minCoeff() >= 0.0);
  }
}

TEST_CASE("policy head gradient matches finite differences") {
  const int H = 4;
  RngStream rng(67, "head-fd");
  PolicyParams p = PolicyParams::init(H, rng, 0.4);
  Vec h(H);
  for (int k = 0; k < H; ++k) h[k] = rng.normal();

  // scalar loss mixing all heads: u . logits + a * mu + b * log_std
  Vec u(kLateralActions);
  for (int k = 0; k < kLateralActions; ++k) u[k] = rng.normal();
  double a = rng.normal(), b = rng.normal();
  auto loss = [&](const PolicyParams& q) {
    PolicyOut out = policy_forward(q, h);
    return u.dot(out.logits) + a * out.mu + b * out.log_std;
  };

  PolicyOut out = policy_forward(p, h);
  PolicyParams grads = PolicyParams::zeros(H);
  policy_backward(p, h, out, u, a, b, grads);

  const double eps = 1e-5;
  auto ps = p.tensors();
  auto gs = grads.tensors();
  for (std::size_t t = 0; t < ps.size(); ++t) {
    Mat& param = *ps[t].second;
    const Mat& g = *gs[t].second;
    for (Eigen::Index i = 0; i < param.rows(); ++i) {
      for (Eigen::Index j = 0; j < param.cols(); ++j) {
        double keep = param(i, j);
        param(i, j) = keep + eps;
        double up = loss(p);
        param(i, j) = keep - eps;
        double dn = loss(p);
        param(i, j) = keep;
        double fd = (up - dn) / (2.0 * eps);
        REQUIRE(rel_err(fd, g(i, j)) < 1e-4);
      }
    }
  }
}

TEST_CASE("checkpoint round-trips tensors exactly and validates shapes") {
  RngStream rng(68, "ckpt");
  LstmParams p = LstmParams::init(6, 4, rng, 0.8);
  PolicyParams q = PolicyParams::init(4, rng, 0.8);
  std::vector<std::pair<std::string, Mat*>> tensors = p.tensors();
  for (auto& t : q.tensors()) tensors.push_back(t);

  std::ostringstream os;
  save_tensors(os, tensors);

  LstmParams p2 = LstmParams::zeros(6, 4);
  PolicyParams q2 = PolicyParams::zeros(4);
  std::vector<std::pair<std::string, Mat*>> loaded = p2.tensors();
  for (auto& t : q2.tensors()) loaded.push_back(t);
  std::istringstream is(os.str());
  load_tensors(is, loaded);
  REQUIRE((p.W - p2.W).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((q.w_lat - q2.w_lat).cwiseAbs().maxCoeff() == 0.0);

  // wrong shape must be rejected
  LstmParams bad = LstmParams::zeros(6, 5);
  auto bad_list = bad.tensors();
  std::istringstream is2(os.str());
  REQUIRE_THROWS_AS(load_tensors(is2, bad_list), ConfigError);
}
