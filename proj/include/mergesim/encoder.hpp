#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mergesim/dynamics.hpp"
#include "mergesim/rng.hpp"
#include "mergesim/scenario.hpp"
#include "mergesim/types.hpp"

namespace mergesim {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Observation encoding
// ---------------------------------------------------------------------------

// Fixed-width multi-scale observation: ego features, six relational neighbor
// slots ({leader, follower} x {same, left, right}), and group statistics over
// a +-group_window chainage band.
struct ObservationLayout {
  int mainline_lanes = 2;
  double scan_range = 100.0;   // m, closed ball
  double group_window = 250.0; // m each side
  bool include_trust = false;  // optionally append the trust-weighted mean

  int lane_slots() const { return mainline_lanes + 1; }  // + ramp
  int ego_dim() const { return 2 + lane_slots() + 1 + (include_trust ? 1 : 0); }
  int local_dim() const { return 6 * 3; }
  int group_dim() const { return 2; }
  int dim() const { return ego_dim() + local_dim() + group_dim(); }
};

namespace detail {

inline void fill_neighbor_slot(Vec& obs, int base, const VehicleState* n,
                               const VehicleState& ego, double scan_range) {
  if (n && std::abs(n->position - ego.position) <= scan_range) {
    obs[base] = 1.0;
    obs[base + 1] = n->position - ego.position;
    obs[base + 2] = n->speed - ego.speed;
  } else {
    obs[base] = 0.0;
    obs[base + 1] = scan_range;
    obs[base + 2] = 0.0;
  }
}

}  // namespace detail

// Raw (unnormalized) observation vector for one agent. Lane adjacency mirrors
// the merge geometry: the ramp's left neighbor lane is mainline lane 0; lane
// 0's right neighbor is the ramp.
inline Vec observe(const WorldView& view, int agent_id, const ObservationLayout& layout,
                   double trust_mean = 0.0) {
  const VehicleState* ego = view.find(agent_id);
  if (!ego) throw ContractViolation("observe: agent is not alive");
  Vec obs = Vec::Zero(layout.dim());
  int k = 0;
  obs[k++] = ego->speed;
  obs[k++] = ego->accel;
  for (int lane = 0; lane < layout.mainline_lanes; ++lane) {
    obs[k++] = ego->lane == lane ? 1.0 : 0.0;
  }
  obs[k++] = ego->lane == kRampLane ? 1.0 : 0.0;
  obs[k++] = ego->origin == Origin::Ramp ? 1.0 : 0.0;
  if (layout.include_trust) obs[k++] = trust_mean;

  int left = ego->lane == kRampLane ? 0 : ego->lane + 1;
  int right = ego->lane == kRampLane ? -1000 : (ego->lane == 0 ? kRampLane : ego->lane - 1);
  if (left >= layout.mainline_lanes) left = -1000;
  const int lanes[3] = {ego->lane, left, right};
  for (int lane : lanes) {
    const VehicleState* leader =
        lane == -1000 ? nullptr : view.leader_in_lane(lane, ego->position, ego->id);
    const VehicleState* follower =
        lane == -1000 ? nullptr : view.follower_in_lane(lane, ego->position, ego->id);
    detail::fill_neighbor_slot(obs, k, leader, *ego, layout.scan_range);
    k += 3;
    detail::fill_neighbor_slot(obs, k, follower, *ego, layout.scan_range);
    k += 3;
  }

  int count = 0;
  double speed_sum = 0.0;
  for (const VehicleState& v : view.vehicles()) {
    if (v.id == ego->id) continue;
    if (std::abs(v.position - ego->position) <= layout.group_window) {
      ++count;
      speed_sum += v.speed;
    }
  }
  obs[k++] = static_cast<double>(count) / (2.0 * layout.group_window / 1000.0);
  obs[k++] = count > 0 ? speed_sum / count : 0.0;
  return obs;
}

// Positions scaled by the scan range, speeds by the desired speed, density
// by 100 veh/km.
inline Vec normalize_observation(const Vec& obs, const ObservationLayout& layout,
                                 double v_d = 30.0) {
  Vec x = obs;
  x[0] /= v_d;
  int local_base = layout.ego_dim();
  for (int slot = 0; slot < 6; ++slot) {
    x[local_base + slot * 3 + 1] /= layout.scan_range;
    x[local_base + slot * 3 + 2] /= v_d;
  }
  int group_base = local_base + layout.local_dim();
  x[group_base] /= 100.0;
  x[group_base + 1] /= v_d;
  return x;
}

// Sliding window of the most recent window_k + 1 observations; short
// histories repeat the earliest frame.
class ObservationHistory {
 public:
  explicit ObservationHistory(int window_k = 8) : capacity_(window_k + 1) {}

  void push(Vec obs) {
    frames_.push_back(std::move(obs));
    if (static_cast<int>(frames_.size()) > capacity_) frames_.pop_front();
  }

  bool empty() const { return frames_.empty(); }

  // Oldest-to-newest frames, left-padded by repetition to the full window.
  std::vector<Vec> padded() const {
    if (frames_.empty()) throw ContractViolation("ObservationHistory: empty window");
    std::vector<Vec> out;
    out.reserve(capacity_);
    for (int i = static_cast<int>(frames_.size()); i < capacity_; ++i) {
      out.push_back(frames_.front());
    }
    for (const Vec& f : frames_) out.push_back(f);
    return out;
  }

 private:
  int capacity_;
  std::deque<Vec> frames_;
};

// ---------------------------------------------------------------------------
// Recurrent cell (4-gate, gate order i, f, g, o) with manual backprop
// ---------------------------------------------------------------------------

struct LstmParams {
  Mat W;  // 4H x D
  Mat U;  // 4H x H
  Mat b;  // 4H x 1

  static LstmParams zeros(int input_dim, int hidden) {
    LstmParams p;
    p.W = Mat::Zero(4 * hidden, input_dim);
    p.U = Mat::Zero(4 * hidden, hidden);
    p.b = Mat::Zero(4 * hidden, 1);
    return p;
  }

  static LstmParams init(int input_dim, int hidden, RngStream& rng, double scale = 0.1) {
    LstmParams p = zeros(input_dim, hidden);
    auto fill = [&](Mat& m) {
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          m(i, j) = scale * rng.normal();
    };
    fill(p.W);
    fill(p.U);
    return p;
  }

  int hidden() const { return static_cast<int>(U.cols()); }
  int input_dim() const { return static_cast<int>(W.cols()); }

  std::vector<std::pair<std::string, Mat*>> tensors() {
    return {{"lstm.W", &W}, {"lstm.U", &U}, {"lstm.b", &b}};
  }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LstmCache {
  Vec x, h_prev, c_prev;
  Vec i, f, g, o, c, tanh_c;
};

struct LstmStepOut {
  Vec h, c;
};

inline LstmStepOut lstm_step(const LstmParams& p, const Vec& x, const Vec& h_prev,
                             const Vec& c_prev, LstmCache* cache = nullptr) {
  const int H = p.hidden();
  if (x.size() != p.input_dim() || h_prev.size() != H || c_prev.size() != H) {
    throw ContractViolation("lstm_step: shape mismatch");
  }
  Vec z = p.W * x + p.U * h_prev + p.b.col(0);
  Vec i(H), f(H), g(H), o(H);
  for (int k = 0; k < H; ++k) {
    i[k] = sigmoid(z[k]);
    f[k] = sigmoid(z[H + k]);
    g[k] = std::tanh(z[2 * H + k]);
    o[k] = sigmoid(z[3 * H + k]);
  }
  Vec c = f.cwiseProduct(c_prev) + i.cwiseProduct(g);
  Vec tanh_c = c.array().tanh();
  Vec h = o.cwiseProduct(tanh_c);
  if (cache) {
    cache->x = x;
    cache->h_prev = h_prev;
    cache->c_prev = c_prev;
    cache->i = i;
    cache->f = f;
    cache->g = g;
    cache->o = o;
    cache->c = c;
    cache->tanh_c = tanh_c;
  }
  return {h, c};
}

struct LstmStepGrads {
  Vec dx, dh_prev, dc_prev;
};

// Accumulates parameter gradients into `grads` and returns the upstream
// cotangents for x, h_prev, c_prev.
inline LstmStepGrads lstm_backward_step(const LstmParams& p, const LstmCache& cc,
                                        const Vec& dh, const Vec& dc_in,
                                        LstmParams& grads) {
  const int H = p.hidden();
  Vec do_ = dh.cwiseProduct(cc.tanh_c);
  Vec dc = dc_in + dh.cwiseProduct(cc.o).cwiseProduct(
                       (1.0 - cc.tanh_c.array().square()).matrix());
  Vec di = dc.cwiseProduct(cc.g);
  Vec dg = dc.cwiseProduct(cc.i);
  Vec df = dc.cwiseProduct(cc.c_prev);
  Vec dc_prev = dc.cwiseProduct(cc.f);

  Vec dz(4 * H);
  for (int k = 0; k < H; ++k) {
    dz[k] = di[k] * cc.i[k] * (1.0 - cc.i[k]);
    dz[H + k] = df[k] * cc.f[k] * (1.0 - cc.f[k]);
    dz[2 * H + k] = dg[k] * (1.0 - cc.g[k] * cc.g[k]);
    dz[3 * H + k] = do_[k] * cc.o[k] * (1.0 - cc.o[k]);
  }
  grads.W.noalias() += dz * cc.x.transpose();
  grads.U.noalias() += dz * cc.h_prev.transpose();
  grads.b.col(0).noalias() += dz;
  return {p.W.transpose() * dz, p.U.transpose() * dz, dc_prev};
}

// Folds the window oldest-to-newest from a zero state.
inline Vec encode_history(const LstmParams& p, const std::vector<Vec>& frames,
                          std::vector<LstmCache>* caches = nullptr) {
  if (frames.empty()) throw ContractViolation("encode_history: empty history");
  const int H = p.hidden();
  Vec h = Vec::Zero(H), c = Vec::Zero(H);
  if (caches) caches->resize(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) {
    LstmStepOut out = lstm_step(p, frames[t], h, c, caches ? &(*caches)[t] : nullptr);
    h = out.h;
    c = out.c;
  }
  return h;
}

// Backpropagation through the full window given d(loss)/d(final h).
inline void encode_history_backward(const LstmParams& p, const std::vector<LstmCache>& caches,
                                    const Vec& dh_final, LstmParams& grads) {
  Vec dh = dh_final;
  Vec dc = Vec::Zero(p.hidden());
  for (std::size_t t = caches.size(); t-- > 0;) {
    LstmStepGrads g = lstm_backward_step(p, caches[t], dh, dc, grads);
    dh = g.dh_prev;
    dc = g.dc_prev;
  }
}

// ---------------------------------------------------------------------------
// Policy head: categorical lateral logits + squashed-Gaussian longitudinal
// ---------------------------------------------------------------------------

inline constexpr int kLateralActions = 3;  // KeepLane, ChangeLeft, ChangeRight
inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct PolicyParams {
  Mat w_lat;  // 3 x H
  Mat b_lat;  // 3 x 1
  Mat w_mu;   // 1 x H
  Mat b_mu;   // 1 x 1
  Mat w_ls;   // 1 x H
  Mat b_ls;   // 1 x 1
  double a_max = 1.0;

  static PolicyParams zeros(int hidden, double a_max = 1.0) {
    PolicyParams p;
    p.w_lat = Mat::Zero(kLateralActions, hidden);
    p.b_lat = Mat::Zero(kLateralActions, 1);
    p.w_mu = Mat::Zero(1, hidden);
    p.b_mu = Mat::Zero(1, 1);
    p.w_ls = Mat::Zero(1, hidden);
    p.b_ls = Mat::Zero(1, 1);
    p.a_max = a_max;
    return p;
  }

  static PolicyParams init(int hidden, RngStream& rng, double scale = 0.1,
                           double a_max = 1.0) {
    PolicyParams p = zeros(hidden, a_max);
    auto fill = [&](Mat& m) {
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          m(i, j) = scale * rng.normal();
    };
    fill(p.w_lat);
    fill(p.w_mu);
    fill(p.w_ls);
    return p;
  }

  std::vector<std::pair<std::string, Mat*>> tensors() {
    return {{"policy.w_lat", &w_lat}, {"policy.b_lat", &b_lat}, {"policy.w_mu", &w_mu},
            {"policy.b_mu", &b_mu},   {"policy.w_ls", &w_ls},   {"policy.b_ls", &b_ls}};
  }
};

struct PolicyOut {
  Vec logits;   // 3
  Vec probs;    // softmax(logits)
  double mu = 0.0;       // pre-squash Gaussian mean
  double log_std = 0.0;  // clamped
  double mean_accel = 0.0;  // a_max * tanh(mu)
};

inline Vec softmax(const Vec& logits) {
  double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp();
  return e / e.sum();
}

inline PolicyOut policy_forward(const PolicyParams& p, const Vec& h) {
  if (h.size() != p.w_lat.cols()) throw ContractViolation("policy_forward: shape mismatch");
  PolicyOut out;
  out.logits = p.w_lat * h + p.b_lat.col(0);
  out.probs = softmax(out.logits);
  out.mu = (p.w_mu * h)(0, 0) + p.b_mu(0, 0);
  out.log_std = std::clamp((p.w_ls * h)(0, 0) + p.b_ls(0, 0), kLogStdMin, kLogStdMax);
  out.mean_accel = p.a_max * std::tanh(out.mu);
  return out;
}

// Maps cotangents in (logits, mu, log_std) space to parameter gradients and
// the hidden-state cotangent. log_std clamping passes gradient only when the
// pre-clamp value is interior.
inline Vec policy_backward(const PolicyParams& p, const Vec& h, const PolicyOut& out,
                           const Vec& dlogits, double dmu, double dls,
                           PolicyParams& grads) {
  double pre_ls = (p.w_ls * h)(0, 0) + p.b_ls(0, 0);
  double ls_gate = (pre_ls > kLogStdMin && pre_ls < kLogStdMax) ? 1.0 : 0.0;
  (void)out;
  grads.w_lat.noalias() += dlogits * h.transpose();
  grads.b_lat.col(0).noalias() += dlogits;
  grads.w_mu.noalias() += dmu * h.transpose();
  grads.b_mu(0, 0) += dmu;
  grads.w_ls.noalias() += dls * ls_gate * h.transpose();
  grads.b_ls(0, 0) += dls * ls_gate;
  Vec dh = p.w_lat.transpose() * dlogits;
  dh.noalias() += p.w_mu.transpose() * dmu;
  dh.noalias() += p.w_ls.transpose() * (dls * ls_gate);
  return dh;
}

// ---------------------------------------------------------------------------
// Checkpoint IO: named tensors with exact hexfloat round-trip
// ---------------------------------------------------------------------------

inline void save_tensors(std::ostream& os,
                         const std::vector<std::pair<std::string, Mat*>>& tensors) {
  os << "mergesim-checkpoint v1\n";
  for (const auto& [name, m] : tensors) {
    os << "tensor " << name << ' ' << m->rows() << ' ' << m->cols() << '\n';
    for (Eigen::Index i = 0; i < m->rows(); ++i) {
      for (Eigen::Index j = 0; j < m->cols(); ++j) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%a", (*m)(i, j));
        os << buf << (j + 1 == m->cols() ? "" : " ");
      }
      os << '\n';
    }
  }
  os << "end\n";
}

inline void load_tensors(std::istream& is,
                         const std::vector<std::pair<std::string, Mat*>>& tensors) {
  std::string line;
  if (!std::getline(is, line) || line != "mergesim-checkpoint v1") {
    throw ConfigError("checkpoint: bad header");
  }
  std::size_t next = 0;
  while (std::getline(is, line)) {
    if (line == "end") {
      if (next != tensors.size()) throw ConfigError("checkpoint: missing tensors");
      return;
    }
    std::string tag, name;
    long rows = 0, cols = 0;
    {
      std::istringstream hs(line);
      hs >> tag >> name >> rows >> cols;
      if (tag != "tensor") throw ConfigError("checkpoint: expected tensor record");
    }
    if (next >= tensors.size()) throw ConfigError("checkpoint: unexpected tensor " + name);
    auto& [want_name, m] = tensors[next++];
    if (name != want_name || rows != m->rows() || cols != m->cols()) {
      throw ConfigError("checkpoint: shape manifest mismatch at " + name);
    }
    for (long i = 0; i < rows; ++i) {
      if (!std::getline(is, line)) throw ConfigError("checkpoint: truncated tensor " + name);
      std::istringstream rs(line);
      std::string tok;
      for (long j = 0; j < cols; ++j) {
        if (!(rs >> tok)) throw ConfigError("checkpoint: short row in " + name);
        (*m)(i, j) = std::strtod(tok.c_str(), nullptr);
      }
    }
  }
  throw ConfigError("checkpoint: missing end marker");
}

inline void save_tensors_file(const std::string& path,
                              const std::vector<std::pair<std::string, Mat*>>& tensors) {
  std::ofstream os(path);
  if (!os) throw ConfigError("checkpoint: cannot write " + path);
  save_tensors(os, tensors);
}

inline void load_tensors_file(const std::string& path,
                              const std::vector<std::pair<std::string, Mat*>>& tensors) {
  std::ifstream is(path);
  if (!is) throw ConfigError("checkpoint: cannot read " + path);
  load_tensors(is, tensors);
}

}  // namespace mergesim
