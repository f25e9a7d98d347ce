#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mergesim/encoder.hpp"
#include "mergesim/reward.hpp"
#include "mergesim/rng.hpp"
#include "mergesim/scenario.hpp"
#include "mergesim/types.hpp"

namespace mergesim {

inline double discounted_return(const std::vector<double>& rewards, double gamma) {
  double acc = 0.0;
  double g = 1.0;
  for (double r : rewards) {
    acc += g * r;
    g *= gamma;
  }
  return acc;
}

struct Transition {
  std::vector<Vec> frames;       // normalized observation window, oldest first
  int lat = 0;                   // lateral action index
  double a_long = 0.0;           // executed longitudinal acceleration
  double reward = 0.0;
  std::vector<Vec> next_frames;
  bool done = false;
};

// FIFO ring with seeded uniform sampling (with replacement). Sampling an
// under-filled buffer returns nullopt as the defer-training signal.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000) : capacity_(capacity) {}

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::optional<std::vector<const Transition*>> sample(std::size_t batch, RngStream& rng) const {
    if (data_.size() < batch) return std::nullopt;
    std::vector<const Transition*> out;
    out.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      out.push_back(&data_[rng.uniform_index(data_.size())]);
    }
    return out;
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return data_[i]; }

 private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

// ---------------------------------------------------------------------------
// Critic: one-hidden-layer tanh MLP on [h, one-hot(lat), a_long]
// ---------------------------------------------------------------------------

struct CriticParams {
  Mat W1, b1, w2, b2;
  std::string prefix = "q";

  static CriticParams zeros(int input_dim, int hidden, std::string prefix) {
    CriticParams p;
    p.W1 = Mat::Zero(hidden, input_dim);
    p.b1 = Mat::Zero(hidden, 1);
    p.w2 = Mat::Zero(1, hidden);
    p.b2 = Mat::Zero(1, 1);
    p.prefix = std::move(prefix);
    return p;
  }

  static CriticParams init(int input_dim, int hidden, std::string prefix, RngStream& rng,
                           double scale = 0.1) {
    CriticParams p = zeros(input_dim, hidden, std::move(prefix));
    auto fill = [&](Mat& m) {
      for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          m(i, j) = scale * rng.normal();
    };
    fill(p.W1);
    fill(p.w2);
    return p;
  }

  std::vector<std::pair<std::string, Mat*>> tensors() {
    return {{prefix + ".W1", &W1}, {prefix + ".b1", &b1},
            {prefix + ".w2", &w2}, {prefix + ".b2", &b2}};
  }
};

struct CriticCache {
  Vec in, a1;
};

inline Vec critic_input(const Vec& h, int lat, double a_long) {
  Vec in(h.size() + kLateralActions + 1);
  in.head(h.size()) = h;
  in.segment(h.size(), kLateralActions).setZero();
  in[h.size() + lat] = 1.0;
  in[h.size() + kLateralActions] = a_long;
  return in;
}

inline double critic_forward(const CriticParams& p, const Vec& in, CriticCache* cache = nullptr) {
  if (in.size() != p.W1.cols()) throw ContractViolation("critic_forward: shape mismatch");
  Vec z1 = p.W1 * in + p.b1.col(0);
  Vec a1 = z1.array().tanh();
  double q = (p.w2 * a1)(0, 0) + p.b2(0, 0);
  if (cache) {
    cache->in = in;
    cache->a1 = a1;
  }
  return q;
}

// Accumulates parameter gradients scaled by dq; returns d(loss)/d(input).
inline Vec critic_backward(const CriticParams& p, const CriticCache& cc, double dq,
                           CriticParams& grads) {
  Vec da1 = p.w2.transpose() * dq;
  Vec dz1 = da1.cwiseProduct((1.0 - cc.a1.array().square()).matrix());
  grads.W1.noalias() += dz1 * cc.in.transpose();
  grads.b1.col(0).noalias() += dz1;
  grads.w2.noalias() += dq * cc.a1.transpose();
  grads.b2(0, 0) += dq;
  return p.W1.transpose() * dz1;
}

// ---------------------------------------------------------------------------
// Adam with global-norm clipping
// ---------------------------------------------------------------------------

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<std::pair<std::string, Mat*>>& params,
            const std::vector<std::pair<std::string, Mat*>>& grads, double clip_norm) {
    double sq = 0.0;
    for (const auto& [name, g] : grads) sq += g->squaredNorm();
    double scale = 1.0;
    double norm = std::sqrt(sq);
    if (clip_norm > 0.0 && norm > clip_norm) scale = clip_norm / norm;
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Mat* p = params[k].second;
      Mat g = *grads[k].second * scale;
      auto& m = m_[params[k].first];
      auto& v = v_[params[k].first];
      if (m.size() == 0) {
        m = Mat::Zero(p->rows(), p->cols());
        v = Mat::Zero(p->rows(), p->cols());
      }
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
      Mat mhat = m / bc1;
      Mat vhat = v / bc2;
      *p -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, Mat> m_, v_;
};

// ---------------------------------------------------------------------------
// Entropy-regularized actor-critic over the hybrid action space
// ---------------------------------------------------------------------------

struct LearnerConfig {
  double gamma = 0.95;
  double lr_actor = 3e-4;
  double lr_critic = 3e-4;
  double entropy_coef = 0.05;
  double target_smoothing = 0.005;
  double clip_norm = 5.0;
  std::size_t batch_size = 64;
  std::size_t replay_capacity = 100000;
  int hidden = 32;
  int critic_hidden = 32;
  int window_k = 8;
  double a_max = 1.0;
};

struct UpdateDiagnostics {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double entropy = 0.0;
  double mean_q = 0.0;
};

inline constexpr double kSquashEps = 1e-9;

struct SquashedSample {
  double u = 0.0;       // pre-squash
  double a = 0.0;       // a_max * tanh(u)
  double log_prob = 0.0;
};

inline SquashedSample squashed_gaussian(double mu, double log_std, double xi, double a_max) {
  constexpr double log_two_pi = 1.8378770664093454835606594728112;
  SquashedSample s;
  double sigma = std::exp(log_std);
  s.u = mu + sigma * xi;
  double t = std::tanh(s.u);
  s.a = a_max * t;
  s.log_prob = -0.5 * xi * xi - log_std - 0.5 * log_two_pi -
               std::log(a_max * (1.0 - t * t) + kSquashEps);
  return s;
}

class SacLearner {
 public:
  SacLearner(int obs_dim, LearnerConfig cfg, std::uint64_t seed)
      : cfg_(cfg),
        init_rng_(seed, "learner/init"),
        encoder_(LstmParams::init(obs_dim, cfg.hidden, init_rng_)),
        encoder_target_(encoder_),
        policy_(PolicyParams::init(cfg.hidden, init_rng_, 0.1, cfg.a_max)),
        q1_(CriticParams::init(critic_in_dim(), cfg.critic_hidden, "q1", init_rng_)),
        q2_(CriticParams::init(critic_in_dim(), cfg.critic_hidden, "q2", init_rng_)),
        q1_target_(q1_),
        q2_target_(q2_),
        actor_opt_(cfg.lr_actor),
        critic_opt_(cfg.lr_critic) {
    q1_target_.prefix = "q1t";
    q2_target_.prefix = "q2t";
  }

  const LearnerConfig& config() const { return cfg_; }
  LstmParams& encoder() { return encoder_; }
  PolicyParams& policy() { return policy_; }
  CriticParams& q1() { return q1_; }
  CriticParams& q2() { return q2_; }

  int critic_in_dim() const { return cfg_.hidden + kLateralActions + 1; }

  Vec encode(const std::vector<Vec>& frames) const {
    return encode_history(encoder_, frames);
  }

  PolicyOut policy_at(const std::vector<Vec>& frames) const {
    return policy_forward(policy_, encode(frames));
  }

  // Bootstrapped targets from the target networks and the current policy.
  // Consumes one normal draw per batch item.
  std::vector<double> compute_targets(const std::vector<const Transition*>& batch,
                                      RngStream& rng) const {
    std::vector<double> y(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Transition& tr = *batch[b];
      double v_next = 0.0;
      if (!tr.done) {
        Vec h2 = encode_history(encoder_target_, tr.next_frames);
        PolicyOut po = policy_forward(policy_, h2);
        SquashedSample s = squashed_gaussian(po.mu, po.log_std, rng.normal(), cfg_.a_max);
        for (int l = 0; l < kLateralActions; ++l) {
          Vec in = critic_input(h2, l, s.a);
          double q = std::min(critic_forward(q1_target_, in), critic_forward(q2_target_, in));
          double logp = std::log(std::max(po.probs[l], 1e-12)) + s.log_prob;
          v_next += po.probs[l] * (q - cfg_.entropy_coef * logp);
        }
      }
      y[b] = tr.reward + cfg_.gamma * v_next;
    }
    return y;
  }

  // Mean of both squared Bellman errors; gradients flow into the critics and
  // through the window encoding into the online encoder.
  double critic_loss_and_grads(const std::vector<const Transition*>& batch,
                               const std::vector<double>& y, CriticParams& g1,
                               CriticParams& g2, LstmParams& genc) const {
    double loss = 0.0;
    const double B = static_cast<double>(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Transition& tr = *batch[b];
      std::vector<LstmCache> caches;
      Vec h = encode_history(encoder_, tr.frames, &caches);
      Vec in = critic_input(h, tr.lat, tr.a_long);
      CriticCache c1, c2;
      double qa = critic_forward(q1_, in, &c1);
      double qb = critic_forward(q2_, in, &c2);
      loss += (qa - y[b]) * (qa - y[b]) + (qb - y[b]) * (qb - y[b]);
      double dqa = 2.0 * (qa - y[b]) / B;
      double dqb = 2.0 * (qb - y[b]) / B;
      Vec din = critic_backward(q1_, c1, dqa, g1);
      din += critic_backward(q2_, c2, dqb, g2);
      encode_history_backward(encoder_, caches, din.head(cfg_.hidden), genc);
    }
    return loss / B;
  }

  // Entropy-regularized policy objective with exact expectation over the
  // lateral head and one reparameterized longitudinal sample per item. The
  // encoding is treated as fixed (critic-driven encoder).
  double actor_loss_and_grads(const std::vector<const Transition*>& batch,
                              const std::vector<double>& xi, PolicyParams& gpol,
                              UpdateDiagnostics* diag = nullptr) const {
    double loss = 0.0;
    double entropy_acc = 0.0;
    double q_acc = 0.0;
    const double B = static_cast<double>(batch.size());
    const double alpha = cfg_.entropy_coef;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const Transition& tr = *batch[b];
      Vec h = encode(tr.frames);
      PolicyOut po = policy_forward(policy_, h);
      SquashedSample s = squashed_gaussian(po.mu, po.log_std, xi[b], cfg_.a_max);

      Vec qmin(kLateralActions);
      std::array<CriticCache, kLateralActions> cache1, cache2;
      std::array<bool, kLateralActions> use_q1{};
      for (int l = 0; l < kLateralActions; ++l) {
        Vec in = critic_input(h, l, s.a);
        double qa = critic_forward(q1_, in, &cache1[l]);
        double qb = critic_forward(q2_, in, &cache2[l]);
        use_q1[l] = qa <= qb;
        qmin[l] = std::min(qa, qb);
      }

      Vec f(kLateralActions);
      double fbar = 0.0;
      for (int l = 0; l < kLateralActions; ++l) {
        double logpl = std::log(std::max(po.probs[l], 1e-12));
        f[l] = alpha * (logpl + s.log_prob) - qmin[l];
        fbar += po.probs[l] * f[l];
      }
      loss += fbar;
      q_acc += po.probs.dot(qmin);

      // d/d logits
      Vec dlogits(kLateralActions);
      for (int l = 0; l < kLateralActions; ++l) {
        dlogits[l] = po.probs[l] * (f[l] - fbar) / B;
      }

      // d/d a through the min critic, d/d u through the squash and log-prob
      double dL_da = 0.0;
      for (int l = 0; l < kLateralActions; ++l) {
        CriticParams scratch = CriticParams::zeros(critic_in_dim(), cfg_.critic_hidden, "s");
        const CriticParams& qp = use_q1[l] ? q1_ : q2_;
        const CriticCache& qc = use_q1[l] ? cache1[l] : cache2[l];
        Vec din = critic_backward(qp, qc, 1.0, scratch);
        dL_da += -po.probs[l] * din[cfg_.hidden + kLateralActions];
      }
      double t = std::tanh(s.u);
      double da_du = cfg_.a_max * (1.0 - t * t);
      double dlogp_du = 2.0 * cfg_.a_max * t * (1.0 - t * t) /
                        (cfg_.a_max * (1.0 - t * t) + kSquashEps);
      double dL_du = alpha * dlogp_du + dL_da * da_du;
      double sigma = std::exp(po.log_std);
      double dmu = dL_du / B;
      double dls = (dL_du * sigma * xi[b] + alpha * (-1.0)) / B;

      policy_backward(policy_, h, po, dlogits, dmu, dls, gpol);

      double cat_entropy = 0.0;
      for (int l = 0; l < kLateralActions; ++l) {
        cat_entropy -= po.probs[l] * std::log(std::max(po.probs[l], 1e-12));
      }
      entropy_acc += cat_entropy - s.log_prob;
    }
    if (diag) {
      diag->entropy = entropy_acc / B;
      diag->mean_q = q_acc / B;
    }
    return loss / B;
  }

  UpdateDiagnostics update_step(const std::vector<const Transition*>& batch, RngStream& rng) {
    UpdateDiagnostics diag;
    std::vector<double> y = compute_targets(batch, rng);

    CriticParams g1 = CriticParams::zeros(critic_in_dim(), cfg_.critic_hidden, "q1");
    CriticParams g2 = CriticParams::zeros(critic_in_dim(), cfg_.critic_hidden, "q2");
    LstmParams genc = LstmParams::zeros(encoder_.input_dim(), cfg_.hidden);
    diag.critic_loss = critic_loss_and_grads(batch, y, g1, g2, genc);

    std::vector<std::pair<std::string, Mat*>> cparams = q1_.tensors();
    for (auto& t : q2_.tensors()) cparams.push_back(t);
    {
      auto enc = encoder_.tensors();
      cparams.insert(cparams.end(), enc.begin(), enc.end());
    }
    std::vector<std::pair<std::string, Mat*>> cgrads = g1.tensors();
    for (auto& t : g2.tensors()) cgrads.push_back(t);
    {
      auto enc = genc.tensors();
      cgrads.insert(cgrads.end(), enc.begin(), enc.end());
    }
    critic_opt_.step(cparams, cgrads, cfg_.clip_norm);

    std::vector<double> xi(batch.size());
    for (double& x : xi) x = rng.normal();
    PolicyParams gpol = PolicyParams::zeros(cfg_.hidden, cfg_.a_max);
    diag.actor_loss = actor_loss_and_grads(batch, xi, gpol, &diag);
    auto aparams = policy_.tensors();
    auto agrads = gpol.tensors();
    actor_opt_.step(aparams, agrads, cfg_.clip_norm);

    polyak(encoder_target_.tensors(), encoder_.tensors());
    polyak(q1_target_.tensors(), q1_.tensors());
    polyak(q2_target_.tensors(), q2_.tensors());

    if (!std::isfinite(diag.critic_loss) || !std::isfinite(diag.actor_loss)) {
      throw ContractViolation("update_step: non-finite loss (critic " +
                              std::to_string(diag.critic_loss) + ", actor " +
                              std::to_string(diag.actor_loss) + ")");
    }
    return diag;
  }

  // All trainable and target tensors, for checkpointing.
  std::vector<std::pair<std::string, Mat*>> all_tensors() {
    std::vector<std::pair<std::string, Mat*>> out;
    auto add = [&](std::vector<std::pair<std::string, Mat*>> ts, const std::string& ns) {
      for (auto& [name, m] : ts) out.push_back({ns + name, m});
    };
    add(encoder_.tensors(), "");
    add(encoder_target_.tensors(), "target.");
    add(policy_.tensors(), "");
    add(q1_.tensors(), "");
    add(q2_.tensors(), "");
    add(q1_target_.tensors(), "");
    add(q2_target_.tensors(), "");
    return out;
  }

 private:
  void polyak(std::vector<std::pair<std::string, Mat*>> target,
              std::vector<std::pair<std::string, Mat*>> online) {
    double rho = cfg_.target_smoothing;
    for (std::size_t i = 0; i < target.size(); ++i) {
      *target[i].second = (1.0 - rho) * *target[i].second + rho * *online[i].second;
    }
  }

  LearnerConfig cfg_;
  RngStream init_rng_;
  LstmParams encoder_;
  LstmParams encoder_target_;
  PolicyParams policy_;
  CriticParams q1_, q2_;
  CriticParams q1_target_, q2_target_;
  Adam actor_opt_, critic_opt_;
};

// ---------------------------------------------------------------------------
// Curriculum
// ---------------------------------------------------------------------------

struct CurriculumStage {
  double demand = 300.0;
  std::vector<double> penetrations = {1.0};
  bool randomized = false;
};

inline std::vector<CurriculumStage> default_curriculum() {
  return {
      {300.0, {1.0}, false},
      {300.0, {0.7}, false},
      {600.0, {0.5}, false},
      {900.0, {0.3, 0.7}, false},
      {0.0, {}, true},  // randomized replay over densities and compositions
  };
}

class Curriculum {
 public:
  explicit Curriculum(std::uint64_t seed, std::vector<CurriculumStage> stages = default_curriculum(),
                      int episode_budget = 50, int plateau_window = 10,
                      double plateau_eps = 0.05)
      : stages_(std::move(stages)),
        rng_(seed, "curriculum"),
        episode_budget_(episode_budget),
        plateau_window_(plateau_window),
        plateau_eps_(plateau_eps) {}

  int stage() const { return stage_; }
  bool final_stage() const { return stage_ + 1 >= static_cast<int>(stages_.size()); }

  // Scenario for the next episode under the current stage.
  ScenarioConfig next_episode(const ScenarioConfig& base) {
    const CurriculumStage& st = stages_[stage_];
    ScenarioConfig cfg = base;
    if (st.randomized) {
      const double densities[3] = {300.0, 600.0, 900.0};
      const double pens[4] = {0.3, 0.5, 0.7, 1.0};
      cfg.demand_level = densities[rng_.uniform_index(3)];
      cfg.cav_penetration = pens[rng_.uniform_index(4)];
    } else {
      cfg.demand_level = st.demand;
      cfg.cav_penetration = st.penetrations[episode_ % st.penetrations.size()];
    }
    cfg.profile.fixed_level = cfg.demand_level;
    ++episode_;
    ++episodes_in_stage_;
    return cfg;
  }

  // Advances on a mean-reward plateau or when the stage budget is spent.
  void note_episode_reward(double mean_reward) {
    rewards_.push_back(mean_reward);
    if (final_stage()) return;
    bool budget = episodes_in_stage_ >= episode_budget_;
    bool plateau = false;
    int w = plateau_window_;
    if (static_cast<int>(rewards_.size()) >= 2 * w) {
      double recent = 0.0, prev = 0.0;
      for (int i = 0; i < w; ++i) {
        recent += rewards_[rewards_.size() - 1 - i];
        prev += rewards_[rewards_.size() - 1 - w - i];
      }
      recent /= w;
      prev /= w;
      plateau = std::abs(recent - prev) < plateau_eps_ * std::max(1.0, std::abs(prev));
    }
    if (budget || plateau) {
      ++stage_;
      episodes_in_stage_ = 0;
      rewards_.clear();
    }
  }

 private:
  std::vector<CurriculumStage> stages_;
  RngStream rng_;
  int episode_budget_;
  int plateau_window_;
  double plateau_eps_;
  int stage_ = 0;
  int episode_ = 0;
  int episodes_in_stage_ = 0;
  std::vector<double> rewards_;
};

}  // namespace mergesim
