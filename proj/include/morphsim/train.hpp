#pragma once

// Controller (normalizer + Gaussian policy + value) and the PPO training
// driver: curriculum clip sampling, reference-state initialization, design
// randomization, parallel episode collection and batched updates.

#include <cstdint>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "morphsim/character.hpp"
#include "morphsim/imitation.hpp"
#include "morphsim/learn.hpp"
#include "morphsim/motion.hpp"

namespace morphsim {

using Real = float;  // network arithmetic during training

struct Controller {
  RunningNorm norm;
  GaussianPolicy<Real> policy;
  ValueFunction<Real> value;

  int obs_dim() const { return norm.dim(); }
  int act_dim() const { return policy.action_dim(); }

  // Mean action when rng is null, a sample otherwise.
  VecX act(const VecX& obs, Rng* rng = nullptr) const {
    const VecT<Real> x = norm.apply<Real>(obs);
    return rng ? policy.sample(x, *rng) : policy.mean(x);
  }

  double value_of(const VecX& obs) const { return value(norm.apply<Real>(obs)); }
};

inline Controller make_controller(int obs_dim, int act_dim, const std::vector<int>& policy_hidden,
                                  const std::vector<int>& value_hidden, double log_std,
                                  double gamma, Rng& rng) {
  std::vector<int> ps{obs_dim}, vs{obs_dim};
  ps.insert(ps.end(), policy_hidden.begin(), policy_hidden.end());
  vs.insert(vs.end(), value_hidden.begin(), value_hidden.end());
  ps.push_back(act_dim);
  vs.push_back(1);
  Controller c;
  c.norm = RunningNorm(obs_dim);
  c.policy = GaussianPolicy<Real>(Mlp<Real>(ps, rng, 0.01), log_std);
  c.value.net = Mlp<Real>(vs, rng, 1.0);
  c.value.scale = gamma < 1.0 ? 1.0 / (1.0 - gamma) : 1.0;
  return c;
}

// FNV-1a over every stored number of the controller.
inline std::uint64_t controller_hash(const Controller& c) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  auto vec = [&](const auto& v) { mix(v.data(), sizeof(v.data()[0]) * v.size()); };
  vec(c.norm.mean);
  vec(c.norm.var);
  mix(&c.norm.count, sizeof(double));
  vec(c.policy.mean_net.params());
  vec(c.policy.log_std);
  vec(c.value.net.params());
  mix(&c.value.scale, sizeof(double));
  return h;
}

// ---------------------------------------------------------------------------
// Design randomization for a design-conditioned controller

struct DesignRandomization {
  double p_identity = 0.5;
  std::pair<double, double> leg_length{0.85, 1.4};
  std::pair<double, double> global_scale{0.95, 1.05};
  std::pair<double, double> mass_scale{0.8, 1.2};
  std::pair<double, double> gear{0.8, 1.5};
  std::pair<double, double> friction{0.5, 1.5};  // multiplier on the base value
  // Chance that the reference is re-performed by the sampled body, and by an
  // independently sampled body. Otherwise the corpus performer is kept.
  double p_matched_performer = 0.3;
  double p_random_performer = 0.2;

  CharacterDesign sample(const CharacterModel& base, Rng& rng) const {
    CharacterDesign d = identity_design(base);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (u(rng) < p_identity) return d;
    auto draw = [&](std::pair<double, double> r) { return r.first + (r.second - r.first) * u(rng); };
    const double leg = draw(leg_length);
    for (int l : {body::kThighL, body::kShinL, body::kThighR, body::kShinR})
      if (l < base.num_links()) d.bone_length_scales[l] = leg;
    d.global_scale = draw(global_scale);
    d.mass_scale = draw(mass_scale);
    const double g = draw(gear);
    const double f = draw(friction);
    for (int j = 0; j < base.num_joints(); ++j) {
      d.motor_gears[j] = g;
      d.frictionloss[j] *= f;
    }
    return d;
  }

  // Body that performs the reference for an episode on `design`, or nullopt
  // for the corpus performer.
  std::optional<CharacterDesign> performer(const CharacterDesign& design,
                                           const CharacterModel& base, Rng& rng) const {
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (u < p_matched_performer) return design;
    if (u < p_matched_performer + p_random_performer) return sample(base, rng);
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  ImitationConfig imitation;
  PpoConfig ppo;
  std::vector<int> policy_hidden{256, 256};
  std::vector<int> value_hidden{128, 128};
  double log_std = std::log(0.1);
  int iterations = 200;
  std::uint64_t seed = 1;
  int workers = 1;
  double curriculum_temperature = 0.2;
  DesignRandomization randomization;
  bool randomize_designs = true;
};

struct EpisodeData {
  std::string clip_id;
  Eigen::MatrixXd obs;      // raw observations, one per column
  Eigen::MatrixXd actions;
  Eigen::VectorXd rewards;
  std::vector<bool> dones;  // true only on a terminating last step
  VecX final_obs;           // bootstrap observation for truncated episodes
  bool truncated = false;
  bool succeeded = false;
  int diverged = 0;
};

struct IterationStats {
  int iteration = 0;
  long steps = 0;
  int episodes = 0;
  int diverged = 0;
  double mean_reward = 0.0;
  double mean_episode_length = 0.0;
  double success_rate = 0.0;
  PpoStats ppo;
};

// One training episode on a (possibly randomized) design.
inline EpisodeData run_episode(const Controller& ctl, const CharacterModel& model,
                               const VecX& design_feats, const MotionClip& clip,
                               const ImitationConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  EpisodeData ep;
  ep.clip_id = clip.id;
  const RsiResult rsi = reset_rsi(model, clip, rng, cfg.sim);
  RolloutOptions opt;
  opt.start_frame = rsi.start_frame;
  opt.max_steps = cfg.horizon;
  opt.initial_state = rsi.state;
  Trajectory traj;
  try {
    traj = rollout(model, design_feats, clip, [&](const VecX& o) { return ctl.act(o, &rng); }, cfg,
                   opt);
  } catch (const IntegrationError&) {
    ep.diverged = 1;
    return ep;
  }
  const auto n = static_cast<Eigen::Index>(traj.steps.size());
  if (n == 0) return ep;
  ep.obs.resize(ctl.obs_dim(), n);
  ep.actions.resize(ctl.act_dim(), n);
  ep.rewards.resize(n);
  ep.dones.assign(n, false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const StepRecord& s = traj.steps[i];
    ep.obs.col(i) = s.obs;
    ep.actions.col(i) = s.action;
    ep.rewards[i] = s.reward.total;
  }
  ep.truncated = traj.truncated;
  ep.dones.back() = !traj.truncated;
  ep.final_obs = traj.final_obs;
  ep.succeeded = traj.succeeded();
  return ep;
}

class Trainer {
 public:
  Trainer(std::vector<MotionClip> clips, CharacterModel base, TrainConfig cfg)
      : clips_(std::move(clips)), base_(std::move(base)), cfg_(std::move(cfg)), rng_(cfg_.seed) {
    if (clips_.empty()) throw ValidationError("empty corpus");
    cfg_.ppo.validate();
    base_.validate();
    curriculum_.temperature = cfg_.curriculum_temperature;
    for (const auto& c : clips_) {
      c.validate();
      if (c.frames[0].size() != base_.num_dofs())
        throw DimensionError("clip '" + c.id + "' does not match the character");
      curriculum_.add_clip(c.id);
    }
    controller_ = make_controller(observation_dim(base_), action_dim(base_, cfg_.imitation),
                                  cfg_.policy_hidden, cfg_.value_hidden, cfg_.log_std,
                                  cfg_.ppo.gamma, rng_);
  }

  Controller& controller() { return controller_; }
  const Controller& controller() const { return controller_; }
  const CurriculumState& curriculum() const { return curriculum_; }
  const TrainConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }

  IterationStats iterate() {
    IterationStats st;
    st.iteration = iteration_;
    std::vector<EpisodeData> episodes = collect(st);

    // Observation statistics follow the data, then stay fixed for the update.
    long total = 0;
    for (const auto& e : episodes) total += e.obs.cols();
    Eigen::MatrixXd all_obs(controller_.obs_dim(), total);
    Eigen::MatrixXd all_act(controller_.act_dim(), total);
    {
      long o = 0;
      for (const auto& e : episodes) {
        all_obs.middleCols(o, e.obs.cols()) = e.obs;
        all_act.middleCols(o, e.obs.cols()) = e.actions;
        o += e.obs.cols();
      }
    }
    controller_.norm.update(all_obs);

    PpoBatch<Real> batch;
    batch.obs = controller_.norm.apply<Real>(all_obs);
    batch.actions = all_act;
    const Eigen::MatrixXd mu = controller_.policy.mean_net.forward(batch.obs).cast<double>();
    batch.old_log_prob.resize(total);
    for (long i = 0; i < total; ++i)
      batch.old_log_prob[i] = controller_.policy.log_prob(mu.col(i), all_act.col(i));
    const Eigen::VectorXd values = controller_.value.batch(batch.obs);

    Eigen::VectorXd adv(total), ret(total);
    long o = 0;
    double reward_sum = 0.0;
    for (const auto& e : episodes) {
      const auto n = e.obs.cols();
      Eigen::VectorXd v(n + 1);
      v.head(n) = values.segment(o, n);
      v[n] = e.truncated ? controller_.value_of(e.final_obs) : 0.0;
      const GaeResult g = gae(e.rewards, v, e.dones, cfg_.ppo.gamma, cfg_.ppo.lambda);
      adv.segment(o, n) = g.advantages;
      ret.segment(o, n) = g.returns;
      reward_sum += e.rewards.sum();
      o += n;
    }
    batch.advantages = normalize_advantages(adv);
    batch.returns = ret;
    st.steps = total;
    st.mean_reward = total > 0 ? reward_sum / static_cast<double>(total) : 0.0;
    st.mean_episode_length =
        st.episodes > 0 ? static_cast<double>(total) / st.episodes : 0.0;
    if (total > 0) st.ppo = ppo_update(controller_.policy, controller_.value, batch, cfg_.ppo, opt_, rng_);
    ++iteration_;
    return st;
  }

 private:
  struct Spec {
    std::size_t clip;
    CharacterDesign design;
    std::optional<CharacterDesign> performer;
    std::uint64_t seed;
  };

  std::vector<EpisodeData> collect(IterationStats& st) {
    std::vector<EpisodeData> out;
    long steps = 0;
    int successes = 0;
    const int workers = std::max(1, cfg_.workers);
    int empty_rounds = 0;
    while (steps < cfg_.ppo.batch_steps) {
      if (empty_rounds > 1000) throw TrainingError("every episode diverged or was empty");
      // One round: specs drawn serially, episodes run in parallel, results
      // merged in spec order so a fixed worker count is reproducible.
      std::vector<Spec> specs;
      for (int w = 0; w < workers; ++w) {
        Spec s;
        s.clip = sample_clip_index(curriculum_, rng_);
        s.design = cfg_.randomize_designs ? cfg_.randomization.sample(base_, rng_)
                                          : identity_design(base_);
        if (cfg_.randomize_designs) s.performer = cfg_.randomization.performer(s.design, base_, rng_);
        s.seed = rng_();
        specs.push_back(std::move(s));
      }
      std::vector<EpisodeData> round(specs.size());
      auto work = [&](std::size_t i) {
        const Spec& s = specs[i];
        const CharacterModel model = build(s.design, base_);
        const MotionClip& clip = clips_[s.clip];
        round[i] = run_episode(controller_, model, design_features(s.design),
                               s.performer ? retarget_clip(clip, base_, build(*s.performer, base_))
                                           : clip,
                               cfg_.imitation, s.seed);
      };
      if (workers == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < specs.size(); ++i) pool.emplace_back(work, i);
        for (auto& t : pool) t.join();
      }
      ++empty_rounds;
      for (std::size_t i = 0; i < round.size(); ++i) {
        EpisodeData& e = round[i];
        st.diverged += e.diverged;
        if (e.diverged || e.obs.cols() == 0) continue;
        record_outcome(curriculum_, clips_[specs[i].clip].id, e.succeeded);
        successes += e.succeeded;
        steps += e.obs.cols();
        empty_rounds = 0;
        out.push_back(std::move(e));
      }
    }
    st.episodes = static_cast<int>(out.size());
    st.success_rate = out.empty() ? 0.0 : static_cast<double>(successes) / out.size();
    return out;
  }

  std::vector<MotionClip> clips_;
  CharacterModel base_;
  TrainConfig cfg_;
  Rng rng_;
  Controller controller_;
  CurriculumState curriculum_;
  PpoOptimizers<Real> opt_;
  int iteration_ = 0;
};

}  // namespace morphsim
