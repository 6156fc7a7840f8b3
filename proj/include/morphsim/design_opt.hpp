#pragma once

// Design-and-control optimization with a frozen controller. Each episode has
// a design stage (one action: a design, reward 0) and a control stage (the
// frozen controller imitating the clip on the built character). Only the
// design policy and the design-conditioned value are trained.

#include <cstdint>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "morphsim/character.hpp"
#include "morphsim/evaluate.hpp"
#include "morphsim/imitation.hpp"
#include "morphsim/learn.hpp"
#include "morphsim/metrics.hpp"
#include "morphsim/motion.hpp"
#include "morphsim/train.hpp"

namespace morphsim {

// Gaussian over design-space values. The network predicts an offset from
// the reference design given the featurized first frame of the clip.
struct DesignPolicy {
  GaussianPolicy<double> policy;
  VecX reference;  // design-space values of the reference design

  int dimension() const { return policy.action_dim(); }
  VecX mean(const VecX& input) const { return reference + policy.mean(input); }
  VecX sample(const VecX& input, Rng& rng) const { return reference + policy.sample(input, rng); }
};

// Return predicted from the clip's first-frame features and a design.
struct DesignValueFn {
  ValueFunction<double> value;

  static VecX input(const VecX& frame_features, const VecX& design_feats) {
    VecX x(frame_features.size() + design_feats.size());
    x << frame_features, design_feats;
    return x;
  }
  double operator()(const VecX& frame_features, const VecX& design_feats) const {
    const double v = value(input(frame_features, design_feats));
    if (!std::isfinite(v)) throw TrainingError("design value is not finite");
    return v;
  }
};

struct DesignOptConfig {
  ImitationConfig imitation;
  DesignSpace space = DesignSpace::leg_length();
  DesignBox box;
  std::vector<int> policy_hidden{128, 128};
  std::vector<int> value_hidden{128, 128};
  double log_std = std::log(0.05);
  int iterations = 100;
  int episodes_per_iteration = 16;
  int epochs = 10;
  int minibatch = 16;
  double lr = 1e-3;
  double clip = 0.2;
  double gamma = 0.99;
  double max_grad_norm = 1.0;
  int eval_every = 10;
  int workers = 1;
  std::uint64_t seed = 1;

  void validate() const {
    if (space.dimension() < 1) throw ValidationError("design space is empty");
    if (iterations < 0 || episodes_per_iteration < 1 || epochs < 0 || minibatch < 1 ||
        eval_every < 1)
      throw ValidationError("invalid design optimization schedule");
    if (!(lr > 0.0) || !(clip > 0.0 && clip < 1.0) || !(gamma > 0.0 && gamma <= 1.0))
      throw ValidationError("invalid design optimization hyperparameters");
  }
};

struct DesignHistoryEntry {
  int iteration = 0;
  int episodes = 0;
  int diverged = 0;      // sampled designs whose simulation blew up
  double mean_return = 0.0;
  VecX mean_design;      // design-space values of the policy mean
  bool evaluated = false;
  double eval_reward = 0.0;
  double eval_mpjpe_g = 0.0;
  double eval_success = 0.0;
};

struct DesignOptResult {
  // Evaluated policy mean with the highest mean reward along the way.
  CharacterDesign best_design;
  EvalReport best_report;
  int best_iteration = 0;
  CharacterDesign final_design;  // policy mean after the last update
  EvalReport final_report;
  DesignPolicy policy;
  DesignValueFn value;
  std::vector<DesignHistoryEntry> history;
  int diverged = 0;
};

// Design-stage sample as stored for the update.
struct DesignSample {
  std::size_t clip = 0;
  VecX action;            // design-space values as sampled
  VecX design_feats;      // of the decoded, box-clamped design
  double stage_reward = 0.0;  // always 0: designs earn nothing themselves
  double control_return = 0.0;
  double log_prob = 0.0;
  bool diverged = false;
};

namespace detail {

inline std::string history_csv_row(const DesignHistoryEntry& e) {
  std::ostringstream os;
  os << std::setprecision(10) << e.iteration << ',' << e.episodes << ',' << e.diverged << ','
     << e.mean_return;
  for (Eigen::Index i = 0; i < e.mean_design.size(); ++i) os << ',' << e.mean_design[i];
  if (e.evaluated)
    os << ',' << e.eval_reward << ',' << e.eval_mpjpe_g << ',' << e.eval_success;
  else
    os << ",,,";
  return os.str();
}

}  // namespace detail

inline std::string history_csv(const std::vector<DesignHistoryEntry>& h, const DesignSpace& s) {
  std::ostringstream os;
  os << "iteration,episodes,diverged,mean_return";
  for (const auto& g : s.groups) os << ',' << g.name;
  os << ",eval_reward,eval_mpjpe_g,eval_success\n";
  for (const auto& e : h) os << detail::history_csv_row(e) << '\n';
  return os.str();
}

class DesignOptimizer {
 public:
  DesignOptimizer(const Controller& controller, std::vector<MotionClip> clips,
                  CharacterModel base, DesignOptConfig cfg,
                  std::optional<CharacterDesign> reference = std::nullopt)
      : ctl_(controller),
        clips_(std::move(clips)),
        base_(std::move(base)),
        cfg_(std::move(cfg)),
        rng_(cfg_.seed) {
    cfg_.validate();
    if (clips_.empty()) throw ValidationError("empty corpus");
    base_.validate();
    if (ctl_.obs_dim() != observation_dim(base_) ||
        ctl_.act_dim() != action_dim(base_, cfg_.imitation))
      throw DimensionError("controller does not match the character topology");
    for (const auto& c : clips_) {
      c.validate();
      if (c.frames[0].size() != base_.num_dofs())
        throw DimensionError("clip '" + c.id + "' does not match the character");
    }
    reference_ = reference ? *reference : identity_design(base_);
    check_layout(reference_, base_);
    reference_flat_ = encode(reference_);
    for (const auto& g : cfg_.space.groups)
      for (int i : g.indices)
        if (i < 0 || i >= reference_flat_.size())
          throw DimensionError("design-space index out of range");

    const VecX ref_feats = design_features(reference_, cfg_.box);
    for (const auto& c : clips_) {
      const RefFrame f0 = reference_frame(c, 0);
      const SimState s0 = state_from_reference(base_, f0, cfg_.imitation.sim);
      frame_features_.push_back(
          ctl_.norm.apply<double>(featurize(base_, s0, f0, ref_feats).flat()));
    }
    const int in = static_cast<int>(frame_features_[0].size());
    const int dim = cfg_.space.dimension();
    std::vector<int> ps{in}, vs{in + static_cast<int>(design_dimension(base_))};
    ps.insert(ps.end(), cfg_.policy_hidden.begin(), cfg_.policy_hidden.end());
    vs.insert(vs.end(), cfg_.value_hidden.begin(), cfg_.value_hidden.end());
    ps.push_back(dim);
    vs.push_back(1);
    // A zero output layer starts the design policy exactly at the reference.
    policy_.policy = GaussianPolicy<double>(Mlp<double>(ps, rng_, 0.0), cfg_.log_std);
    policy_.reference = cfg_.space.project(reference_flat_);
    value_.value.net = Mlp<double>(vs, rng_, 1.0);
    value_.value.scale = cfg_.gamma < 1.0 ? 1.0 / (1.0 - cfg_.gamma) : 1.0;
  }

  DesignPolicy& policy() { return policy_; }
  const DesignValueFn& value() const { return value_; }
  const DesignOptConfig& config() const { return cfg_; }

  // Box-clamped design for design-space values.
  CharacterDesign decode_values(const VecX& x) const {
    return decode(cfg_.space.expand(x, reference_flat_), base_, cfg_.box).design;
  }

  // Deterministic evaluation of the policy mean, conditioned on each clip's
  // first frame, averaged into one design when several clips are given.
  CharacterDesign mean_design() const {
    VecX x = VecX::Zero(cfg_.space.dimension());
    for (const VecX& f : frame_features_) x += policy_.mean(f);
    return decode_values(x / static_cast<double>(frame_features_.size()));
  }

  EvalReport evaluate(const CharacterDesign& d) const {
    return evaluate_design(ctl_, d, base_, clips_, cfg_.imitation, cfg_.box);
  }

  // One design episode per sample; never touches the controller.
  std::vector<DesignSample> collect() {
    std::vector<DesignSample> out(cfg_.episodes_per_iteration);
    std::vector<std::uint64_t> seeds;
    for (auto& s : out) {
      s.clip = std::uniform_int_distribution<std::size_t>(0, clips_.size() - 1)(rng_);
      const VecX& f = frame_features_[s.clip];
      s.action = policy_.sample(f, rng_);
      s.log_prob = policy_.policy.log_prob(policy_.mean(f) - policy_.reference,
                                           s.action - policy_.reference);
    }
    auto work = [&](std::size_t i) {
      DesignSample& s = out[i];
      const CharacterDesign d = decode_values(s.action);
      s.design_feats = design_features(d, cfg_.box);
      try {
        const CharacterModel model = build(d, base_, cfg_.box);
        const Trajectory t =
            rollout(model, s.design_feats, clips_[s.clip],
                    [&](const VecX& o) { return ctl_.act(o); }, cfg_.imitation);
        double g = 0.0, disc = 1.0;
        for (const auto& step : t.steps) {
          g += disc * step.reward.total;
          disc *= cfg_.gamma;
        }
        s.control_return = g;
      } catch (const IntegrationError&) {
        s.diverged = true;
      }
    };
    run_parallel(out.size(), work);
    return out;
  }

  // Clipped-surrogate update of the design policy and regression of the
  // design value; the design-stage return is 0 + gamma * control return.
  void update(const std::vector<DesignSample>& samples) {
    std::vector<const DesignSample*> kept;
    for (const auto& s : samples)
      if (!s.diverged) kept.push_back(&s);
    const auto n = static_cast<Eigen::Index>(kept.size());
    if (n == 0) return;
    const int din = static_cast<int>(frame_features_[0].size());
    Eigen::MatrixXd x(din, n), vx(value_.value.net.input_dim(), n), a(cfg_.space.dimension(), n);
    Eigen::VectorXd ret(n), adv(n), old_lp(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const DesignSample& s = *kept[i];
      x.col(i) = frame_features_[s.clip];
      vx.col(i) = DesignValueFn::input(frame_features_[s.clip], s.design_feats);
      a.col(i) = s.action - policy_.reference;
      ret[i] = s.stage_reward + cfg_.gamma * s.control_return;
      // Baseline: the value of the design the policy would pick on average.
      const VecX mean_feats = design_features(decode_values(policy_.mean(x.col(i))), cfg_.box);
      adv[i] = ret[i] - value_(frame_features_[s.clip], mean_feats);
      old_lp[i] = s.log_prob;
    }
    adv = normalize_advantages(adv);
    const Eigen::ArrayXd inv_var = (-2.0 * policy_.policy.log_std.array()).exp();
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    popt_.lr = vopt_.lr = cfg_.lr;
    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng_);
      for (Eigen::Index start = 0; start < n; start += cfg_.minibatch) {
        const Eigen::Index m = std::min<Eigen::Index>(cfg_.minibatch, n - start);
        Eigen::MatrixXd bx(din, m), bvx(vx.rows(), m), ba(a.rows(), m);
        Eigen::VectorXd badv(m), bret(m), blp(m);
        for (Eigen::Index k = 0; k < m; ++k) {
          const Eigen::Index i = order[start + k];
          bx.col(k) = x.col(i);
          bvx.col(k) = vx.col(i);
          ba.col(k) = a.col(i);
          badv[k] = adv[i];
          bret[k] = ret[i];
          blp[k] = old_lp[i];
        }
        Mlp<double>::Cache pc;
        const Eigen::MatrixXd mu = policy_.policy.mean_net.forward(bx, &pc);
        Eigen::MatrixXd dmu(mu.rows(), m);
        for (Eigen::Index k = 0; k < m; ++k) {
          const double lp = policy_.policy.log_prob(mu.col(k), ba.col(k));
          const double g =
              surrogate_grad_logp(std::exp(lp - blp[k]), badv[k], cfg_.clip) / static_cast<double>(m);
          dmu.col(k) = (g * (ba.col(k) - mu.col(k)).array() * inv_var).matrix();
        }
        Mlp<double>::Cache vc;
        const Eigen::VectorXd v = value_.value.net.forward(bvx, &vc).row(0).transpose();
        const Eigen::MatrixXd dv =
            (2.0 / static_cast<double>(m) * (v - bret / value_.value.scale)).transpose();
        if (!dmu.allFinite() || !dv.allFinite()) throw TrainingError("non-finite design update");
        VecT<double> pg = VecT<double>::Zero(policy_.policy.mean_net.num_params());
        VecT<double> vg = VecT<double>::Zero(value_.value.net.num_params());
        policy_.policy.mean_net.backward(pc, dmu, pg);
        value_.value.net.backward(vc, dv, vg);
        clip_grad_norm(pg, cfg_.max_grad_norm);
        clip_grad_norm(vg, cfg_.max_grad_norm);
        if (pg.squaredNorm() > 0) popt_.step(policy_.policy.mean_net.params(), pg);
        if (vg.squaredNorm() > 0) vopt_.step(value_.value.net.params(), vg);
      }
    }
  }

  // Runs the configured number of iterations. The best design is the policy
  // mean with the highest deterministic mean reward over all clips; ties go
  // to the lower global MPJPE.
  DesignOptResult run() {
    const std::uint64_t hash_before = controller_hash(ctl_);
    DesignOptResult res;
    double best_reward = -std::numeric_limits<double>::infinity();
    double best_mpjpe = std::numeric_limits<double>::infinity();
    auto consider = [&](int it, DesignHistoryEntry& e) {
      const CharacterDesign d = mean_design();
      const EvalReport r = evaluate(d);
      e.evaluated = true;
      e.eval_reward = r.aggregate.mean_reward;
      e.eval_mpjpe_g = r.aggregate.e_mpjpe_g;
      e.eval_success = r.aggregate.s_succ;
      if (e.eval_reward > best_reward ||
          (e.eval_reward == best_reward && e.eval_mpjpe_g < best_mpjpe)) {
        best_reward = e.eval_reward;
        best_mpjpe = e.eval_mpjpe_g;
        res.best_design = d;
        res.best_report = r;
        res.best_iteration = it;
      }
      if (it == cfg_.iterations) {
        res.final_design = d;
        res.final_report = r;
      }
    };
    for (int it = 0; it <= cfg_.iterations; ++it) {
      DesignHistoryEntry e;
      e.iteration = it;
      e.mean_design = cfg_.space.project(encode(mean_design()));
      if (it % cfg_.eval_every == 0 || it == cfg_.iterations) consider(it, e);
      if (it < cfg_.iterations) {
        const std::vector<DesignSample> samples = collect();
        double sum = 0.0;
        for (const auto& s : samples) {
          if (s.diverged) {
            ++e.diverged;
            continue;
          }
          sum += s.control_return;
          ++e.episodes;
        }
        e.mean_return = e.episodes > 0 ? sum / e.episodes : 0.0;
        res.diverged += e.diverged;
        update(samples);
      }
      res.history.push_back(std::move(e));
    }
    if (controller_hash(ctl_) != hash_before)
      throw TrainingError("controller parameters changed during design optimization");
    res.policy = policy_;
    res.value = value_;
    return res;
  }

 private:
  template <class F>
  void run_parallel(std::size_t n, F& work) {
    const std::size_t w = static_cast<std::size_t>(std::max(1, cfg_.workers));
    if (w == 1 || n == 1) {
      for (std::size_t i = 0; i < n; ++i) work(i);
      return;
    }
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(w, n); ++t)
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += w) work(i);
      });
    for (auto& th : pool) th.join();
  }

  const Controller& ctl_;
  std::vector<MotionClip> clips_;
  CharacterModel base_;
  DesignOptConfig cfg_;
  Rng rng_;
  CharacterDesign reference_;
  VecX reference_flat_;
  std::vector<VecX> frame_features_;
  DesignPolicy policy_;
  DesignValueFn value_;
  Adam<double> popt_, vopt_;
};

inline DesignOptResult optimize(const Controller& controller, const std::vector<MotionClip>& clips,
                                const CharacterModel& base, const DesignOptConfig& cfg,
                                std::optional<CharacterDesign> reference = std::nullopt) {
  return DesignOptimizer(controller, clips, base, cfg, std::move(reference)).run();
}

// Mean deterministic reward of `controller` on designs with leg length scale
// on a grid; the exhaustive reference for a one-dimensional leg search.
inline std::vector<std::pair<double, double>> leg_length_grid(
    const Controller& controller, const std::vector<MotionClip>& clips,
    const CharacterModel& base, const std::vector<double>& scales,
    const ImitationConfig& cfg, const DesignBox& box = {}) {
  const DesignSpace space = DesignSpace::leg_length();
  const VecX ref = encode(identity_design(base));
  std::vector<std::pair<double, double>> out;
  for (double s : scales) {
    const CharacterDesign d =
        decode(space.expand(VecX::Constant(1, s), ref), base, box).design;
    out.push_back({s, evaluate_design(controller, d, base, clips, cfg, box).aggregate.mean_reward});
  }
  return out;
}

}  // namespace morphsim
