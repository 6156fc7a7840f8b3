#pragma once

// The motion-imitation MDP: observation features, tracking reward, reference
// state initialization, early termination, action decoding and the episode
// driver shared by training, evaluation and design optimization.

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "morphsim/character.hpp"
#include "morphsim/errors.hpp"
#include "morphsim/motion.hpp"
#include "morphsim/physics.hpp"

namespace morphsim {

// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a + std::numbers::pi, two_pi);
  if (w <= 0.0) w += two_pi;
  return w - std::numbers::pi;
}

struct RefFrame {
  VecX q;
  VecX qdot;
  Eigen::Matrix2Xd keypoints;
};

inline RefFrame reference_frame(const MotionClip& clip, int t) {
  if (t < 0 || t >= clip.num_frames()) throw DimensionError("frame index out of range");
  return {clip.frames[t], clip.velocity(t), clip.keypoints[t]};
}

// ---------------------------------------------------------------------------
// Observation

struct Observation {
  Eigen::Matrix2Xd ref_positions;   // reference keypoints, character frame
  Eigen::Matrix2Xd position_error;  // simulated minus reference, character frame
  VecX velocity;                    // q-dot with the root velocity rotated
  VecX ref_velocity;                // reference q-dot, same treatment
  VecX rotation_error;              // wrap(q^r - ref q^r), root angle first
  VecX ref_rotation;                // reference root angle and joint angles
  VecX contact;                     // 1 per foot geom in contact
  VecX design;                      // normalized design vector

  VecX flat() const {
    const Eigen::Index n = ref_positions.size() + position_error.size() +
                           velocity.size() + ref_velocity.size() +
                           rotation_error.size() + ref_rotation.size() +
                           contact.size() + design.size();
    VecX out(n);
    Eigen::Index o = 0;
    auto put = [&](const auto& block) {
      out.segment(o, block.size()) = block.reshaped();
      o += block.size();
    };
    put(ref_positions);
    put(position_error);
    put(velocity);
    put(ref_velocity);
    put(rotation_error);
    put(ref_rotation);
    put(contact);
    put(design);
    return out;
  }
};

inline int observation_dim(const CharacterModel& model) {
  const int k = model.num_links() + 1;
  const int n = model.num_dofs();
  const int rot = 1 + model.num_joints();
  return 4 * k + 2 * n + 2 * rot + static_cast<int>(model.foot_geoms.size()) +
         design_dimension(model);
}

// Design vector mapped affinely so the box spans [-1, 1].
inline VecX design_features(const CharacterDesign& design, const DesignBox& box = {}) {
  const VecX v = encode(design);
  const auto [lo, hi] = flat_bounds(static_cast<int>(design.bone_length_scales.size()),
                                    static_cast<int>(design.motor_gears.size()), box);
  return (2.0 * (v - lo).array() / (hi - lo).array() - 1.0).matrix();
}

namespace detail {

inline Eigen::Matrix2d rotation(double angle) {
  Eigen::Matrix2d r;
  const double c = std::cos(angle), s = std::sin(angle);
  r << c, -s, s, c;
  return r;
}

inline VecX rotate_root_velocity(const VecX& qdot, const Eigen::Matrix2d& world_to_local) {
  VecX v = qdot;
  v.head<2>() = world_to_local * qdot.head<2>();
  return v;
}

}  // namespace detail

// Features relative to the simulated root: world quantities are translated
// by the root position and rotated by minus the root angle.
inline Observation featurize(const CharacterModel& model, const SimState& state,
                             const RefFrame& ref, const VecX& design_feats) {
  const int n = model.num_dofs();
  if (state.q.size() != n || state.qdot.size() != n || ref.q.size() != n ||
      ref.qdot.size() != n)
    throw DimensionError("state or reference does not match the character layout");
  const Eigen::Matrix2Xd sim_kp = keypoints(model, state.q);
  if (ref.keypoints.cols() != sim_kp.cols())
    throw DimensionError("reference keypoints do not match the character");
  if (design_feats.size() != design_dimension(model))
    throw DimensionError("design feature length mismatch");

  const Eigen::Matrix2d to_local = detail::rotation(-state.q[2]);
  const Vec2 origin = state.q.head<2>();
  Observation o;
  o.ref_positions = to_local * (ref.keypoints.colwise() - origin);
  o.position_error = to_local * (sim_kp - ref.keypoints);
  o.velocity = detail::rotate_root_velocity(state.qdot, to_local);
  o.ref_velocity = detail::rotate_root_velocity(ref.qdot, to_local);
  const int rot = n - 2;
  o.rotation_error.resize(rot);
  for (int i = 0; i < rot; ++i)
    o.rotation_error[i] = wrap_angle(state.q[2 + i] - ref.q[2 + i]);
  o.ref_rotation = ref.q.tail(rot);
  o.contact.resize(static_cast<Eigen::Index>(state.contact.size()));
  for (std::size_t g = 0; g < state.contact.size(); ++g)
    o.contact[g] = state.contact[g] ? 1.0 : 0.0;
  o.design = design_feats;
  return o;
}

// ---------------------------------------------------------------------------
// Reward

struct RewardWeights {
  double w_p = 0.5;
  double w_v = 0.1;
  double w_e = 0.3;
  double w_vf = 0.1;

  RewardWeights normalized() const {
    if (w_p < 0 || w_v < 0 || w_e < 0 || w_vf < 0)
      throw ValidationError("reward weights must be non-negative");
    const double s = w_p + w_v + w_e + w_vf;
    if (!(s > 0.0)) throw ValidationError("reward weights sum to zero");
    return {w_p / s, w_v / s, w_e / s, w_vf / s};
  }
};

struct RewardTerms {
  double total = 0.0;
  double r_p = 0.0;
  double r_v = 0.0;
  double r_e = 0.0;
  double r_vf = 0.0;
};

// `residual` holds applied force magnitudes already divided by the cap.
inline RewardTerms reward(const CharacterModel& model, const SimState& state,
                          const RefFrame& ref, const VecX& residual,
                          const RewardWeights& weights) {
  const int n = model.num_dofs();
  if (state.q.size() != n || ref.q.size() != n)
    throw DimensionError("state or reference does not match the character layout");
  if (!state.q.allFinite() || !state.qdot.allFinite() || !residual.allFinite())
    throw IntegrationError("non-finite reward input");
  double rot = 0.0;
  for (int i = 2; i < n; ++i) rot += std::pow(wrap_angle(state.q[i] - ref.q[i]), 2);
  const double vel = (state.qdot - ref.qdot).squaredNorm();
  const double pos = (keypoints(model, state.q) - ref.keypoints).squaredNorm();
  const RewardWeights w = weights.normalized();
  RewardTerms r;
  r.r_p = std::exp(-2.0 * rot);
  r.r_v = std::exp(-0.005 * vel);
  r.r_e = std::exp(-5.0 * pos);
  r.r_vf = std::exp(-residual.squaredNorm());
  r.total = w.w_p * r.r_p + w.w_v * r.r_v + w.w_e * r.r_e + w.w_vf * r.r_vf;
  return r;
}

// ---------------------------------------------------------------------------
// Initialization and termination

// Simulator state matching a reference frame. A character whose proportions
// differ from the performer may penetrate the ground in the reference pose;
// the root is then lifted until the lowest point touches.
inline SimState state_from_reference(const CharacterModel& model, const RefFrame& ref,
                                     const SimConfig& cfg = {}) {
  VecX q = ref.q;
  const double clearance = body_clearance(model, q);
  if (clearance < -1e-3) q[1] -= clearance;
  return make_state(model, std::move(q), ref.qdot, cfg);
}

struct RsiResult {
  SimState state;
  int start_frame = 0;
};

inline RsiResult reset_rsi(const CharacterModel& model, const MotionClip& clip, Rng& rng,
                           const SimConfig& cfg = {},
                           std::optional<int> forced_start = std::nullopt) {
  const int last = clip.num_frames() - 2;
  if (last < 0) throw ValidationError("clip needs at least 2 frames");
  int t0 = forced_start ? *forced_start
                        : std::uniform_int_distribution<int>(0, last)(rng);
  if (t0 < 0 || t0 > last) throw ValidationError("start frame out of range");
  return {state_from_reference(model, reference_frame(clip, t0), cfg), t0};
}

enum class Termination { kNone, kDeviation, kFallen };

inline std::string to_string(Termination t) {
  switch (t) {
    case Termination::kNone: return "none";
    case Termination::kDeviation: return "deviation";
    case Termination::kFallen: return "fallen";
  }
  return "unknown";
}

// A non-foot contact point at or below the ground.
inline bool has_fallen(const CharacterModel& model, const Pose& pose) {
  for (const auto& c : contact_points(model)) {
    if (model.foot_index(c.link) >= 0) continue;
    if (pose.to_world(c.link, c.local).y() - c.radius < 0.0) return true;
  }
  return false;
}

inline double mean_keypoint_error(const Eigen::Matrix2Xd& a, const Eigen::Matrix2Xd& b) {
  if (a.cols() != b.cols()) throw DimensionError("keypoint count mismatch");
  return (a - b).colwise().norm().mean();
}

inline Termination check_termination(const CharacterModel& model, const SimState& state,
                                     const RefFrame& ref, double threshold = 0.5) {
  if (state.q.size() != model.num_dofs() || ref.q.size() != model.num_dofs())
    throw DimensionError("state or reference does not match the character layout");
  const Pose pose = forward_kinematics(model, state.q);
  if (has_fallen(model, pose)) return Termination::kFallen;
  if (mean_keypoint_error(keypoints(model, pose), ref.keypoints) > threshold)
    return Termination::kDeviation;
  return Termination::kNone;
}

// ---------------------------------------------------------------------------
// Actions

struct ImitationConfig {
  SimConfig sim;
  RewardWeights weights;
  double termination_threshold = 0.5;  // m, mean keypoint error
  int horizon = 300;                   // control steps per training episode
  int forces_per_foot = 2;
  double gain_log_range = 1.0;         // gains are base * exp(clamp(a, -r, r))
  double force_angle_range = std::numbers::pi / 3.0;
  // Base PD gains per joint; empty means the defaults by joint name below.
  std::vector<double> kp_base;
  std::vector<double> kd_base;
};

namespace detail {

inline std::pair<double, double> default_gains(const std::string& joint) {
  if (joint.starts_with("shoulder")) return {200.0, 20.0};
  return {1000.0, 100.0};
}

}  // namespace detail

inline std::pair<VecX, VecX> base_gains(const CharacterModel& model,
                                        const ImitationConfig& cfg) {
  const int nj = model.num_joints();
  if (!cfg.kp_base.empty() && static_cast<int>(cfg.kp_base.size()) != nj)
    throw DimensionError("kp_base length must equal joint count");
  if (!cfg.kd_base.empty() && static_cast<int>(cfg.kd_base.size()) != nj)
    throw DimensionError("kd_base length must equal joint count");
  VecX kp(nj), kd(nj);
  for (int j = 0; j < nj; ++j) {
    const auto [p, d] = detail::default_gains(model.joints[j].name);
    kp[j] = cfg.kp_base.empty() ? p : cfg.kp_base[j];
    kd[j] = cfg.kd_base.empty() ? d : cfg.kd_base[j];
  }
  return {kp, kd};
}

inline int num_residual_forces(const CharacterModel& model, const ImitationConfig& cfg) {
  return static_cast<int>(model.foot_geoms.size()) * cfg.forces_per_foot;
}

// [target offsets | kp | kd | per force (sole position, angle, magnitude)]
inline int action_dim(const CharacterModel& model, const ImitationConfig& cfg = {}) {
  return 3 * model.num_joints() + 3 * num_residual_forces(model, cfg);
}

struct ControlAction {
  VecX target;  // joint angle targets
  VecX kp;
  VecX kd;
  std::vector<ResidualForce> forces;
};

inline ControlAction decode_action(const CharacterModel& model, const ImitationConfig& cfg,
                                   const VecX& action, const VecX& ref_next_q) {
  const int nj = model.num_joints();
  if (action.size() != action_dim(model, cfg))
    throw DimensionError("action length does not match the character");
  if (!action.allFinite()) throw IntegrationError("non-finite action");
  const auto [kp0, kd0] = base_gains(model, cfg);
  const double r = cfg.gain_log_range;
  ControlAction out;
  out.target = ref_next_q.tail(nj) + action.head(nj);
  out.kp = (kp0.array() * action.segment(nj, nj).array().cwiseMax(-r).cwiseMin(r).exp()).matrix();
  out.kd = (kd0.array() * action.segment(2 * nj, nj).array().cwiseMax(-r).cwiseMin(r).exp()).matrix();
  const int nf = num_residual_forces(model, cfg);
  out.forces.reserve(nf);
  for (int f = 0; f < nf; ++f) {
    const int geom = f / cfg.forces_per_foot;
    const Link& foot = model.links[model.foot_geoms[geom]];
    const auto a = action.segment(3 * nj + 3 * f, 3);
    auto unit = [](double x) { return std::clamp(0.5 + 0.5 * x, 0.0, 1.0); };
    ResidualForce rf;
    rf.geom = geom;
    const double heel = -foot.heel * foot.length;
    const double toe = (1.0 - foot.heel) * foot.length;
    rf.contact_point = Vec2(heel + (toe - heel) * unit(a[0]), -foot.halfwidth);
    const double angle = std::clamp(a[1], -1.0, 1.0) * cfg.force_angle_range;
    rf.direction = Vec2(std::sin(angle), std::cos(angle));
    rf.magnitude = cfg.sim.residual_force_cap * unit(a[2]);
    out.forces.push_back(rf);
  }
  return out;
}

// Cap-normalized magnitudes of the forces that the contact gate lets through.
inline VecX applied_residuals(const ControlAction& act, const SimState& state,
                              const SimConfig& cfg) {
  VecX e = VecX::Zero(static_cast<Eigen::Index>(act.forces.size()));
  for (std::size_t i = 0; i < act.forces.size(); ++i) {
    const auto& f = act.forces[i];
    if (state.contact[f.geom])
      e[i] = std::min(f.magnitude, cfg.residual_force_cap) / cfg.residual_force_cap;
  }
  return e;
}

// Advances one control period with the implicit PD servo in every substep.
inline SimState control_step(const CharacterModel& model, const SimState& state,
                             const ControlAction& act, const SimConfig& cfg) {
  const PdServo servo{act.kp, act.kd, act.target};
  SimState s = state;
  for (int k = 0; k < cfg.substeps; ++k)
    s = step(model, s, servo, act.forces, cfg.dt(), cfg);
  return s;
}

// ---------------------------------------------------------------------------
// Episodes

struct StepRecord {
  int frame = 0;           // reference frame the step was tracking
  VecX obs;                // observation the action was chosen from
  VecX action;
  RewardTerms reward;
  VecX residual;           // cap-normalized applied residual magnitudes
  SimState state;          // state after the step
  Termination termination = Termination::kNone;
  bool reset = false;      // state was reset to the reference after this step
};

struct Trajectory {
  int start_frame = 0;
  std::vector<StepRecord> steps;
  // Simulated keypoints aligned with frames start_frame.. of the clip; a
  // reset step records the pre-reset (failed) pose.
  std::vector<Eigen::Matrix2Xd> sim_keypoints;
  VecX final_obs;          // observation after the last step, for bootstrapping
  bool truncated = false;  // ended without termination (clip end or horizon)
  int failures = 0;        // termination events, counting reset-and-continue

  bool succeeded() const { return failures == 0; }
};

struct RolloutOptions {
  int start_frame = 0;
  int max_steps = -1;             // < 0: until the clip ends
  bool reset_on_failure = false;  // evaluation semantics
  std::optional<SimState> initial_state;
};

// Drives `policy` (observation -> action) through the clip. Without
// reset_on_failure the episode stops at the first termination.
template <class Policy>
Trajectory rollout(const CharacterModel& model, const VecX& design_feats,
                   const MotionClip& clip, Policy&& policy, const ImitationConfig& cfg,
                   const RolloutOptions& opt = {}) {
  if (clip.frames.empty() || clip.frames[0].size() != model.num_dofs())
    throw DimensionError("clip does not match the character layout");
  Trajectory traj;
  traj.start_frame = opt.start_frame;
  const int last = clip.num_frames() - 1;
  if (opt.start_frame < 0 || opt.start_frame > last)
    throw ValidationError("start frame out of range");

  SimState state = opt.initial_state
                       ? *opt.initial_state
                       : state_from_reference(model, reference_frame(clip, opt.start_frame),
                                              cfg.sim);
  traj.sim_keypoints.push_back(keypoints(model, state.q));
  int remaining = last - opt.start_frame;
  if (opt.max_steps >= 0) remaining = std::min(remaining, opt.max_steps);
  traj.steps.reserve(remaining);

  RefFrame next = remaining > 0 ? reference_frame(clip, opt.start_frame + 1) : RefFrame{};
  for (int i = 0; i < remaining; ++i) {
    const int t = opt.start_frame + i + 1;
    StepRecord rec;
    rec.frame = t;
    rec.obs = featurize(model, state, next, design_feats).flat();
    rec.action = policy(static_cast<const VecX&>(rec.obs));
    if (rec.action.size() != action_dim(model, cfg))
      throw DimensionError("policy output does not match the action layout");
    const ControlAction act = decode_action(model, cfg, rec.action, next.q);
    rec.residual = applied_residuals(act, state, cfg.sim);
    state = control_step(model, state, act, cfg.sim);
    rec.reward = reward(model, state, next, rec.residual, cfg.weights);
    rec.termination = check_termination(model, state, next, cfg.termination_threshold);
    rec.state = state;
    traj.sim_keypoints.push_back(keypoints(model, state.q));

    const bool done = rec.termination != Termination::kNone;
    if (done) ++traj.failures;
    const RefFrame current = std::move(next);
    if (t < last) next = reference_frame(clip, t + 1);
    if (done && opt.reset_on_failure) {
      rec.reset = true;
      state = state_from_reference(model, current, cfg.sim);
    }
    traj.steps.push_back(std::move(rec));
    if (done && !opt.reset_on_failure) {
      traj.truncated = false;
      return traj;
    }
  }
  traj.truncated = true;
  if (!traj.steps.empty()) {
    // At the clip end the last frame stands in for the next target.
    const RefFrame tail =
        traj.steps.back().frame < last ? next : reference_frame(clip, last);
    traj.final_obs = featurize(model, state, tail, design_feats).flat();
  }
  return traj;
}

}  // namespace morphsim
