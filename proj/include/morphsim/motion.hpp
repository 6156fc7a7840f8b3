#pragma once

// Reference clips, the procedural clip generators and the success-driven
// clip sampler used during controller training.

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "morphsim/character.hpp"
#include "morphsim/errors.hpp"
#include "morphsim/physics.hpp"

namespace morphsim {

using Rng = std::mt19937_64;

struct MotionClip {
  std::string id;
  std::string category;
  double frame_rate = 30.0;  // Hz
  std::vector<VecX> frames;  // generalized positions, SimState::q layout
  // World keypoints of the performer per frame (see morphsim::keypoints).
  std::vector<Eigen::Matrix2Xd> keypoints;

  int num_frames() const { return static_cast<int>(frames.size()); }
  double duration() const { return (num_frames() - 1) / frame_rate; }

  // Finite-difference velocity: central inside, one-sided at the ends.
  VecX velocity(int t) const {
    const int n = num_frames();
    if (t < 0 || t >= n) throw DimensionError("frame index out of range");
    if (t == 0) return (frames[1] - frames[0]) * frame_rate;
    if (t == n - 1) return (frames[n - 1] - frames[n - 2]) * frame_rate;
    return (frames[t + 1] - frames[t - 1]) * (0.5 * frame_rate);
  }

  void validate() const {
    if (num_frames() < 2) throw ValidationError("clip needs at least 2 frames");
    if (!(frame_rate > 0.0)) throw ValidationError("frame rate must be positive");
    if (keypoints.size() != frames.size())
      throw ValidationError("clip keypoints must cover every frame");
    for (std::size_t t = 0; t < frames.size(); ++t) {
      if (frames[t].size() != frames[0].size())
        throw DimensionError("clip frames differ in length");
      if (!frames[t].allFinite() || !keypoints[t].allFinite())
        throw ValidationError("clip contains non-finite values");
    }
  }
};

// Fills clip.keypoints by forward kinematics of the performer model.
inline void attach_keypoints(MotionClip& clip, const CharacterModel& performer) {
  clip.keypoints.clear();
  for (const VecX& q : clip.frames) {
    if (q.size() != performer.num_dofs())
      throw DimensionError("clip frame does not match the performer");
    clip.keypoints.push_back(keypoints(performer, q));
  }
}

// Re-performs a clip on another body. Joint angles are kept, root travel
// from the first frame is scaled by the ratio of root heights above the
// lowest point in that frame, and every frame is shifted vertically so the
// lowest point keeps its height above the ground.
inline MotionClip retarget_clip(const MotionClip& clip, const CharacterModel& source,
                                const CharacterModel& target) {
  if (source.num_dofs() != target.num_dofs())
    throw DimensionError("retarget needs matching topologies");
  if (clip.num_frames() == 0) return clip;
  MotionClip out = clip;
  const VecX& q0 = clip.frames[0];
  const double ratio = (q0[1] - body_clearance(target, q0)) / (q0[1] - body_clearance(source, q0));
  for (int t = 0; t < clip.num_frames(); ++t) {
    const VecX& q = clip.frames[t];
    if (q.size() != source.num_dofs()) throw DimensionError("clip frame does not match the source");
    VecX& r = out.frames[t];
    r[0] = q0[0] + ratio * (q[0] - q0[0]);
    r[1] = q[1] + body_clearance(source, q) - body_clearance(target, q);
  }
  attach_keypoints(out, target);
  return out;
}

// ---------------------------------------------------------------------------
// Procedural clips

enum class ClipKind { kWalk, kHop, kCrawl, kKick, kCartwheelProxy };

inline std::string to_string(ClipKind k) {
  switch (k) {
    case ClipKind::kWalk: return "walk";
    case ClipKind::kHop: return "hop";
    case ClipKind::kCrawl: return "crawl";
    case ClipKind::kKick: return "kick";
    case ClipKind::kCartwheelProxy: return "cartwheel-proxy";
  }
  return "unknown";
}

inline ClipKind clip_kind_from_string(const std::string& s) {
  for (auto k : {ClipKind::kWalk, ClipKind::kHop, ClipKind::kCrawl,
                 ClipKind::kKick, ClipKind::kCartwheelProxy})
    if (to_string(k) == s) return k;
  throw ValidationError("unknown clip kind '" + s + "'");
}

struct ClipParams {
  double period = 1.0;     // s
  double stride = 0.8;     // m travelled per period
  double amplitude = 1.0;  // multiplier on joint swings
  double height = 0.0;     // m, flight apex for hops
  double lean = 0.05;      // rad, forward torso pitch
  double frame_rate = 30.0;

  static ClipParams defaults(ClipKind k) {
    ClipParams p;
    switch (k) {
      case ClipKind::kWalk: break;
      case ClipKind::kHop: p = {0.7, 0.25, 1.0, 0.06, 0.1, 30.0}; break;
      case ClipKind::kCrawl: p = {1.4, 0.4, 1.0, 0.0, 0.6, 30.0}; break;
      case ClipKind::kKick: p = {1.6, 0.0, 1.0, 0.0, 0.0, 30.0}; break;
      case ClipKind::kCartwheelProxy: p = {2.0, 0.0, 1.0, 0.0, 0.5, 30.0}; break;
    }
    return p;
  }
};

namespace detail {

inline double sq(double x) { return x * x; }

// Ankle angle that keeps the foot parallel to the ground, within limits.
inline double flat_ankle(const CharacterModel& m, int ankle, double root,
                         double hip, double knee, double extra = 0.0) {
  return std::clamp(-(root + hip + knee) + extra, m.joints[ankle].lower,
                    m.joints[ankle].upper);
}

// Two-link leg reaching for an ankle at (x, y) from the hip, knee bending
// backwards. Returns the world thigh angle (from straight down, positive
// forward) and the knee flexion; out-of-reach targets are clamped.
inline std::pair<double, double> leg_ik(double l1, double l2, double x, double y) {
  const double d = std::clamp(std::hypot(x, y), std::abs(l1 - l2) + 1e-9, l1 + l2 - 1e-9);
  const double knee = std::numbers::pi -
                      std::acos(std::clamp((l1 * l1 + l2 * l2 - d * d) / (2.0 * l1 * l2), -1.0, 1.0));
  return {std::atan2(x, -y) + std::asin(l2 * std::sin(knee) / d), knee};
}

// Share of each period spent airborne; only hops leave the ground.
inline double flight_fraction(ClipKind kind, const ClipParams& p) {
  if (kind != ClipKind::kHop || !(p.height > 0.0)) return 0.0;
  return std::min(0.6, 2.0 * std::sqrt(2.0 * p.height / 9.81) / p.period);
}

// Pose without root translation for one instant of a periodic motion;
// returns (q, flight height above the grounded root height).
inline std::pair<VecX, double> procedural_pose(const CharacterModel& m,
                                               ClipKind kind,
                                               const ClipParams& p, double t) {
  using namespace body;
  const double pi = std::numbers::pi;
  const double s = std::fmod(t / p.period, 1.0);
  const double a = p.amplitude;
  VecX q = VecX::Zero(m.num_dofs());
  double flight = 0.0;
  double& root = q[2];
  auto j = [&](int joint) -> double& { return q[kRootDofs + joint]; };

  switch (kind) {
    case ClipKind::kWalk:
    case ClipKind::kCrawl: {
      // Feet follow explicit paths relative to the hip: planted feet slide
      // back at exactly the root speed, swing feet travel forward on an arc.
      const bool crawl = kind == ClipKind::kCrawl;
      constexpr double duty = 0.6;  // share of the period a foot is planted
      const double l1 = m.links[kThighL].length, l2 = m.links[kShinL].length;
      const double reach = l1 + l2;
      const double half = 0.5 * duty * p.stride;
      const double hip_h =
          (crawl ? 0.85 : 0.97) * std::sqrt(std::max(sq(reach) - sq(half), 0.25 * sq(reach)));
      const double ahead = crawl ? 0.03 : 0.0;  // neutral foot offset
      const double clear = a * (crawl ? 0.06 : 0.08);
      root = -p.lean;
      for (int side = 0; side < 2; ++side) {
        const double u = std::fmod(s + 0.5 * side, 1.0);
        double fx = ahead, fy = -hip_h;
        if (u < duty) {
          fx += half * (1.0 - 2.0 * u / duty);
        } else {
          const double w = (u - duty) / (1.0 - duty);
          fx -= half * std::cos(pi * w);
          fy += clear * sq(std::sin(pi * w));
        }
        const auto [thigh, knee] = leg_ik(l1, l2, fx, fy);
        const int hip = side ? kHipR : kHipL;
        j(hip) = thigh - root;
        j(hip + 1) = -knee;
        j(hip + 2) = flat_ankle(m, hip + 2, root, j(hip), j(hip + 1));
        const int sh = side ? kShoulderR : kShoulderL;
        j(sh) = (crawl ? p.lean + 0.3 : 0.1) - 1.5 * a * fx / reach;
      }
      break;
    }
    case ClipKind::kHop: {
      // Both feet move together. The stance crouch follows sin(pi w), whose
      // slope at lift-off and touchdown matches the ballistic flight speed,
      // and the feet slide back so the root keeps one forward speed.
      const double f = flight_fraction(kind, p);
      const double l1 = m.links[kThighL].length, l2 = m.links[kShinL].length;
      const double ts = (1.0 - f) * p.period;
      const double depth = f > 0.0 ? std::sqrt(2.0 * 9.81 * p.height) * ts / pi : 0.1 * a;
      const double half = 0.5 * p.stride / p.period * ts;
      const double reach = l1 + l2;
      const double hip_h = 0.97 * std::sqrt(std::max(sq(reach) - sq(half), 0.25 * sq(reach)));
      constexpr double ahead = 0.03;
      double fx = ahead, fy = -hip_h, crouch = 0.0;
      if (s < f) {
        const double w = s / f;
        flight = 4.0 * p.height * w * (1.0 - w);
        fx -= half * std::cos(pi * w);
      } else {
        const double w = (s - f) / (1.0 - f);
        crouch = std::sin(pi * w);
        fx += half * (1.0 - 2.0 * w);
        fy += depth * crouch;
      }
      root = -p.lean - 0.2 * crouch;
      const auto [thigh, knee] = leg_ik(l1, l2, fx, fy);
      for (int hip : {kHipL, kHipR}) {
        j(hip) = thigh - root;
        j(hip + 1) = -knee;
        j(hip + 2) = flat_ankle(m, hip + 2, root, j(hip), j(hip + 1));
      }
      j(kShoulderL) = j(kShoulderR) = 0.6 - 1.2 * a * crouch + 0.3 * p.lean;
      break;
    }
    case ClipKind::kKick: {
      const double kick = sq(std::sin(pi * s));
      root = -p.lean + 0.2 * a * kick;
      j(kHipL) = -root + 0.02;
      j(kKneeL) = -0.08;
      j(kAnkleL) = flat_ankle(m, kAnkleL, root, j(kHipL), j(kKneeL));
      j(kHipR) = -root + 0.02 + 1.2 * a * kick;
      j(kKneeR) = -0.08 - 0.9 * a * sq(std::sin(2.0 * pi * s));
      j(kAnkleR) = flat_ankle(m, kAnkleR, root, j(kHipR), j(kKneeR)) - 0.3 * kick;
      j(kAnkleR) = std::clamp(j(kAnkleR), m.joints[kAnkleR].lower, m.joints[kAnkleR].upper);
      j(kShoulderL) = 0.1 + 0.6 * a * kick;
      j(kShoulderR) = 0.1 - 0.4 * a * kick;
      break;
    }
    case ClipKind::kCartwheelProxy: {
      const double reach = sq(std::sin(pi * s));
      root = -p.lean * a * reach;
      j(kHipL) = -root + 0.02;
      j(kKneeL) = -0.1;
      j(kAnkleL) = flat_ankle(m, kAnkleL, root, j(kHipL), j(kKneeL));
      j(kHipR) = -root - 0.5 * a * reach;
      j(kKneeR) = -0.1 - 0.4 * a * reach;
      j(kAnkleR) = flat_ankle(m, kAnkleR, root, j(kHipR), j(kKneeR), -0.2 * reach);
      j(kShoulderL) = 0.1 + 2.6 * a * reach;
      j(kShoulderR) = 0.1 + 2.6 * a * sq(std::sin(pi * std::fmod(s + 0.25, 1.0)));
      break;
    }
  }
  for (int k = 0; k < m.num_joints(); ++k)
    j(k) = std::clamp(j(k), m.joints[k].lower, m.joints[k].upper);
  return {q, flight};
}

struct BalancedPose {
  VecX q;                      // root x = 0, lowest point on the ground
  double flight = 0.0;
  std::vector<double> foot_x;  // ankle x per foot geom
  std::vector<double> foot_h;  // lowest foot point above the ground
};

// Pitches the upper body by `tilt` while the legs keep their world angles.
inline VecX tilt_pose(const CharacterModel& m, VecX q, double tilt) {
  q[2] += tilt;
  for (int link : m.foot_geoms) {
    int j = m.parent_joint(link);
    while (j >= 0 && m.joints[j].parent != m.root) j = m.parent_joint(m.joints[j].parent);
    if (j < 0) continue;
    q[kRootDofs + j] =
        std::clamp(q[kRootDofs + j] - tilt, m.joints[j].lower, m.joints[j].upper);
  }
  q[1] = -body_clearance(m, q);
  return q;
}

// Horizontal offset of the centre of mass from the feet that carry weight.
// Feet are weighted by how close they are to the ground.
inline double imbalance(const CharacterModel& m, const VecX& q) {
  constexpr double kReach = 0.25;  // m, feet higher than this carry no weight
  const auto pts = contact_points(m);
  const Pose pose = forward_kinematics(m, q);
  double com = 0.0, target = 0.0, wsum = 0.0;
  for (int i = 0; i < m.num_links(); ++i)
    com += m.links[i].mass * link_com(m, pose, i).x();
  for (int link : m.foot_geoms) {
    const double w =
        std::clamp(1.0 - link_clearance(pose, link, pts) / kReach, 0.0, 1.0) + 1e-6;
    target += w * link_com(m, pose, link).x();
    wsum += w;
  }
  return com / m.total_mass() - target / wsum;
}

// Constant upper-body pitch that centres the mass over the feet on average
// across one period of the motion.
inline double balance_tilt(const CharacterModel& m, ClipKind kind,
                           const ClipParams& p) {
  constexpr int kSamples = 24;
  std::vector<VecX> poses;
  for (int i = 0; i < kSamples; ++i)
    poses.push_back(procedural_pose(m, kind, p, p.period * i / kSamples).first);
  auto mean_offset = [&](double tilt) {
    double sum = 0.0;
    for (const VecX& q : poses) sum += imbalance(m, tilt_pose(m, q, tilt));
    return sum / kSamples;
  };
  double d0 = 0.0, d1 = 0.05;
  double e0 = mean_offset(d0), e1 = mean_offset(d1);
  for (int it = 0; it < 20 && std::abs(e1) > 1e-7 && e1 != e0; ++it) {
    const double d2 = std::clamp(d1 - e1 * (d1 - d0) / (e1 - e0), -0.6, 0.6);
    d0 = d1;
    e0 = e1;
    d1 = d2;
    e1 = mean_offset(d1);
  }
  return d1;
}

inline BalancedPose balanced_pose(const CharacterModel& m, ClipKind kind,
                                  const ClipParams& p, double t, double tilt) {
  auto [q, flight] = procedural_pose(m, kind, p, t);
  const auto pts = contact_points(m);
  BalancedPose out;
  out.q = tilt_pose(m, std::move(q), tilt);
  out.flight = flight;
  const Pose pose = forward_kinematics(m, out.q);
  for (int link : m.foot_geoms) {
    out.foot_x.push_back(pose.frames[link].origin.x());
    out.foot_h.push_back(link_clearance(pose, link, pts));
  }
  return out;
}

}  // namespace detail

// Deterministic periodic reference motion for the given performer. The upper
// body is pitched so the mass sits over the feet on average, the lowest body
// point touches the ground (plus flight for hops) and the lowest foot stays
// planted, so the root advances by the swing of the legs. Hops move forward
// at stride / period throughout, airborne or not.
inline MotionClip generate_clip(ClipKind kind, const ClipParams& params,
                                double duration,
                                const CharacterModel& performer = default_character()) {
  if (!(params.period > 0.0) || !(params.frame_rate > 0.0) ||
      !(params.amplitude >= 0.0) || !(params.height >= 0.0) ||
      !std::isfinite(params.stride) || !std::isfinite(params.lean))
    throw ValidationError("invalid clip parameters");
  const int frames = static_cast<int>(std::floor(duration * params.frame_rate + 1e-9)) + 1;
  if (!(duration > 0.0) || frames < 2)
    throw ValidationError("clip duration yields fewer than 2 frames");

  MotionClip clip;
  clip.category = to_string(kind);
  clip.id = clip.category;
  clip.frame_rate = params.frame_rate;
  const double f_air = detail::flight_fraction(kind, params);
  const double tilt = detail::balance_tilt(performer, kind, params);
  int stance = -1;
  bool airborne = false;
  double anchor = 0.0;  // world x of the planted ankle
  double takeoff = 0.0;  // anchor after the current flight lands
  const double speed = params.stride / params.period;
  std::vector<double> prev_foot_x;
  for (int f = 0; f < frames; ++f) {
    const double t = f / params.frame_rate;
    detail::BalancedPose b = detail::balanced_pose(performer, kind, params, t, tilt);
    VecX q = std::move(b.q);
    q[1] += b.flight;
    if (b.flight > 0.0) {
      // Constant horizontal speed from takeoff to landing.
      const double t0 = std::floor(t / params.period) * params.period;
      const double t1 = t0 + f_air * params.period;
      const auto lift = detail::balanced_pose(performer, kind, params, t0, tilt);
      const auto land = detail::balanced_pose(performer, kind, params, t1, tilt);
      q[0] = anchor - lift.foot_x[stance] + speed * (t - t0);
      takeoff = anchor - lift.foot_x[stance] + speed * (t1 - t0) + land.foot_x[stance];
      airborne = true;
    } else {
      const int lowest = static_cast<int>(
          std::min_element(b.foot_h.begin(), b.foot_h.end()) - b.foot_h.begin());
      if (stance < 0) {
        stance = lowest;
        anchor = b.foot_x[stance];
      } else if (airborne) {
        anchor = takeoff;  // first grounded frame after a flight
      } else if (b.foot_h[lowest] < b.foot_h[stance] - 1e-9) {
        // The new stance foot was already down in the previous frame.
        anchor = clip.frames.back()[0] + prev_foot_x[lowest];
        stance = lowest;
      }
      q[0] = anchor - b.foot_x[stance];
      airborne = false;
    }
    prev_foot_x = b.foot_x;
    clip.frames.push_back(std::move(q));
  }
  attach_keypoints(clip, performer);

  // Every point other than the feet must stay clear of the ground.
  const auto pts = contact_points(performer);
  for (const VecX& q : clip.frames) {
    const Pose pose = forward_kinematics(performer, q);
    for (const auto& c : pts) {
      if (performer.foot_index(c.link) >= 0) continue;
      if (pose.to_world(c.link, c.local).y() - c.radius < 0.01)
        throw ValidationError("clip parameters put a non-foot link on the ground");
    }
  }
  clip.validate();
  return clip;
}

// ---------------------------------------------------------------------------
// Success-driven clip sampling

struct CurriculumState {
  std::vector<std::string> ids;
  std::vector<std::deque<bool>> history;  // oldest first
  std::vector<double> success;            // EWMA of history, in [0, 1]
  double temperature = 0.2;
  double decay = 0.5;  // weight ratio between consecutive history slots
  std::size_t max_history = 50;

  void add_clip(const std::string& id) {
    if (index_of(id) >= 0) throw ValidationError("duplicate clip id '" + id + "'");
    ids.push_back(id);
    history.emplace_back();
    success.push_back(0.0);
  }

  int index_of(const std::string& id) const {
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] == id) return static_cast<int>(i);
    return -1;
  }

  // P(i) = exp(-s_i / tau) / sum_j exp(-s_j / tau)
  std::vector<double> probabilities() const {
    if (ids.empty()) throw ValidationError("empty corpus");
    if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
    double smin = *std::min_element(success.begin(), success.end());
    std::vector<double> p(ids.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = std::exp(-(success[i] - smin) / temperature);
      z += p[i];
    }
    for (double& x : p) x /= z;
    return p;
  }
};

// Normalized exponentially weighted mean of a history; the newest entry has
// weight 1, the one before it `decay`, and so on.
inline double ewma(const std::deque<bool>& history, double decay) {
  if (history.empty()) return 0.0;
  double num = 0.0, den = 0.0, w = 1.0;
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    num += w * (*it ? 1.0 : 0.0);
    den += w;
    w *= decay;
  }
  return num / den;
}

inline std::size_t sample_clip_index(const CurriculumState& c, Rng& rng) {
  const auto p = c.probabilities();
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  return p.size() - 1;
}

inline std::string sample_clip(const CurriculumState& c, Rng& rng) {
  return c.ids[sample_clip_index(c, rng)];
}

inline void record_outcome(CurriculumState& c, const std::string& id,
                           bool succeeded) {
  const int i = c.index_of(id);
  if (i < 0) throw ValidationError("unknown clip id '" + id + "'");
  auto& h = c.history[i];
  h.push_back(succeeded);
  while (h.size() > c.max_history) h.pop_front();
  c.success[i] = ewma(h, c.decay);
}

}  // namespace morphsim
