#pragma once

// Imitation metrics over keypoint trajectories. Positions are planar, so
// errors are 2D distances reported in millimetres.

#include <cstdio>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "morphsim/errors.hpp"
#include "morphsim/imitation.hpp"

namespace morphsim {

using KeypointTrack = std::vector<Eigen::Matrix2Xd>;  // per frame, column 0 = root

namespace detail {

inline void check_tracks(const KeypointTrack& a, const KeypointTrack& b) {
  if (a.size() != b.size()) throw DimensionError("trajectories differ in frame count");
  for (std::size_t t = 0; t < a.size(); ++t)
    if (a[t].cols() != b[t].cols()) throw DimensionError("trajectories differ in joint count");
}

}  // namespace detail

// Mean per-joint position error in mm. The root-relative variant subtracts
// each frame's root position from all of that frame's joints first.
inline double mpjpe(const KeypointTrack& sim, const KeypointTrack& ref, bool root_relative) {
  detail::check_tracks(sim, ref);
  if (sim.empty()) throw DimensionError("empty trajectory");
  double sum = 0.0;
  long count = 0;
  for (std::size_t t = 0; t < sim.size(); ++t) {
    Eigen::Matrix2Xd a = sim[t], b = ref[t];
    if (root_relative) {
      a = a.colwise() - Eigen::Vector2d(sim[t].col(0));
      b = b.colwise() - Eigen::Vector2d(ref[t].col(0));
    }
    sum += (a - b).colwise().norm().sum();
    count += a.cols();
  }
  return 1000.0 * sum / static_cast<double>(count);
}

// Mean error of second differences (position per frame^2), in mm.
inline double accel_error(const KeypointTrack& sim, const KeypointTrack& ref, double frame_rate) {
  detail::check_tracks(sim, ref);
  if (!(frame_rate > 0.0)) throw ValidationError("frame rate must be positive");
  if (sim.size() < 3) throw DimensionError("acceleration error needs at least 3 frames");
  double sum = 0.0;
  long count = 0;
  for (std::size_t t = 1; t + 1 < sim.size(); ++t) {
    const Eigen::Matrix2Xd as = sim[t + 1] - 2.0 * sim[t] + sim[t - 1];
    const Eigen::Matrix2Xd ar = ref[t + 1] - 2.0 * ref[t] + ref[t - 1];
    sum += (as - ar).colwise().norm().sum();
    count += as.cols();
  }
  return 1000.0 * sum / static_cast<double>(count);
}

// Any fall or deviation before the clip end fails the clip, including one on
// the final frame.
inline bool success(const Trajectory& traj) {
  for (const auto& s : traj.steps)
    if (s.termination != Termination::kNone) return false;
  return true;
}

struct ClipMetrics {
  std::string clip_id;
  double s_succ = 0.0;     // fraction in [0, 1]
  double e_mpjpe = 0.0;    // mm
  double e_mpjpe_g = 0.0;  // mm
  double e_acc = 0.0;      // mm / frame^2
  double mean_reward = 0.0;
};

struct EvalReport {
  std::vector<ClipMetrics> clips;
  ClipMetrics aggregate;  // means over clips

  void finalize() {
    aggregate = {"mean", 0, 0, 0, 0, 0};
    if (clips.empty()) return;
    for (const auto& c : clips) {
      aggregate.s_succ += c.s_succ;
      aggregate.e_mpjpe += c.e_mpjpe;
      aggregate.e_mpjpe_g += c.e_mpjpe_g;
      aggregate.e_acc += c.e_acc;
      aggregate.mean_reward += c.mean_reward;
    }
    const double n = static_cast<double>(clips.size());
    aggregate.s_succ /= n;
    aggregate.e_mpjpe /= n;
    aggregate.e_mpjpe_g /= n;
    aggregate.e_acc /= n;
    aggregate.mean_reward /= n;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "clip,S_succ,E_mpjpe,E_mpjpe_g,E_acc,mean_reward\n";
    os << std::setprecision(10);
    auto row = [&](const ClipMetrics& c) {
      os << c.clip_id << ',' << c.s_succ << ',' << c.e_mpjpe << ',' << c.e_mpjpe_g << ','
         << c.e_acc << ',' << c.mean_reward << '\n';
    };
    for (const auto& c : clips) row(c);
    row(aggregate);
    return os.str();
  }

  std::string to_text() const {
    std::size_t w = 4;
    for (const auto& c : clips) w = std::max(w, c.clip_id.size());
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-*s  %8s  %9s  %11s  %9s\n", static_cast<int>(w), "clip",
                  "S_succ", "E_mpjpe", "E_mpjpe-g", "E_acc");
    os << buf;
    auto row = [&](const ClipMetrics& c) {
      std::snprintf(buf, sizeof buf, "%-*s  %7.1f%%  %9.1f  %11.1f  %9.2f\n", static_cast<int>(w),
                    c.clip_id.c_str(), 100.0 * c.s_succ, c.e_mpjpe, c.e_mpjpe_g, c.e_acc);
      os << buf;
    };
    for (const auto& c : clips) row(c);
    row(aggregate);
    return os.str();
  }
};

// Metrics of one evaluation trajectory against its clip's reference.
inline ClipMetrics clip_metrics(const Trajectory& traj, const MotionClip& clip) {
  ClipMetrics m;
  m.clip_id = clip.id;
  const KeypointTrack ref(clip.keypoints.begin() + traj.start_frame,
                          clip.keypoints.begin() + traj.start_frame +
                              static_cast<long>(traj.sim_keypoints.size()));
  m.s_succ = success(traj) ? 1.0 : 0.0;
  m.e_mpjpe = mpjpe(traj.sim_keypoints, ref, true);
  m.e_mpjpe_g = mpjpe(traj.sim_keypoints, ref, false);
  m.e_acc = traj.sim_keypoints.size() >= 3 ? accel_error(traj.sim_keypoints, ref, clip.frame_rate)
                                           : 0.0;
  double r = 0.0;
  for (const auto& s : traj.steps) r += s.reward.total;
  m.mean_reward = traj.steps.empty() ? 0.0 : r / static_cast<double>(traj.steps.size());
  return m;
}

}  // namespace morphsim
