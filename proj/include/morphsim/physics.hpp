#pragma once

// Planar articulated rigid-body simulator.
//
// Generalized coordinates are q = (root x, root y, root angle, joint angles...)
// with matching velocities. Every link is a uniform box ("rod") of length L
// and half-width w whose axis leaves the link's proximal point at
// `rest_angle` relative to the link frame. The equations of motion
//
//   M(q) qdd = tau + sum_i m_i J_i^T (g - Jdot_i qd) + sum_contacts J_p^T f
//
// are assembled from per-link Jacobians and integrated with semi-implicit
// Euler. Ground contact is a spring-damper penalty with regularized Coulomb
// friction; penalty damping, contact stiffness and joint-limit springs are
// treated linearly implicitly so the 450 Hz default rate stays stable for
// light feet.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "morphsim/errors.hpp"

namespace morphsim {

using Vec2 = Eigen::Vector2d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline constexpr int kRootDofs = 3;
inline constexpr int kMaxDofs = 32;

using DofVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDofs, 1>;
using DofMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDofs, kMaxDofs>;
using PointJacobian =
    Eigen::Matrix<double, 2, Eigen::Dynamic, 0, 2, kMaxDofs>;

// Simulator constants. Defaults are the documented desk-scale settings.
struct SimConfig {
  double gravity = 9.81;                // m/s^2
  double contact_stiffness = 3.0e4;     // N/m
  double contact_damping = 300.0;       // N s/m
  double friction_coefficient = 1.0;    // Coulomb mu
  double tangential_damping = 3.0e3;    // N s/m, sticking regularization
  double contact_tolerance = 2.0e-3;    // m, band for contact flags
  double torque_limit = 200.0;          // N m, before gear
  double residual_force_cap = 100.0;    // N
  double joint_limit_stiffness = 2.0e3; // N m/rad
  double joint_limit_damping = 50.0;    // N m s/rad
  double joint_limit_tolerance = 0.02;  // rad, hard bound past each limit
  double stiction_velocity = 1.0e-3;    // rad/s
  double armature = 0.02;               // kg m^2 rotor inertia per joint
  double sim_rate = 450.0;              // Hz
  int substeps = 15;                    // simulation steps per control step

  double dt() const { return 1.0 / sim_rate; }
  double control_rate() const { return sim_rate / substeps; }
};

// Moment of inertia of a uniform box of length L and width 2w about its
// centre of mass, for rotation in the plane.
inline double box_inertia(double mass, double length, double halfwidth) {
  return mass * (length * length + 4.0 * halfwidth * halfwidth) / 12.0;
}

struct Link {
  std::string name;
  double length = 0.0;      // m
  double mass = 0.0;        // kg
  double halfwidth = 0.0;   // m
  double inertia = 0.0;     // kg m^2, about the centre of mass
  double rest_angle = 0.0;  // rod direction in the link frame, rad
  double heel = 0.0;        // fraction of the rod behind the proximal point
};

struct Joint {
  std::string name;
  int parent = 0;
  int child = 1;
  double attach = 1.0;  // along the parent rod, fraction of parent length
  double lower = -1.0;  // rad
  double upper = 1.0;   // rad
  double frictionloss = 0.0;  // N m
  double motor_gear = 1.0;
};

struct CharacterModel {
  std::vector<Link> links;
  std::vector<Joint> joints;
  std::vector<int> foot_geoms;  // link indices
  int root = 0;
  // Root translation welded to the world (pendulum-style fixtures).
  bool pinned_root = false;

  int num_links() const { return static_cast<int>(links.size()); }
  int num_joints() const { return static_cast<int>(joints.size()); }
  int num_dofs() const { return kRootDofs + num_joints(); }

  double total_mass() const {
    double m = 0.0;
    for (const auto& l : links) m += l.mass;
    return m;
  }

  // Index into foot_geoms for a link, or -1.
  int foot_index(int link) const {
    for (std::size_t i = 0; i < foot_geoms.size(); ++i)
      if (foot_geoms[i] == link) return static_cast<int>(i);
    return -1;
  }

  // Joint whose child is `link`, or -1 for the root.
  int parent_joint(int link) const {
    for (int j = 0; j < num_joints(); ++j)
      if (joints[j].child == link) return j;
    return -1;
  }

  // Throws ValidationError when the model is not a well-formed tree with
  // physical parameters.
  void validate() const {
    if (links.empty()) throw ValidationError("model has no links");
    if (root != 0) throw ValidationError("root link must have index 0");
    if (num_joints() != num_links() - 1)
      throw ValidationError("a tree needs exactly links-1 joints");
    if (num_dofs() > kMaxDofs)
      throw ValidationError("too many degrees of freedom");
    std::vector<int> parents(links.size(), -2);
    parents[0] = -1;
    for (const auto& j : joints) {
      if (j.parent < 0 || j.parent >= num_links() || j.child <= 0 ||
          j.child >= num_links())
        throw ValidationError("joint '" + j.name + "' references a bad link");
      if (j.parent >= j.child)
        throw ValidationError("joint '" + j.name +
                              "' must have parent index below child index");
      if (parents[j.child] != -2)
        throw ValidationError("link " + links[j.child].name +
                              " has more than one parent");
      parents[j.child] = j.parent;
      if (!(j.lower < j.upper))
        throw ValidationError("joint '" + j.name + "' needs lower < upper");
      if (!(j.frictionloss >= 0.0))
        throw ValidationError("joint '" + j.name + "' frictionloss < 0");
      if (!(j.motor_gear > 0.0))
        throw ValidationError("joint '" + j.name + "' motor_gear <= 0");
    }
    for (const auto& l : links) {
      if (!(l.length > 0.0 && l.mass > 0.0 && l.halfwidth > 0.0))
        throw ValidationError("link '" + l.name +
                              "' needs positive length, mass and halfwidth");
      const double expected = box_inertia(l.mass, l.length, l.halfwidth);
      if (std::abs(l.inertia - expected) > 1e-9 * std::max(1.0, expected))
        throw ValidationError("link '" + l.name +
                              "' inertia inconsistent with its geometry");
    }
    for (int f : foot_geoms)
      if (f < 0 || f >= num_links())
        throw ValidationError("foot geom index out of range");
  }
};

// Recomputes every link inertia from mass and geometry.
inline void refresh_inertia(CharacterModel& model) {
  for (auto& l : model.links)
    l.inertia = box_inertia(l.mass, l.length, l.halfwidth);
}

struct SimState {
  VecX q;
  VecX qdot;
  double time = 0.0;
  std::vector<bool> contact;  // one flag per foot geom

  bool operator==(const SimState& o) const {
    return q.size() == o.q.size() && qdot.size() == o.qdot.size() &&
           q == o.q && qdot == o.qdot && time == o.time && contact == o.contact;
  }
};

// An external force applied at a foot geom. The contact point is expressed in
// the geom's rod frame (x along the rod, origin at the proximal point); the
// direction is a world-frame unit vector.
struct ResidualForce {
  int geom = 0;  // index into CharacterModel::foot_geoms
  Vec2 contact_point = Vec2::Zero();
  Vec2 direction = Vec2::UnitY();
  double magnitude = 0.0;  // N
};

// ---------------------------------------------------------------------------
// Kinematics

inline Vec2 perp(const Vec2& v) { return Vec2(-v.y(), v.x()); }

struct LinkFrame {
  Vec2 origin = Vec2::Zero();  // proximal (joint) point
  Vec2 axis = Vec2::UnitX();   // rod direction in world
  double angle = 0.0;          // link frame angle
  double omega = 0.0;          // angular velocity
};

struct Pose {
  std::vector<LinkFrame> frames;
  std::vector<int> joint_of_link;  // -1 for the root

  // Rod-frame point to world.
  Vec2 to_world(int link, const Vec2& local) const {
    const auto& f = frames[link];
    return f.origin + local.x() * f.axis + local.y() * perp(f.axis);
  }
};

inline Pose forward_kinematics(const CharacterModel& model, const VecX& q,
                               const VecX* qdot = nullptr) {
  const int nl = model.num_links();
  Pose pose;
  pose.frames.resize(nl);
  pose.joint_of_link.assign(nl, -1);
  for (int j = 0; j < model.num_joints(); ++j)
    pose.joint_of_link[model.joints[j].child] = j;

  auto& root = pose.frames[0];
  root.origin = Vec2(q[0], q[1]);
  root.angle = q[2];
  root.omega = qdot ? (*qdot)[2] : 0.0;
  const double ra = root.angle + model.links[0].rest_angle;
  root.axis = Vec2(std::cos(ra), std::sin(ra));
  for (int j = 0; j < model.num_joints(); ++j) {
    const Joint& jt = model.joints[j];
    const LinkFrame& p = pose.frames[jt.parent];
    LinkFrame& c = pose.frames[jt.child];
    c.origin = p.origin + jt.attach * model.links[jt.parent].length * p.axis;
    c.angle = p.angle + q[kRootDofs + j];
    c.omega = p.omega + (qdot ? (*qdot)[kRootDofs + j] : 0.0);
    const double a = c.angle + model.links[jt.child].rest_angle;
    c.axis = Vec2(std::cos(a), std::sin(a));
  }
  return pose;
}

inline Vec2 rod_start(const CharacterModel& m, const Pose& p, int link) {
  return p.to_world(link, Vec2(-m.links[link].heel * m.links[link].length, 0));
}
inline Vec2 rod_end(const CharacterModel& m, const Pose& p, int link) {
  const Link& l = m.links[link];
  return p.to_world(link, Vec2((1.0 - l.heel) * l.length, 0));
}
inline Vec2 link_com(const CharacterModel& m, const Pose& p, int link) {
  const Link& l = m.links[link];
  return p.to_world(link, Vec2((0.5 - l.heel) * l.length, 0));
}

// World positions tracked for imitation and evaluation: the root point
// followed by the distal end of every link.
inline Eigen::Matrix2Xd keypoints(const CharacterModel& model,
                                  const Pose& pose) {
  Eigen::Matrix2Xd k(2, model.num_links() + 1);
  k.col(0) = pose.frames[0].origin;
  for (int i = 0; i < model.num_links(); ++i)
    k.col(i + 1) = rod_end(model, pose, i);
  return k;
}

inline Eigen::Matrix2Xd keypoints(const CharacterModel& model, const VecX& q) {
  return keypoints(model, forward_kinematics(model, q));
}

// d(point)/dq for a world point rigidly attached to `link`.
inline PointJacobian point_jacobian(const CharacterModel& model,
                                    const Pose& pose, int link,
                                    const Vec2& point) {
  PointJacobian jac = PointJacobian::Zero(2, model.num_dofs());
  jac(0, 0) = 1.0;
  jac(1, 1) = 1.0;
  jac.col(2) = perp(point - pose.frames[0].origin);
  for (int l = link, j = pose.joint_of_link[l]; j >= 0;
       l = model.joints[j].parent, j = pose.joint_of_link[l]) {
    jac.col(kRootDofs + j) = perp(point - pose.frames[l].origin);
  }
  return jac;
}

// Velocity of a point attached to `link`; needs a pose built with qdot.
inline Vec2 point_velocity(const CharacterModel& model, const Pose& pose,
                           const VecX& qdot, int link, const Vec2& point) {
  Vec2 v(qdot[0], qdot[1]);
  Vec2 next = point;
  for (int l = link;;) {
    v += pose.frames[l].omega * perp(next - pose.frames[l].origin);
    next = pose.frames[l].origin;
    const int j = pose.joint_of_link[l];
    if (j < 0) break;
    l = model.joints[j].parent;
  }
  return v;
}

// Point acceleration at qdd = 0 (centripetal terms, Jdot * qd).
inline Vec2 point_bias_acceleration(const CharacterModel& model,
                                    const Pose& pose, int link,
                                    const Vec2& point) {
  Vec2 a = Vec2::Zero();
  Vec2 next = point;
  for (int l = link;;) {
    const double w = pose.frames[l].omega;
    a -= w * w * (next - pose.frames[l].origin);
    next = pose.frames[l].origin;
    const int j = pose.joint_of_link[l];
    if (j < 0) break;
    l = model.joints[j].parent;
  }
  return a;
}

// Joint-space mass matrix including joint armature.
inline DofMat mass_matrix(const CharacterModel& model, const Pose& pose,
                          const SimConfig& cfg) {
  const int n = model.num_dofs();
  DofMat mass = DofMat::Zero(n, n);
  for (int i = 0; i < model.num_links(); ++i) {
    const Link& l = model.links[i];
    const PointJacobian jc =
        point_jacobian(model, pose, i, link_com(model, pose, i));
    mass.noalias() += l.mass * jc.transpose() * jc;
    // Angular Jacobian: ones on the root angle and every ancestor joint.
    DofVec jw = DofVec::Zero(n);
    jw[2] = 1.0;
    for (int k = i, j = pose.joint_of_link[k]; j >= 0;
         k = model.joints[j].parent, j = pose.joint_of_link[k])
      jw[kRootDofs + j] = 1.0;
    mass.noalias() += l.inertia * jw * jw.transpose();
  }
  for (int j = 0; j < model.num_joints(); ++j)
    mass(kRootDofs + j, kRootDofs + j) += cfg.armature;
  return mass;
}

// A ground-contact sample point on a link, in the link's rod frame.
struct ContactPoint {
  int link = 0;
  Vec2 local = Vec2::Zero();
  double radius = 0.0;
};

// Each link owns its proximal rod end and, when no child hangs off it, its
// distal rod end. Joint points are therefore counted once, by the child.
inline std::vector<ContactPoint> contact_points(const CharacterModel& model) {
  std::vector<ContactPoint> pts;
  for (int i = 0; i < model.num_links(); ++i) {
    const Link& l = model.links[i];
    pts.push_back({i, Vec2(-l.heel * l.length, 0), l.halfwidth});
    bool distal_free = true;
    for (const auto& j : model.joints)
      if (j.parent == i && j.attach >= 1.0 - l.heel - 1e-9) distal_free = false;
    if (distal_free)
      pts.push_back({i, Vec2((1.0 - l.heel) * l.length, 0), l.halfwidth});
  }
  return pts;
}

// Lowest surface height (y - radius) over a link's contact points.
inline double link_clearance(const Pose& pose, int link,
                             std::span<const ContactPoint> points) {
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& c : points)
    if (c.link == link)
      lowest = std::min(lowest, pose.to_world(link, c.local).y() - c.radius);
  return lowest;
}

inline std::vector<bool> contact_flags(const CharacterModel& model,
                                       const Pose& pose,
                                       const SimConfig& cfg = {}) {
  const auto pts = contact_points(model);
  std::vector<bool> flags(model.foot_geoms.size());
  for (std::size_t g = 0; g < flags.size(); ++g)
    flags[g] = link_clearance(pose, model.foot_geoms[g], pts) <=
               cfg.contact_tolerance;
  return flags;
}

// Lowest point of the whole body relative to the ground.
inline double body_clearance(const CharacterModel& model, const VecX& q) {
  const Pose pose = forward_kinematics(model, q);
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& c : contact_points(model))
    lowest = std::min(lowest, pose.to_world(c.link, c.local).y() - c.radius);
  return lowest;
}

inline SimState make_state(const CharacterModel& model, VecX q, VecX qdot,
                           const SimConfig& cfg = {}) {
  if (q.size() != model.num_dofs() || qdot.size() != model.num_dofs())
    throw DimensionError("state length must be 3 + joint count");
  SimState s{std::move(q), std::move(qdot), 0.0, {}};
  s.contact = contact_flags(model, forward_kinematics(model, s.q), cfg);
  return s;
}

// ---------------------------------------------------------------------------
// Actuation

// tau = gear * clamp(kp * (target - p) - kd * pdot, +-limit).
inline VecX pd_torque(const VecX& kp, const VecX& kd, const VecX& p_target,
                      const VecX& p, const VecX& pdot, const VecX& motor_gear,
                      double torque_limit =
                          std::numeric_limits<double>::infinity()) {
  const auto n = kp.size();
  if (kd.size() != n || p_target.size() != n || p.size() != n ||
      pdot.size() != n || motor_gear.size() != n)
    throw DimensionError("pd_torque inputs must share one length");
  VecX tau(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double raw = kp[i] * (p_target[i] - p[i]) - kd[i] * pdot[i];
    tau[i] = motor_gear[i] * std::clamp(raw, -torque_limit, torque_limit);
  }
  return tau;
}

inline VecX motor_gears(const CharacterModel& model) {
  VecX g(model.num_joints());
  for (int j = 0; j < model.num_joints(); ++j) g[j] = model.joints[j].motor_gear;
  return g;
}

// ---------------------------------------------------------------------------
// Energy and momentum (verification helpers)

inline double total_energy(const CharacterModel& model, const SimState& state,
                           const SimConfig& cfg = {}) {
  const Pose pose = forward_kinematics(model, state.q, &state.qdot);
  const DofVec qd = state.qdot;
  const double kinetic = 0.5 * qd.dot(mass_matrix(model, pose, cfg) * qd);
  double potential = 0.0;
  for (int i = 0; i < model.num_links(); ++i)
    potential += model.links[i].mass * cfg.gravity * link_com(model, pose, i).y();
  return kinetic + potential;
}

inline Vec2 linear_momentum(const CharacterModel& model, const Pose& pose,
                            const VecX& qdot) {
  Vec2 p = Vec2::Zero();
  for (int i = 0; i < model.num_links(); ++i)
    p += model.links[i].mass *
         point_velocity(model, pose, qdot, i, link_com(model, pose, i));
  return p;
}

inline Vec2 linear_momentum(const CharacterModel& model, const SimState& s) {
  return linear_momentum(model, forward_kinematics(model, s.q, &s.qdot),
                         s.qdot);
}

// ---------------------------------------------------------------------------
// Integration

namespace detail {

inline bool all_finite(const VecX& v) { return v.allFinite(); }

struct ActiveContact {
  PointJacobian jac;
  Vec2 velocity;
  double penetration = 0.0;
  bool normal = true;  // normal spring-damper active
  bool stick = true;   // tangential handled implicitly
  double slip_force = 0.0;  // explicit tangential force when slipping
  Vec2 force = Vec2::Zero();
};

}  // namespace detail

// PD servo evaluated inside the integrator: the torque uses the end-of-step
// joint position and velocity, which keeps stiff gains stable at large dt.
// A joint whose start-of-step torque exceeds the limit gets the clamped
// explicit torque instead.
struct PdServo {
  VecX kp, kd, target;
};

namespace detail {

inline SimState step_impl(const CharacterModel& model, const SimState& state,
                          const VecX& torques, const PdServo* servo,
                          std::span<const ResidualForce> residual_forces,
                          double dt, const SimConfig& cfg) {
  const int n = model.num_dofs();
  const int nj = model.num_joints();
  if (!(dt > 0.0)) throw ValidationError("dt must be positive");
  if (state.q.size() != n || state.qdot.size() != n)
    throw DimensionError("state length must be 3 + joint count");
  if (torques.size() != nj)
    throw DimensionError("torque vector length must equal joint count");
  if (state.contact.size() != model.foot_geoms.size())
    throw DimensionError("contact flags must match foot geoms");
  if (!detail::all_finite(state.q) || !detail::all_finite(state.qdot))
    throw IntegrationError("non-finite state");
  if (!detail::all_finite(torques)) throw IntegrationError("non-finite torque");

  const Pose pose = forward_kinematics(model, state.q, &state.qdot);
  const DofVec qd = state.qdot;
  const Vec2 gravity(0.0, -cfg.gravity);

  DofMat a_base = mass_matrix(model, pose, cfg);
  DofVec q_base = DofVec::Zero(n);
  Vec2 external = Vec2::Zero();
  Vec2 momentum = Vec2::Zero();

  for (int i = 0; i < model.num_links(); ++i) {
    const Link& l = model.links[i];
    const Vec2 c = link_com(model, pose, i);
    const PointJacobian jc = point_jacobian(model, pose, i, c);
    const Vec2 bias = point_bias_acceleration(model, pose, i, c);
    q_base.noalias() += l.mass * jc.transpose() * (gravity - bias);
    external += l.mass * gravity;
    momentum += l.mass * (jc * qd);
  }
  q_base.tail(nj) += torques;

  if (servo) {
    const VecX gears = motor_gears(model);
    for (int j = 0; j < nj; ++j) {
      const int k = kRootDofs + j;
      const double kp = servo->kp[j], kd = servo->kd[j];
      const double err = servo->target[j] - state.q[k];
      const double raw = kp * err - kd * qd[k];
      if (std::abs(raw) > cfg.torque_limit) {
        q_base[k] += gears[j] * std::clamp(raw, -cfg.torque_limit, cfg.torque_limit);
        continue;
      }
      a_base(k, k) += gears[j] * dt * (kp * dt + kd);
      q_base[k] += gears[j] * (kp * err - (kp * dt + kd) * qd[k]);
    }
  }

  // Joint limits: implicit spring-damper past each bound.
  for (int j = 0; j < nj; ++j) {
    const Joint& jt = model.joints[j];
    const int k = kRootDofs + j;
    const double qj = state.q[k];
    double excess = 0.0;
    if (qj > jt.upper) excess = qj - jt.upper;
    if (qj < jt.lower) excess = qj - jt.lower;
    if (excess == 0.0) continue;
    const double kl = cfg.joint_limit_stiffness, cl = cfg.joint_limit_damping;
    a_base(k, k) += dt * (kl * dt + cl);
    q_base[k] += -kl * excess - (kl * dt + cl) * qd[k];
  }

  // Residual forces, gated by contact.
  for (const ResidualForce& f : residual_forces) {
    if (f.geom < 0 || f.geom >= static_cast<int>(model.foot_geoms.size()))
      throw ValidationError("residual force references a non-foot geom");
    if (std::abs(f.direction.norm() - 1.0) > 1e-9)
      throw ValidationError("residual force direction must be a unit vector");
    if (!std::isfinite(f.magnitude) || !f.contact_point.allFinite())
      throw IntegrationError("non-finite residual force");
    if (!state.contact[f.geom] || f.magnitude <= 0.0) continue;
    const int link = model.foot_geoms[f.geom];
    const double mag = std::min(f.magnitude, cfg.residual_force_cap);
    const Vec2 p = pose.to_world(link, f.contact_point);
    const Vec2 force = mag * f.direction;
    q_base.noalias() += point_jacobian(model, pose, link, p).transpose() * force;
    external += force;
  }

  // Ground contacts.
  const auto points = contact_points(model);
  std::vector<detail::ActiveContact> contacts;
  for (const auto& cp : points) {
    const Vec2 p = pose.to_world(cp.link, cp.local);
    const double pen = cp.radius - p.y();
    if (pen <= 0.0) continue;
    detail::ActiveContact c;
    c.jac = point_jacobian(model, pose, cp.link, p);
    c.velocity = c.jac * qd;
    c.penetration = pen;
    contacts.push_back(std::move(c));
  }

  const double kn = cfg.contact_stiffness;
  const double cn = cfg.contact_damping + dt * kn;  // implicit spring + damper
  const double ct = cfg.tangential_damping;
  const double mu = cfg.friction_coefficient;

  DofVec friction = DofVec::Zero(nj);
  auto assemble = [&](DofMat& a, DofVec& rhs) {
    a = a_base;
    rhs = q_base;
    rhs.tail(nj) += friction;
    for (const auto& c : contacts) {
      if (c.normal) {
        const auto jy = c.jac.row(1);
        a.noalias() += dt * cn * jy.transpose() * jy;
        rhs.noalias() += jy.transpose() * (kn * c.penetration - cn * c.velocity.y());
      }
      const auto jx = c.jac.row(0);
      if (c.stick) {
        a.noalias() += dt * ct * jx.transpose() * jx;
        rhs.noalias() += jx.transpose() * (-ct * c.velocity.x());
      } else {
        rhs.noalias() += jx.transpose() * c.slip_force;
      }
    }
    if (model.pinned_root) {
      for (int k = 0; k < 2; ++k) {
        a.row(k).setZero();
        a.col(k).setZero();
        a(k, k) = 1.0;
        rhs[k] = 0.0;
      }
    }
  };

  DofMat a;
  DofVec rhs;
  assemble(a, rhs);
  Eigen::LLT<DofMat> llt(a);
  if (llt.info() != Eigen::Success)
    throw IntegrationError("mass matrix not positive definite");
  DofVec qdd = llt.solve(rhs);

  // Contact modes from the first solve: release pulling contacts and switch
  // sticking contacts that exceed the friction cone to sliding.
  bool resolve = false;
  for (auto& c : contacts) {
    const Vec2 v = c.velocity + dt * (c.jac * qdd);
    const double fn = kn * c.penetration - cn * v.y();
    if (fn <= 0.0) {
      c.normal = false;
      c.stick = false;
      c.slip_force = 0.0;
      resolve = true;
      continue;
    }
    const double ft = -ct * v.x();
    if (std::abs(ft) > mu * fn) {
      c.stick = false;
      c.slip_force = -mu * fn * (v.x() > 0 ? 1.0 : -1.0);
      resolve = true;
    }
  }

  // Joint dry friction: oppose the predicted velocity without reversing it.
  for (int j = 0; j < nj; ++j) {
    const double f = model.joints[j].frictionloss;
    if (f <= 0.0) continue;
    const int k = kRootDofs + j;
    DofVec e = DofVec::Zero(n);
    e[k] = 1.0;
    const double mobility = llt.solve(e)[k];
    const double w_pred = qd[k] + dt * qdd[k];
    const double stop = -w_pred / (dt * mobility);
    if (std::abs(w_pred) < cfg.stiction_velocity) {
      friction[j] = std::clamp(stop, -f, f);  // hold inside the stiction band
    } else {
      const double coulomb = w_pred > 0.0 ? -f : f;
      friction[j] = std::abs(coulomb) < std::abs(stop) ? coulomb : stop;
    }
    resolve = true;
  }

  if (resolve) {
    assemble(a, rhs);
    llt.compute(a);
    if (llt.info() != Eigen::Success)
      throw IntegrationError("mass matrix not positive definite");
    qdd = llt.solve(rhs);
  }

  for (auto& c : contacts) {
    const Vec2 v = c.velocity + dt * (c.jac * qdd);
    if (c.normal) c.force.y() = kn * c.penetration - cn * v.y();
    c.force.x() = c.stick ? -ct * v.x() : c.slip_force;
    if (c.normal || !c.stick) external += c.force;
  }

  SimState next;
  next.time = state.time + dt;
  next.qdot = state.qdot + dt * VecX(qdd);
  if (model.pinned_root) next.qdot.head(2).setZero();
  next.q = state.q + dt * next.qdot;

  // Hard bound on joint angles just past the penalty region.
  for (int j = 0; j < nj; ++j) {
    const Joint& jt = model.joints[j];
    const int k = kRootDofs + j;
    const double lo = jt.lower - cfg.joint_limit_tolerance;
    const double hi = jt.upper + cfg.joint_limit_tolerance;
    if (next.q[k] > hi) {
      next.q[k] = hi;
      next.qdot[k] = std::min(next.qdot[k], 0.0);
    } else if (next.q[k] < lo) {
      next.q[k] = lo;
      next.qdot[k] = std::max(next.qdot[k], 0.0);
    }
  }

  Pose next_pose = forward_kinematics(model, next.q, &next.qdot);
  if (!model.pinned_root) {
    // Project the root velocity so linear momentum follows the impulse of
    // the external forces exactly.
    const Vec2 target = momentum + dt * external;
    const Vec2 actual = linear_momentum(model, next_pose, next.qdot);
    next.qdot.head(2) += (target - actual) / model.total_mass();
  }

  if (!detail::all_finite(next.q) || !detail::all_finite(next.qdot))
    throw IntegrationError("simulation diverged");
  next.contact = contact_flags(model, next_pose, cfg);
  return next;
}

}  // namespace detail

// Advances the state by dt. Residual forces act only on foot geoms whose
// contact flag is set in the incoming state; the others are dropped.
inline SimState step(const CharacterModel& model, const SimState& state,
                     const VecX& torques,
                     std::span<const ResidualForce> residual_forces, double dt,
                     const SimConfig& cfg = {}) {
  return detail::step_impl(model, state, torques, nullptr, residual_forces, dt, cfg);
}

// Same, with joint torques from an implicit PD servo.
inline SimState step(const CharacterModel& model, const SimState& state,
                     const PdServo& servo,
                     std::span<const ResidualForce> residual_forces, double dt,
                     const SimConfig& cfg = {}) {
  const int nj = model.num_joints();
  if (servo.kp.size() != nj || servo.kd.size() != nj || servo.target.size() != nj)
    throw DimensionError("PD servo vectors must have joint-count length");
  if (!servo.kp.allFinite() || !servo.kd.allFinite() || !servo.target.allFinite())
    throw IntegrationError("non-finite PD servo input");
  return detail::step_impl(model, state, VecX::Zero(nj), &servo, residual_forces, dt, cfg);
}

inline SimState step(const CharacterModel& model, const SimState& state,
                     const VecX& torques, double dt, const SimConfig& cfg = {}) {
  return step(model, state, torques, std::span<const ResidualForce>{}, dt, cfg);
}

}  // namespace morphsim
