#pragma once

// The searchable character design vector and its mapping onto a concrete
// CharacterModel.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "morphsim/errors.hpp"
#include "morphsim/physics.hpp"

namespace morphsim {

// Link and joint indices of the default planar character.
namespace body {
inline constexpr int kTorso = 0;
inline constexpr int kThighL = 1, kShinL = 2, kFootL = 3;
inline constexpr int kThighR = 4, kShinR = 5, kFootR = 6;
inline constexpr int kArmL = 7, kArmR = 8;

inline constexpr int kHipL = 0, kKneeL = 1, kAnkleL = 2;
inline constexpr int kHipR = 3, kKneeR = 4, kAnkleR = 5;
inline constexpr int kShoulderL = 6, kShoulderR = 7;
}  // namespace body

// Nine links, eight revolute joints: torso (head folded in), two legs of
// thigh/shin/foot and two single-link arms. Roughly 1.7 m tall and 61 kg.
// Angles are counter-clockwise with x forward and y up, so hip flexion is
// positive and knee flexion negative.
inline CharacterModel default_character() {
  constexpr double kDown = -std::numbers::pi / 2.0;
  constexpr double kUp = std::numbers::pi / 2.0;
  CharacterModel m;
  auto link = [&](std::string name, double len, double mass, double hw,
                  double rest, double heel = 0.0) {
    m.links.push_back(
        {std::move(name), len, mass, hw, box_inertia(mass, len, hw), rest, heel});
  };
  link("torso", 0.75, 30.0, 0.12, kUp);
  link("thigh_l", 0.45, 7.0, 0.07, kDown);
  link("shin_l", 0.45, 4.0, 0.05, kDown);
  link("foot_l", 0.24, 1.5, 0.04, 0.0, 0.25);
  link("thigh_r", 0.45, 7.0, 0.07, kDown);
  link("shin_r", 0.45, 4.0, 0.05, kDown);
  link("foot_r", 0.24, 1.5, 0.04, 0.0, 0.25);
  link("arm_l", 0.60, 3.0, 0.04, kDown);
  link("arm_r", 0.60, 3.0, 0.04, kDown);

  auto joint = [&](std::string name, int parent, int child, double attach,
                   double lo, double hi) {
    m.joints.push_back({std::move(name), parent, child, attach, lo, hi, 0.5, 1.0});
  };
  using namespace body;
  joint("hip_l", kTorso, kThighL, 0.0, -0.8, 2.2);
  joint("knee_l", kThighL, kShinL, 1.0, -2.6, 0.05);
  joint("ankle_l", kShinL, kFootL, 1.0, -0.9, 0.7);
  joint("hip_r", kTorso, kThighR, 0.0, -0.8, 2.2);
  joint("knee_r", kThighR, kShinR, 1.0, -2.6, 0.05);
  joint("ankle_r", kShinR, kFootR, 1.0, -0.9, 0.7);
  joint("shoulder_l", kTorso, kArmL, 0.7, -1.6, 3.1);
  joint("shoulder_r", kTorso, kArmR, 0.7, -1.6, 3.1);
  m.foot_geoms = {kFootL, kFootR};
  return m;
}

// Bounds of the design search space.
struct DesignBox {
  double scale_min = 0.5, scale_max = 2.0;
  double friction_min = 0.0, friction_max = 5.0;
  double gear_min = 0.2, gear_max = 5.0;
};

struct CharacterDesign {
  double global_scale = 1.0;  // overall size
  double mass_scale = 1.0;    // overall weight
  std::vector<double> bone_length_scales;  // per link
  std::vector<double> geom_size_scales;    // per link
  std::vector<double> frictionloss;        // per joint, N m
  std::vector<double> motor_gears;         // per joint

  bool operator==(const CharacterDesign&) const = default;

  std::size_t dimension() const {
    return 2 + bone_length_scales.size() + geom_size_scales.size() +
           frictionloss.size() + motor_gears.size();
  }
};

// Design that reproduces `base` exactly.
inline CharacterDesign identity_design(const CharacterModel& base) {
  CharacterDesign d;
  d.bone_length_scales.assign(base.num_links(), 1.0);
  d.geom_size_scales.assign(base.num_links(), 1.0);
  for (const auto& j : base.joints) {
    d.frictionloss.push_back(j.frictionloss);
    d.motor_gears.push_back(j.motor_gear);
  }
  return d;
}

// Names of fields outside the box, e.g. "bone_length_scales[3]".
inline std::vector<std::string> box_violations(const CharacterDesign& d,
                                               const DesignBox& box = {}) {
  std::vector<std::string> bad;
  auto check = [&](const std::string& name, double v, double lo, double hi) {
    if (!(v >= lo && v <= hi)) bad.push_back(name);
  };
  check("global_scale", d.global_scale, box.scale_min, box.scale_max);
  check("mass_scale", d.mass_scale, box.scale_min, box.scale_max);
  auto check_all = [&](const std::string& name, const std::vector<double>& v,
                       double lo, double hi) {
    for (std::size_t i = 0; i < v.size(); ++i)
      check(name + "[" + std::to_string(i) + "]", v[i], lo, hi);
  };
  check_all("bone_length_scales", d.bone_length_scales, box.scale_min,
            box.scale_max);
  check_all("geom_size_scales", d.geom_size_scales, box.scale_min,
            box.scale_max);
  check_all("frictionloss", d.frictionloss, box.friction_min, box.friction_max);
  check_all("motor_gears", d.motor_gears, box.gear_min, box.gear_max);
  return bad;
}

inline void check_layout(const CharacterDesign& d, const CharacterModel& base) {
  const auto nl = static_cast<std::size_t>(base.num_links());
  const auto nj = static_cast<std::size_t>(base.num_joints());
  if (d.bone_length_scales.size() != nl || d.geom_size_scales.size() != nl ||
      d.frictionloss.size() != nj || d.motor_gears.size() != nj)
    throw DimensionError("design layout does not match the character topology");
}

// Applies a design to a base character. Lengths scale with
// global_scale * bone_length_scale, half-widths with geom_size_scale, masses
// with mass_scale * geom_size_scale^2, and inertias follow the new geometry.
inline CharacterModel build(const CharacterDesign& design,
                            const CharacterModel& base,
                            const DesignBox& box = {}) {
  check_layout(design, base);
  if (auto bad = box_violations(design, box); !bad.empty()) {
    std::string msg = "design outside its box:";
    for (const auto& b : bad) msg += " " + b;
    throw ValidationError(msg);
  }
  CharacterModel m = base;
  for (int i = 0; i < m.num_links(); ++i) {
    Link& l = m.links[i];
    const double g = design.geom_size_scales[i];
    l.length *= design.global_scale * design.bone_length_scales[i];
    l.halfwidth *= g;
    l.mass *= design.mass_scale * g * g;
    l.inertia = box_inertia(l.mass, l.length, l.halfwidth);
  }
  for (int j = 0; j < m.num_joints(); ++j) {
    m.joints[j].frictionloss = design.frictionloss[j];
    m.joints[j].motor_gear = design.motor_gears[j];
  }
  return m;
}

// Flat layout: [global, mass, bone lengths..., geom sizes..., friction...,
// gears...].
inline VecX encode(const CharacterDesign& d) {
  VecX v(static_cast<Eigen::Index>(d.dimension()));
  Eigen::Index k = 0;
  v[k++] = d.global_scale;
  v[k++] = d.mass_scale;
  for (double x : d.bone_length_scales) v[k++] = x;
  for (double x : d.geom_size_scales) v[k++] = x;
  for (double x : d.frictionloss) v[k++] = x;
  for (double x : d.motor_gears) v[k++] = x;
  return v;
}

inline int design_dimension(int links, int joints) {
  return 2 + 2 * links + 2 * joints;
}
inline int design_dimension(const CharacterModel& base) {
  return design_dimension(base.num_links(), base.num_joints());
}

struct DecodedDesign {
  CharacterDesign design;
  std::vector<std::string> clamped;  // fields that were pulled into the box
};

// Inverse of encode; values outside the box are clamped and reported.
inline DecodedDesign decode(const VecX& v, int links, int joints,
                            const DesignBox& box = {}) {
  if (v.size() != design_dimension(links, joints))
    throw DimensionError("design vector has length " + std::to_string(v.size()) +
                         ", expected " +
                         std::to_string(design_dimension(links, joints)));
  DecodedDesign out;
  Eigen::Index k = 0;
  auto take = [&](const std::string& name, double lo, double hi) {
    const double raw = v[k++];
    const double c = std::clamp(raw, lo, hi);
    if (c != raw || !std::isfinite(raw)) out.clamped.push_back(name);
    return std::isfinite(raw) ? c : lo;
  };
  auto take_n = [&](const std::string& name, int n, double lo, double hi) {
    std::vector<double> xs;
    for (int i = 0; i < n; ++i)
      xs.push_back(take(name + "[" + std::to_string(i) + "]", lo, hi));
    return xs;
  };
  CharacterDesign& d = out.design;
  d.global_scale = take("global_scale", box.scale_min, box.scale_max);
  d.mass_scale = take("mass_scale", box.scale_min, box.scale_max);
  d.bone_length_scales = take_n("bone_length_scales", links, box.scale_min, box.scale_max);
  d.geom_size_scales = take_n("geom_size_scales", links, box.scale_min, box.scale_max);
  d.frictionloss = take_n("frictionloss", joints, box.friction_min, box.friction_max);
  d.motor_gears = take_n("motor_gears", joints, box.gear_min, box.gear_max);
  return out;
}

inline DecodedDesign decode(const VecX& v, const CharacterModel& base,
                            const DesignBox& box = {}) {
  return decode(v, base.num_links(), base.num_joints(), box);
}

// Per-dimension box bounds in the flat layout.
inline std::pair<VecX, VecX> flat_bounds(int links, int joints,
                                         const DesignBox& box = {}) {
  const int n = design_dimension(links, joints);
  VecX lo(n), hi(n);
  const int nscale = 2 + 2 * links;
  lo.head(nscale).setConstant(box.scale_min);
  hi.head(nscale).setConstant(box.scale_max);
  lo.segment(nscale, joints).setConstant(box.friction_min);
  hi.segment(nscale, joints).setConstant(box.friction_max);
  lo.tail(joints).setConstant(box.gear_min);
  hi.tail(joints).setConstant(box.gear_max);
  return {lo, hi};
}

// A subset of the flat design vector exposed to a search, with tied groups.
// Dimensions outside every group stay at the reference design.
struct DesignSpace {
  struct Group {
    std::string name;
    std::vector<int> indices;  // flat design indices sharing one value
  };
  std::vector<Group> groups;

  int dimension() const { return static_cast<int>(groups.size()); }

  // One group per flat dimension.
  static DesignSpace full(const CharacterModel& base) {
    DesignSpace s;
    const int n = design_dimension(base);
    const int nl = base.num_links(), nj = base.num_joints();
    for (int i = 0; i < n; ++i) {
      std::string name;
      if (i == 0) name = "global_scale";
      else if (i == 1) name = "mass_scale";
      else if (i < 2 + nl) name = "bone_length_scales[" + std::to_string(i - 2) + "]";
      else if (i < 2 + 2 * nl) name = "geom_size_scales[" + std::to_string(i - 2 - nl) + "]";
      else if (i < 2 + 2 * nl + nj) name = "frictionloss[" + std::to_string(i - 2 - 2 * nl) + "]";
      else name = "motor_gears[" + std::to_string(i - 2 - 2 * nl - nj) + "]";
      s.groups.push_back({name, {i}});
    }
    return s;
  }

  // Thigh and shin length scales of both legs tied into one value.
  static DesignSpace leg_length() {
    using namespace body;
    DesignSpace s;
    s.groups.push_back(
        {"leg_length", {2 + kThighL, 2 + kShinL, 2 + kThighR, 2 + kShinR}});
    return s;
  }

  // Global scalars plus tied per-joint gears and frictionloss.
  static DesignSpace compact(const CharacterModel& base) {
    DesignSpace s = leg_length();
    const int nl = base.num_links(), nj = base.num_joints();
    s.groups.push_back({"global_scale", {0}});
    s.groups.push_back({"mass_scale", {1}});
    Group gears{"motor_gears", {}}, fric{"frictionloss", {}};
    for (int j = 0; j < nj; ++j) {
      fric.indices.push_back(2 + 2 * nl + j);
      gears.indices.push_back(2 + 2 * nl + nj + j);
    }
    s.groups.push_back(fric);
    s.groups.push_back(gears);
    return s;
  }

  // Reads each group's value from a flat design (first index of the group).
  VecX project(const VecX& flat) const {
    VecX x(dimension());
    for (int g = 0; g < dimension(); ++g) x[g] = flat[groups[g].indices.front()];
    return x;
  }

  // Writes group values into a copy of the reference flat design.
  VecX expand(const VecX& x, const VecX& reference_flat) const {
    if (x.size() != dimension())
      throw DimensionError("design-space vector has wrong length");
    VecX flat = reference_flat;
    for (int g = 0; g < dimension(); ++g)
      for (int i : groups[g].indices) {
        if (i < 0 || i >= flat.size())
          throw DimensionError("design-space index out of range");
        flat[i] = x[g];
      }
    return flat;
  }
};

}  // namespace morphsim
