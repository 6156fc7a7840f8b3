#pragma once

// Versioned JSON files for characters, designs, clips, controller
// checkpoints and run configurations. Every document carries "format" and
// "version"; readers reject anything else. Field layout: docs/formats.md.

#include <filesystem>
#include <initializer_list>
#include <optional>
#include <tuple>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "morphsim/character.hpp"
#include "morphsim/design_opt.hpp"
#include "morphsim/imitation.hpp"
#include "morphsim/motion.hpp"
#include "morphsim/train.hpp"

namespace morphsim {

using json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

namespace io {

inline json header(const std::string& format) {
  return {{"format", format}, {"version", kFormatVersion}};
}

inline void check_header(const json& j, const std::string& format) {
  if (!j.is_object() || !j.contains("format") || j["format"] != format)
    throw FormatError("expected a '" + format + "' document");
  if (!j.contains("version") || j["version"] != kFormatVersion)
    throw FormatError("unsupported " + format + " version");
}

// Reads field `key` of `j`, naming it in the error when missing or mistyped.
template <class T>
T get(const json& j, const std::string& key) {
  if (!j.contains(key)) throw FormatError("missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError("field '" + key + "' has the wrong type");
  }
}

template <class T>
T get_or(const json& j, const std::string& key, T fallback) {
  return j.contains(key) ? get<T>(j, key) : fallback;
}

inline json vec(const VecX& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline VecX to_vec(const std::vector<double>& v) {
  return Eigen::Map<const VecX>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Float parameters go through double, which represents them exactly.
template <class S>
json params(const VecT<S>& p) {
  std::vector<double> out(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) out[i] = static_cast<double>(p[i]);
  return out;
}

template <class S>
VecT<S> to_params(const std::vector<double>& v) {
  VecT<S> p(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) p[i] = static_cast<S>(v[i]);
  return p;
}

template <class S>
json mlp(const Mlp<S>& m) {
  return {{"sizes", m.sizes()}, {"params", params(m.params())}};
}

template <class S>
Mlp<S> to_mlp(const json& j) {
  Mlp<S> m(get<std::vector<int>>(j, "sizes"));
  const auto p = get<std::vector<double>>(j, "params");
  if (static_cast<Eigen::Index>(p.size()) != m.num_params())
    throw FormatError("network parameter count does not match its sizes");
  m.params() = to_params<S>(p);
  return m;
}

}  // namespace io

// ---------------------------------------------------------------------------
// Documents

inline json to_json(const CharacterModel& m) {
  json j = io::header("morphsim.character");
  j["links"] = json::array();
  for (const auto& l : m.links)
    j["links"].push_back({{"name", l.name},
                          {"length", l.length},
                          {"mass", l.mass},
                          {"halfwidth", l.halfwidth},
                          {"rest_angle", l.rest_angle},
                          {"heel", l.heel}});
  j["joints"] = json::array();
  for (const auto& jt : m.joints)
    j["joints"].push_back({{"name", jt.name},
                           {"parent", jt.parent},
                           {"child", jt.child},
                           {"attach", jt.attach},
                           {"lower", jt.lower},
                           {"upper", jt.upper},
                           {"frictionloss", jt.frictionloss},
                           {"motor_gear", jt.motor_gear}});
  j["foot_geoms"] = m.foot_geoms;
  j["pinned_root"] = m.pinned_root;
  return j;
}

inline CharacterModel character_from_json(const json& j) {
  io::check_header(j, "morphsim.character");
  CharacterModel m;
  for (const auto& l : io::get<json>(j, "links")) {
    Link k;
    k.name = io::get<std::string>(l, "name");
    k.length = io::get<double>(l, "length");
    k.mass = io::get<double>(l, "mass");
    k.halfwidth = io::get<double>(l, "halfwidth");
    k.rest_angle = io::get<double>(l, "rest_angle");
    k.heel = io::get_or<double>(l, "heel", 0.0);
    k.inertia = box_inertia(k.mass, k.length, k.halfwidth);
    m.links.push_back(std::move(k));
  }
  for (const auto& jt : io::get<json>(j, "joints")) {
    Joint k;
    k.name = io::get<std::string>(jt, "name");
    k.parent = io::get<int>(jt, "parent");
    k.child = io::get<int>(jt, "child");
    k.attach = io::get<double>(jt, "attach");
    k.lower = io::get<double>(jt, "lower");
    k.upper = io::get<double>(jt, "upper");
    k.frictionloss = io::get<double>(jt, "frictionloss");
    k.motor_gear = io::get<double>(jt, "motor_gear");
    m.joints.push_back(std::move(k));
  }
  m.foot_geoms = io::get<std::vector<int>>(j, "foot_geoms");
  m.pinned_root = io::get_or<bool>(j, "pinned_root", false);
  m.validate();
  return m;
}

inline json to_json(const CharacterDesign& d) {
  json j = io::header("morphsim.design");
  j["global_scale"] = d.global_scale;
  j["mass_scale"] = d.mass_scale;
  j["bone_length_scales"] = d.bone_length_scales;
  j["geom_size_scales"] = d.geom_size_scales;
  j["frictionloss"] = d.frictionloss;
  j["motor_gears"] = d.motor_gears;
  return j;
}

inline CharacterDesign design_from_json(const json& j) {
  io::check_header(j, "morphsim.design");
  CharacterDesign d;
  d.global_scale = io::get<double>(j, "global_scale");
  d.mass_scale = io::get<double>(j, "mass_scale");
  d.bone_length_scales = io::get<std::vector<double>>(j, "bone_length_scales");
  d.geom_size_scales = io::get<std::vector<double>>(j, "geom_size_scales");
  d.frictionloss = io::get<std::vector<double>>(j, "frictionloss");
  d.motor_gears = io::get<std::vector<double>>(j, "motor_gears");
  return d;
}

inline json to_json(const MotionClip& c) {
  json j = io::header("morphsim.clip");
  j["id"] = c.id;
  j["category"] = c.category;
  j["frame_rate"] = c.frame_rate;
  j["frames"] = json::array();
  for (const auto& q : c.frames) j["frames"].push_back(io::vec(q));
  j["keypoints"] = json::array();
  for (const auto& k : c.keypoints) {
    json f = json::array();
    for (Eigen::Index i = 0; i < k.cols(); ++i) f.push_back({k(0, i), k(1, i)});
    j["keypoints"].push_back(std::move(f));
  }
  return j;
}

inline MotionClip clip_from_json(const json& j) {
  io::check_header(j, "morphsim.clip");
  MotionClip c;
  c.id = io::get<std::string>(j, "id");
  c.category = io::get_or<std::string>(j, "category", "");
  c.frame_rate = io::get<double>(j, "frame_rate");
  for (const auto& q : io::get<json>(j, "frames"))
    c.frames.push_back(io::to_vec(q.get<std::vector<double>>()));
  for (const auto& f : io::get<json>(j, "keypoints")) {
    Eigen::Matrix2Xd k(2, static_cast<Eigen::Index>(f.size()));
    for (std::size_t i = 0; i < f.size(); ++i) {
      const auto p = f[i].get<std::vector<double>>();
      if (p.size() != 2) throw FormatError("keypoints must be [x, y] pairs");
      k(0, i) = p[0];
      k(1, i) = p[1];
    }
    c.keypoints.push_back(std::move(k));
  }
  c.validate();
  return c;
}

inline json to_json(const Controller& c) {
  json j = io::header("morphsim.checkpoint");
  j["obs_dim"] = c.obs_dim();
  j["act_dim"] = c.act_dim();
  j["normalizer"] = {{"mean", io::vec(c.norm.mean)},
                     {"var", io::vec(c.norm.var)},
                     {"count", c.norm.count},
                     {"clip", c.norm.clip},
                     {"min_std", c.norm.min_std},
                     {"frozen", c.norm.frozen}};
  j["policy"] = {{"net", io::mlp(c.policy.mean_net)}, {"log_std", io::vec(c.policy.log_std)}};
  j["value"] = {{"net", io::mlp(c.value.net)}, {"scale", c.value.scale}};
  return j;
}

inline Controller controller_from_json(const json& j) {
  io::check_header(j, "morphsim.checkpoint");
  Controller c;
  const json& n = io::get<json>(j, "normalizer");
  c.norm.mean = io::to_vec(io::get<std::vector<double>>(n, "mean"));
  c.norm.var = io::to_vec(io::get<std::vector<double>>(n, "var"));
  c.norm.count = io::get<double>(n, "count");
  c.norm.clip = io::get<double>(n, "clip");
  c.norm.min_std = io::get<double>(n, "min_std");
  c.norm.frozen = io::get<bool>(n, "frozen");
  const json& p = io::get<json>(j, "policy");
  c.policy.mean_net = io::to_mlp<Real>(io::get<json>(p, "net"));
  c.policy.log_std = io::to_vec(io::get<std::vector<double>>(p, "log_std"));
  const json& v = io::get<json>(j, "value");
  c.value.net = io::to_mlp<Real>(io::get<json>(v, "net"));
  c.value.scale = io::get<double>(v, "scale");
  if (c.norm.var.size() != c.norm.mean.size() ||
      c.policy.mean_net.input_dim() != c.obs_dim() ||
      c.value.net.input_dim() != c.obs_dim() || c.value.net.output_dim() != 1 ||
      c.policy.log_std.size() != c.act_dim() || io::get<int>(j, "obs_dim") != c.obs_dim() ||
      io::get<int>(j, "act_dim") != c.act_dim())
    throw FormatError("checkpoint dimensions are inconsistent");
  return c;
}

// ---------------------------------------------------------------------------
// Files

inline std::string dump(const json& j) { return j.dump(1) + "\n"; }

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("missing file " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + " is not valid JSON: " + e.what());
  }
}

inline void save_json(const std::filesystem::path& path, const json& j) {
  write_text(path, dump(j));
}

inline Controller load_controller(const std::filesystem::path& p) {
  return controller_from_json(read_json(p));
}
inline CharacterDesign load_design(const std::filesystem::path& p) {
  return design_from_json(read_json(p));
}
inline CharacterModel load_character(const std::filesystem::path& p) {
  return character_from_json(read_json(p));
}
inline MotionClip load_clip(const std::filesystem::path& p) { return clip_from_json(read_json(p)); }

// Every *.json clip in a directory, sorted by file name.
inline std::vector<MotionClip> load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("missing corpus directory " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json" &&
        e.path().filename() != "manifest.json")
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<MotionClip> clips;
  for (const auto& f : files) clips.push_back(load_clip(f));
  return clips;
}

// ---------------------------------------------------------------------------
// Run configuration. Objects may be partial: present keys override the
// current values, unknown keys are rejected.

namespace io {

template <class T>
void set_if(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = get<T>(j, key);
}

inline void only_keys(const json& j, std::initializer_list<const char*> keys,
                      const std::string& where) {
  if (!j.is_object()) throw FormatError(where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw FormatError("unknown key '" + k + "' in " + where);
  }
}

}  // namespace io

inline json to_json(const SimConfig& c) {
  return {{"gravity", c.gravity},
          {"contact_stiffness", c.contact_stiffness},
          {"contact_damping", c.contact_damping},
          {"friction_coefficient", c.friction_coefficient},
          {"tangential_damping", c.tangential_damping},
          {"contact_tolerance", c.contact_tolerance},
          {"torque_limit", c.torque_limit},
          {"residual_force_cap", c.residual_force_cap},
          {"joint_limit_stiffness", c.joint_limit_stiffness},
          {"joint_limit_damping", c.joint_limit_damping},
          {"joint_limit_tolerance", c.joint_limit_tolerance},
          {"stiction_velocity", c.stiction_velocity},
          {"armature", c.armature},
          {"sim_rate", c.sim_rate},
          {"substeps", c.substeps}};
}

inline void merge_json(SimConfig& c, const json& j) {
  io::only_keys(j, {"gravity", "contact_stiffness", "contact_damping", "friction_coefficient",
                    "tangential_damping", "contact_tolerance", "torque_limit",
                    "residual_force_cap", "joint_limit_stiffness", "joint_limit_damping",
                    "joint_limit_tolerance", "stiction_velocity", "armature", "sim_rate",
                    "substeps"},
                "sim");
  io::set_if(j, "gravity", c.gravity);
  io::set_if(j, "contact_stiffness", c.contact_stiffness);
  io::set_if(j, "contact_damping", c.contact_damping);
  io::set_if(j, "friction_coefficient", c.friction_coefficient);
  io::set_if(j, "tangential_damping", c.tangential_damping);
  io::set_if(j, "contact_tolerance", c.contact_tolerance);
  io::set_if(j, "torque_limit", c.torque_limit);
  io::set_if(j, "residual_force_cap", c.residual_force_cap);
  io::set_if(j, "joint_limit_stiffness", c.joint_limit_stiffness);
  io::set_if(j, "joint_limit_damping", c.joint_limit_damping);
  io::set_if(j, "joint_limit_tolerance", c.joint_limit_tolerance);
  io::set_if(j, "stiction_velocity", c.stiction_velocity);
  io::set_if(j, "armature", c.armature);
  io::set_if(j, "sim_rate", c.sim_rate);
  io::set_if(j, "substeps", c.substeps);
}

inline json to_json(const ImitationConfig& c) {
  return {{"sim", to_json(c.sim)},
          {"reward_weights",
           {{"w_p", c.weights.w_p}, {"w_v", c.weights.w_v}, {"w_e", c.weights.w_e},
            {"w_vf", c.weights.w_vf}}},
          {"termination_threshold", c.termination_threshold},
          {"horizon", c.horizon},
          {"forces_per_foot", c.forces_per_foot},
          {"gain_log_range", c.gain_log_range},
          {"force_angle_range", c.force_angle_range},
          {"kp_base", c.kp_base},
          {"kd_base", c.kd_base}};
}

inline void merge_json(ImitationConfig& c, const json& j) {
  io::only_keys(j, {"sim", "reward_weights", "termination_threshold", "horizon",
                    "forces_per_foot", "gain_log_range", "force_angle_range", "kp_base",
                    "kd_base"},
                "imitation");
  if (j.contains("sim")) merge_json(c.sim, j["sim"]);
  if (j.contains("reward_weights")) {
    const json& w = j["reward_weights"];
    io::only_keys(w, {"w_p", "w_v", "w_e", "w_vf"}, "reward_weights");
    io::set_if(w, "w_p", c.weights.w_p);
    io::set_if(w, "w_v", c.weights.w_v);
    io::set_if(w, "w_e", c.weights.w_e);
    io::set_if(w, "w_vf", c.weights.w_vf);
  }
  io::set_if(j, "termination_threshold", c.termination_threshold);
  io::set_if(j, "horizon", c.horizon);
  io::set_if(j, "forces_per_foot", c.forces_per_foot);
  io::set_if(j, "gain_log_range", c.gain_log_range);
  io::set_if(j, "force_angle_range", c.force_angle_range);
  io::set_if(j, "kp_base", c.kp_base);
  io::set_if(j, "kd_base", c.kd_base);
}

inline json to_json(const PpoConfig& c) {
  return {{"clip", c.clip},         {"gamma", c.gamma},
          {"lambda", c.lambda},     {"lr", c.lr},
          {"epochs", c.epochs},     {"minibatch", c.minibatch},
          {"batch_steps", c.batch_steps}, {"max_grad_norm", c.max_grad_norm},
          {"value_coef", c.value_coef},   {"entropy_coef", c.entropy_coef},
          {"target_kl", c.target_kl}};
}

inline void merge_json(PpoConfig& c, const json& j) {
  io::only_keys(j, {"clip", "gamma", "lambda", "lr", "epochs", "minibatch", "batch_steps",
                    "max_grad_norm", "value_coef", "entropy_coef", "target_kl"},
                "ppo");
  io::set_if(j, "clip", c.clip);
  io::set_if(j, "gamma", c.gamma);
  io::set_if(j, "lambda", c.lambda);
  io::set_if(j, "lr", c.lr);
  io::set_if(j, "epochs", c.epochs);
  io::set_if(j, "minibatch", c.minibatch);
  io::set_if(j, "batch_steps", c.batch_steps);
  io::set_if(j, "max_grad_norm", c.max_grad_norm);
  io::set_if(j, "value_coef", c.value_coef);
  io::set_if(j, "entropy_coef", c.entropy_coef);
  io::set_if(j, "target_kl", c.target_kl);
}

namespace io {

inline json range(std::pair<double, double> r) { return {r.first, r.second}; }

inline std::pair<double, double> to_range(const json& j, const char* key) {
  const auto v = get<std::vector<double>>(j, key);
  if (v.size() != 2 || !(v[0] <= v[1])) throw FormatError(std::string(key) + " must be [lo, hi]");
  return {v[0], v[1]};
}

}  // namespace io

inline json to_json(const TrainConfig& c) {
  const DesignRandomization& r = c.randomization;
  return {{"ppo", to_json(c.ppo)},
          {"policy_hidden", c.policy_hidden},
          {"value_hidden", c.value_hidden},
          {"log_std", c.log_std},
          {"iterations", c.iterations},
          {"curriculum_temperature", c.curriculum_temperature},
          {"randomize_designs", c.randomize_designs},
          {"randomization",
           {{"p_identity", r.p_identity},
            {"p_matched_performer", r.p_matched_performer},
            {"p_random_performer", r.p_random_performer},
            {"leg_length", io::range(r.leg_length)},
            {"global_scale", io::range(r.global_scale)},
            {"mass_scale", io::range(r.mass_scale)},
            {"gear", io::range(r.gear)},
            {"friction", io::range(r.friction)}}}};
}

inline void merge_json(TrainConfig& c, const json& j) {
  io::only_keys(j, {"ppo", "policy_hidden", "value_hidden", "log_std", "iterations",
                    "curriculum_temperature", "randomize_designs", "randomization"},
                "train");
  if (j.contains("ppo")) merge_json(c.ppo, j["ppo"]);
  io::set_if(j, "policy_hidden", c.policy_hidden);
  io::set_if(j, "value_hidden", c.value_hidden);
  io::set_if(j, "log_std", c.log_std);
  io::set_if(j, "iterations", c.iterations);
  io::set_if(j, "curriculum_temperature", c.curriculum_temperature);
  io::set_if(j, "randomize_designs", c.randomize_designs);
  if (j.contains("randomization")) {
    const json& r = j["randomization"];
    io::only_keys(r, {"p_identity", "p_matched_performer", "p_random_performer", "leg_length",
                      "global_scale", "mass_scale", "gear", "friction"},
                  "randomization");
    DesignRandomization& d = c.randomization;
    io::set_if(r, "p_identity", d.p_identity);
    io::set_if(r, "p_matched_performer", d.p_matched_performer);
    io::set_if(r, "p_random_performer", d.p_random_performer);
    if (r.contains("leg_length")) d.leg_length = io::to_range(r, "leg_length");
    if (r.contains("global_scale")) d.global_scale = io::to_range(r, "global_scale");
    if (r.contains("mass_scale")) d.mass_scale = io::to_range(r, "mass_scale");
    if (r.contains("gear")) d.gear = io::to_range(r, "gear");
    if (r.contains("friction")) d.friction = io::to_range(r, "friction");
  }
}

inline DesignSpace design_space_by_name(const std::string& name, const CharacterModel& base) {
  if (name == "leg_length") return DesignSpace::leg_length();
  if (name == "compact") return DesignSpace::compact(base);
  if (name == "full") return DesignSpace::full(base);
  throw FormatError("unknown design space '" + name + "'");
}

// The design space is stored by name; see design_space_by_name.
inline json to_json(const DesignOptConfig& c, const std::string& space_name) {
  return {{"space", space_name},
          {"box",
           {{"scale", {c.box.scale_min, c.box.scale_max}},
            {"friction", {c.box.friction_min, c.box.friction_max}},
            {"gear", {c.box.gear_min, c.box.gear_max}}}},
          {"policy_hidden", c.policy_hidden},
          {"value_hidden", c.value_hidden},
          {"log_std", c.log_std},
          {"iterations", c.iterations},
          {"episodes_per_iteration", c.episodes_per_iteration},
          {"epochs", c.epochs},
          {"minibatch", c.minibatch},
          {"lr", c.lr},
          {"clip", c.clip},
          {"gamma", c.gamma},
          {"max_grad_norm", c.max_grad_norm},
          {"eval_every", c.eval_every}};
}

inline void merge_json(DesignOptConfig& c, std::string& space_name, const json& j) {
  io::only_keys(j, {"space", "box", "policy_hidden", "value_hidden", "log_std", "iterations",
                    "episodes_per_iteration", "epochs", "minibatch", "lr", "clip", "gamma",
                    "max_grad_norm", "eval_every"},
                "design_opt");
  io::set_if(j, "space", space_name);
  if (j.contains("box")) {
    const json& b = j["box"];
    io::only_keys(b, {"scale", "friction", "gear"}, "box");
    if (b.contains("scale")) std::tie(c.box.scale_min, c.box.scale_max) = io::to_range(b, "scale");
    if (b.contains("friction"))
      std::tie(c.box.friction_min, c.box.friction_max) = io::to_range(b, "friction");
    if (b.contains("gear")) std::tie(c.box.gear_min, c.box.gear_max) = io::to_range(b, "gear");
  }
  io::set_if(j, "policy_hidden", c.policy_hidden);
  io::set_if(j, "value_hidden", c.value_hidden);
  io::set_if(j, "log_std", c.log_std);
  io::set_if(j, "iterations", c.iterations);
  io::set_if(j, "episodes_per_iteration", c.episodes_per_iteration);
  io::set_if(j, "epochs", c.epochs);
  io::set_if(j, "minibatch", c.minibatch);
  io::set_if(j, "lr", c.lr);
  io::set_if(j, "clip", c.clip);
  io::set_if(j, "gamma", c.gamma);
  io::set_if(j, "max_grad_norm", c.max_grad_norm);
  io::set_if(j, "eval_every", c.eval_every);
}

// Everything a command needs besides its own flags. Paths are strings so an
// unset path is simply empty.
struct RunConfig {
  std::string character;   // base character file; empty = built-in default
  std::string design;      // design file; empty = identity
  std::string corpus;      // directory of clip files
  std::string controller;  // checkpoint file
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  int workers = 1;
  ImitationConfig imitation;
  TrainConfig train;
  DesignOptConfig design_opt;
  std::string design_space = "leg_length";
};

inline json to_json(const RunConfig& c) {
  json j = io::header("morphsim.config");
  j["character"] = c.character;
  j["design"] = c.design;
  j["corpus"] = c.corpus;
  j["controller"] = c.controller;
  j["out"] = c.out;
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  j["workers"] = c.workers;
  j["imitation"] = to_json(c.imitation);
  j["train"] = to_json(c.train);
  j["design_opt"] = to_json(c.design_opt, c.design_space);
  return j;
}

inline void merge_json(RunConfig& c, const json& j) {
  io::check_header(j, "morphsim.config");
  io::only_keys(j, {"format", "version", "character", "design", "corpus", "controller", "out",
                    "seed", "workers", "imitation", "train", "design_opt"},
                "config");
  io::set_if(j, "character", c.character);
  io::set_if(j, "design", c.design);
  io::set_if(j, "corpus", c.corpus);
  io::set_if(j, "controller", c.controller);
  io::set_if(j, "out", c.out);
  if (j.contains("seed") && !j["seed"].is_null()) c.seed = io::get<std::uint64_t>(j, "seed");
  io::set_if(j, "workers", c.workers);
  if (j.contains("imitation")) merge_json(c.imitation, j["imitation"]);
  if (j.contains("train")) merge_json(c.train, j["train"]);
  if (j.contains("design_opt")) merge_json(c.design_opt, c.design_space, j["design_opt"]);
}

}  // namespace morphsim
