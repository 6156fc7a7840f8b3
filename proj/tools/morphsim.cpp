// morphsim command-line tool: corpus generation, controller training, design
// optimization, evaluation and single rollouts.
//
// Settings come from defaults, then an optional --config file, then flags.
// Errors are printed to stderr as one JSON object and exit with status 2.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "morphsim/design_opt.hpp"
#include "morphsim/evaluate.hpp"
#include "morphsim/io.hpp"
#include "morphsim/train.hpp"

namespace fs = std::filesystem;
using namespace morphsim;

namespace {

struct Flags {
  std::string config;
  std::string character, design, corpus, controller, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<int> iterations;
  // gen-corpus
  std::string spec;
  double duration = 3.0;
  // optimize-design / rollout
  std::vector<std::string> clip_ids;
  std::string space;
  std::string clip_id;
  bool quiet = false;
};

// Defaults < config file < flags. The seed falls back to MORPHSIM_SEED.
RunConfig resolve(const Flags& f) {
  RunConfig c;
  if (!f.config.empty()) merge_json(c, read_json(f.config));
  if (!f.character.empty()) c.character = f.character;
  if (!f.design.empty()) c.design = f.design;
  if (!f.corpus.empty()) c.corpus = f.corpus;
  if (!f.controller.empty()) c.controller = f.controller;
  if (!f.out.empty()) c.out = f.out;
  if (f.seed) c.seed = f.seed;
  if (f.workers) c.workers = *f.workers;
  if (f.iterations) c.train.iterations = c.design_opt.iterations = *f.iterations;
  if (!f.space.empty()) c.design_space = f.space;
  if (!c.seed) {
    if (const char* env = std::getenv("MORPHSIM_SEED")) {
      try {
        c.seed = std::stoull(env);
      } catch (const std::exception&) {
        throw ValidationError("MORPHSIM_SEED is not an unsigned integer");
      }
    }
  }
  if (!c.seed) c.seed = 1;
  if (c.workers < 1) throw ValidationError("workers must be at least 1");
  return c;
}

CharacterModel base_character(const RunConfig& c) {
  return c.character.empty() ? default_character() : load_character(c.character);
}

CharacterDesign chosen_design(const RunConfig& c, const CharacterModel& base) {
  if (c.design.empty()) return identity_design(base);
  CharacterDesign d = load_design(c.design);
  check_layout(d, base);
  return d;
}

std::vector<MotionClip> corpus(const RunConfig& c, const std::vector<std::string>& ids = {}) {
  if (c.corpus.empty()) throw ValidationError("no corpus directory given");
  std::vector<MotionClip> clips = load_corpus(c.corpus);
  if (ids.empty()) return clips;
  std::vector<MotionClip> out;
  for (const auto& id : ids) {
    auto it = std::find_if(clips.begin(), clips.end(), [&](const auto& m) { return m.id == id; });
    if (it == clips.end()) throw ValidationError("clip '" + id + "' not in the corpus");
    out.push_back(*it);
  }
  return out;
}

Controller controller(const RunConfig& c) {
  if (c.controller.empty()) throw ValidationError("no controller checkpoint given");
  return load_controller(c.controller);
}

void manifest(const RunConfig& c, const std::string& command,
              const std::vector<std::string>& outputs, json extra = json::object()) {
  json m = io::header("morphsim.manifest");
  m["command"] = command;
  m["seed"] = *c.seed;
  m["workers"] = c.workers;
  m["outputs"] = outputs;
  m["config"] = to_json(c);
  for (auto& [k, v] : extra.items()) m[k] = v;
  save_json(fs::path(c.out) / "manifest.json", m);
}

void write_report(const fs::path& dir, const std::string& stem, const EvalReport& r) {
  write_text(dir / (stem + ".csv"), r.to_csv());
  write_text(dir / (stem + ".txt"), r.to_text());
}

// ---------------------------------------------------------------------------
// Commands

json default_corpus_spec() {
  json spec = io::header("morphsim.corpus_spec");
  spec["clips"] = json::array();
  for (ClipKind k : {ClipKind::kWalk, ClipKind::kHop, ClipKind::kCrawl, ClipKind::kKick,
                     ClipKind::kCartwheelProxy})
    spec["clips"].push_back({{"kind", to_string(k)}});
  return spec;
}

void cmd_gen_corpus(const Flags& f) {
  RunConfig c = resolve(f);
  const CharacterModel performer = base_character(c);
  const json spec = f.spec.empty() ? default_corpus_spec() : read_json(f.spec);
  io::check_header(spec, "morphsim.corpus_spec");
  std::vector<std::string> outputs;
  json entries = json::array();
  for (const json& e : io::get<json>(spec, "clips")) {
    io::only_keys(e, {"kind", "id", "duration", "params"}, "corpus clip");
    const ClipKind kind = clip_kind_from_string(io::get<std::string>(e, "kind"));
    ClipParams p = ClipParams::defaults(kind);
    if (e.contains("params")) {
      const json& q = e["params"];
      io::only_keys(q, {"period", "stride", "amplitude", "height", "lean", "frame_rate"},
                    "clip params");
      io::set_if(q, "period", p.period);
      io::set_if(q, "stride", p.stride);
      io::set_if(q, "amplitude", p.amplitude);
      io::set_if(q, "height", p.height);
      io::set_if(q, "lean", p.lean);
      io::set_if(q, "frame_rate", p.frame_rate);
    }
    MotionClip clip = generate_clip(kind, p, io::get_or(e, "duration", f.duration), performer);
    clip.id = io::get_or<std::string>(e, "id", clip.id);
    const std::string file = clip.id + ".json";
    save_json(fs::path(c.out) / file, to_json(clip));
    outputs.push_back(file);
    entries.push_back({{"id", clip.id},
                       {"kind", to_string(kind)},
                       {"file", file},
                       {"frames", clip.num_frames()},
                       {"params",
                        {{"period", p.period},
                         {"stride", p.stride},
                         {"amplitude", p.amplitude},
                         {"height", p.height},
                         {"lean", p.lean},
                         {"frame_rate", p.frame_rate}}}});
  }
  if (outputs.empty()) throw ValidationError("corpus spec lists no clips");
  manifest(c, "gen-corpus", outputs, {{"clips", entries}});
  if (!f.quiet) std::cout << "wrote " << outputs.size() << " clips to " << c.out << "\n";
}

void cmd_train(const Flags& f) {
  RunConfig c = resolve(f);
  const CharacterModel base = base_character(c);
  const std::vector<MotionClip> clips = corpus(c);
  TrainConfig tc = c.train;
  tc.imitation = c.imitation;
  tc.seed = *c.seed;
  tc.workers = c.workers;
  Trainer trainer(clips, base, tc);
  const fs::path out(c.out);
  std::ostringstream log;
  log << "iteration,steps,episodes,diverged,mean_reward,mean_episode_length,success_rate,"
         "policy_loss,value_loss,approx_kl,epochs\n";
  log << std::setprecision(10);
  for (int it = 0; it < tc.iterations; ++it) {
    const IterationStats s = trainer.iterate();
    log << s.iteration << ',' << s.steps << ',' << s.episodes << ',' << s.diverged << ','
        << s.mean_reward << ',' << s.mean_episode_length << ',' << s.success_rate << ','
        << s.ppo.policy_loss << ',' << s.ppo.value_loss << ',' << s.ppo.approx_kl << ','
        << s.ppo.epochs << '\n';
    if (!f.quiet && (it + 1) % 10 == 0)
      std::cerr << "iteration " << it + 1 << "/" << tc.iterations << " reward "
                << s.mean_reward << " success " << s.success_rate << "\n";
  }
  save_json(out / "checkpoint.json", to_json(trainer.controller()));
  write_text(out / "train_log.csv", log.str());
  const EvalReport report = evaluate_design(trainer.controller(), identity_design(base), base,
                                            clips, c.imitation);
  write_report(out, "metrics", report);
  manifest(c, "train", {"checkpoint.json", "train_log.csv", "metrics.csv", "metrics.txt"},
           {{"controller_hash", std::to_string(controller_hash(trainer.controller()))}});
  if (!f.quiet) std::cout << report.to_text();
}

void cmd_optimize_design(const Flags& f) {
  RunConfig c = resolve(f);
  const CharacterModel base = base_character(c);
  const Controller ctl = controller(c);
  const std::vector<MotionClip> clips = corpus(c, f.clip_ids);
  DesignOptConfig dc = c.design_opt;
  dc.imitation = c.imitation;
  dc.space = design_space_by_name(c.design_space, base);
  dc.seed = *c.seed;
  dc.workers = c.workers;
  const CharacterDesign reference = chosen_design(c, base);
  const std::uint64_t hash = controller_hash(ctl);
  const DesignOptResult r = optimize(ctl, clips, base, dc, reference);
  const fs::path out(c.out);
  save_json(out / "design.json", to_json(r.best_design));
  save_json(out / "final_design.json", to_json(r.final_design));
  write_text(out / "history.csv", history_csv(r.history, dc.space));
  write_report(out, "metrics", r.best_report);
  write_report(out, "final_metrics", r.final_report);
  const EvalReport before = evaluate_design(ctl, reference, base, clips, c.imitation, dc.box);
  write_report(out, "reference_metrics", before);
  manifest(c, "optimize-design",
           {"design.json", "final_design.json", "history.csv", "metrics.csv", "metrics.txt",
            "final_metrics.csv", "final_metrics.txt", "reference_metrics.csv",
            "reference_metrics.txt"},
           {{"controller_hash", std::to_string(hash)},
            {"best_iteration", r.best_iteration},
            {"diverged_episodes", r.diverged}});
  if (!f.quiet) std::cout << r.best_report.to_text();
}

void cmd_evaluate(const Flags& f) {
  RunConfig c = resolve(f);
  const CharacterModel base = base_character(c);
  const Controller ctl = controller(c);
  const std::vector<MotionClip> clips = corpus(c, f.clip_ids);
  const EvalReport r = evaluate_design(ctl, chosen_design(c, base), base, clips, c.imitation,
                                       c.design_opt.box);
  write_report(c.out, "metrics", r);
  manifest(c, "evaluate", {"metrics.csv", "metrics.txt"});
  if (!f.quiet) std::cout << r.to_text();
}

void cmd_rollout(const Flags& f) {
  RunConfig c = resolve(f);
  const CharacterModel base = base_character(c);
  const Controller ctl = controller(c);
  if (f.clip_id.empty()) throw ValidationError("rollout needs --clip");
  const MotionClip clip = corpus(c, {f.clip_id}).front();
  const CharacterDesign d = chosen_design(c, base);
  const CharacterModel model = build(d, base, c.design_opt.box);
  const Trajectory t =
      evaluation_rollout(ctl, model, design_features(d, c.design_opt.box), clip, c.imitation);

  // Row 0 is the initial reference state; later rows are the state after
  // each control step. Blank cells have no value for the initial row.
  std::ostringstream os;
  os << std::setprecision(10);
  const int n = model.num_dofs();
  const int k = static_cast<int>(t.sim_keypoints[0].cols());
  const int feet = static_cast<int>(model.foot_geoms.size());
  const int nres = num_residual_forces(model, c.imitation);
  os << "frame,time,termination,reset,reward,r_p,r_v,r_e,r_vf";
  for (int i = 0; i < n; ++i) os << ",q" << i;
  for (int i = 0; i < n; ++i) os << ",qdot" << i;
  for (int i = 0; i < feet; ++i) os << ",contact" << i;
  for (int i = 0; i < nres; ++i) os << ",residual" << i;
  for (int i = 0; i < k; ++i) os << ",sim_x" << i << ",sim_y" << i;
  for (int i = 0; i < k; ++i) os << ",ref_x" << i << ",ref_y" << i;
  os << '\n';
  for (std::size_t s = 0; s < t.sim_keypoints.size(); ++s) {
    const int frame = t.start_frame + static_cast<int>(s);
    const StepRecord* rec = s > 0 ? &t.steps[s - 1] : nullptr;
    os << frame << ',' << frame / clip.frame_rate << ','
       << (rec ? to_string(rec->termination) : "none") << ',' << (rec && rec->reset ? 1 : 0);
    if (rec)
      os << ',' << rec->reward.total << ',' << rec->reward.r_p << ',' << rec->reward.r_v << ','
         << rec->reward.r_e << ',' << rec->reward.r_vf;
    else
      os << ",,,,,";
    const VecX q = rec ? rec->state.q : clip.frames[frame];
    const VecX qdot = rec ? rec->state.qdot : clip.velocity(frame);
    for (Eigen::Index i = 0; i < q.size(); ++i) os << ',' << q[i];
    for (Eigen::Index i = 0; i < qdot.size(); ++i) os << ',' << qdot[i];
    for (int i = 0; i < feet; ++i) {
      os << ',';
      if (rec && i < static_cast<int>(rec->state.contact.size())) os << (rec->state.contact[i] ? 1 : 0);
    }
    for (int i = 0; i < nres; ++i) {
      os << ',';
      if (rec && i < rec->residual.size()) os << rec->residual[i];
    }
    for (int i = 0; i < k; ++i) os << ',' << t.sim_keypoints[s](0, i) << ',' << t.sim_keypoints[s](1, i);
    for (int i = 0; i < k; ++i)
      os << ',' << clip.keypoints[frame](0, i) << ',' << clip.keypoints[frame](1, i);
    os << '\n';
  }
  write_text(fs::path(c.out) / "trajectory.csv", os.str());

  const ClipMetrics m = clip_metrics(t, clip);
  json summary = io::header("morphsim.rollout_summary");
  summary["clip"] = clip.id;
  summary["design"] = to_json(d);
  summary["start_frame"] = t.start_frame;
  summary["steps"] = t.steps.size();
  summary["failures"] = t.failures;
  summary["truncated"] = t.truncated;
  summary["metrics"] = {{"S_succ", m.s_succ},     {"E_mpjpe", m.e_mpjpe},
                        {"E_mpjpe_g", m.e_mpjpe_g}, {"E_acc", m.e_acc},
                        {"mean_reward", m.mean_reward}};
  save_json(fs::path(c.out) / "rollout_summary.json", summary);
  manifest(c, "rollout", {"trajectory.csv", "rollout_summary.json"},
           {{"clip", clip.id}, {"failures", t.failures}});
  if (!f.quiet)
    std::cout << "clip " << clip.id << ": " << t.steps.size() << " steps, " << t.failures
              << " failures, E_mpjpe " << m.e_mpjpe << " mm\n";
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const FormatError*>(&e)) return "format";
  if (dynamic_cast<const ValidationError*>(&e)) return "validation";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const IntegrationError*>(&e)) return "integration";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  return "internal";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Planar character imitation and design optimization"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* s) {
    s->add_option("--config", f.config, "run configuration file")->check(CLI::ExistingFile);
    s->add_option("--out", f.out, "output directory");
    s->add_option("--seed", f.seed, "random seed (fallback: MORPHSIM_SEED, then 1)");
    s->add_option("--workers", f.workers, "parallel rollout workers; 1 is bitwise reproducible");
    s->add_option("--character", f.character, "base character file");
    s->add_flag("--quiet", f.quiet, "no progress output");
  };

  auto* gen = app.add_subcommand("gen-corpus", "generate procedural reference clips");
  common(gen);
  gen->add_option("--manifest", f.spec, "corpus spec listing the clips to generate");
  gen->add_option("--duration", f.duration, "seconds per clip when the spec gives none");

  auto* train = app.add_subcommand("train", "train the imitation controller");
  common(train);
  train->add_option("--clips", f.corpus, "corpus directory");
  train->add_option("--iterations", f.iterations, "PPO iterations");

  auto* opt = app.add_subcommand("optimize-design", "optimize a design with a frozen controller");
  common(opt);
  opt->add_option("--controller", f.controller, "controller checkpoint");
  opt->add_option("--clips", f.corpus, "corpus directory");
  opt->add_option("--clip", f.clip_ids, "restrict to these clip ids");
  opt->add_option("--design", f.design, "reference design (default: identity)");
  opt->add_option("--space", f.space, "design space: leg_length, compact or full");
  opt->add_option("--iterations", f.iterations, "optimization iterations");

  auto* eval = app.add_subcommand("evaluate", "evaluate a controller on a design");
  common(eval);
  eval->add_option("--controller", f.controller, "controller checkpoint");
  eval->add_option("--clips", f.corpus, "corpus directory");
  eval->add_option("--clip", f.clip_ids, "restrict to these clip ids");
  eval->add_option("--design", f.design, "design file (default: identity)");

  auto* roll = app.add_subcommand("rollout", "dump one deterministic rollout as CSV");
  common(roll);
  roll->add_option("--controller", f.controller, "controller checkpoint");
  roll->add_option("--clips", f.corpus, "corpus directory");
  roll->add_option("--clip", f.clip_id, "clip id");
  roll->add_option("--design", f.design, "design file (default: identity)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) cmd_gen_corpus(f);
    else if (*train) cmd_train(f);
    else if (*opt) cmd_optimize_design(f);
    else if (*eval) cmd_evaluate(f);
    else if (*roll) cmd_rollout(f);
  } catch (const std::exception& e) {
    std::cerr << json{{"error", error_kind(e)}, {"message", e.what()}}.dump() << "\n";
    return 2;
  }
  return 0;
}
