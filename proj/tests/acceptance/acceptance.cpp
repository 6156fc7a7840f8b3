// Acceptance run: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.
//
// The experiment criteria share one trained controller. Training is cached in
// the output directory and reused while the pinned configuration is
// unchanged; --retrain forces a fresh run.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "checks.hpp"
#include "morphsim/evaluate.hpp"
#include "morphsim/io.hpp"

namespace fs = std::filesystem;
using namespace morphsim;
using acceptance::Outcome;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

CharacterDesign leg_design(const CharacterModel& base, double scale) {
  CharacterDesign d = identity_design(base);
  for (int l : {body::kThighL, body::kShinL, body::kThighR, body::kShinR})
    d.bone_length_scales[l] = scale;
  return d;
}

double leg_of(const CharacterDesign& d) { return d.bone_length_scales[body::kThighL]; }

std::vector<MotionClip> training_corpus() {
  std::vector<MotionClip> clips;
  for (ClipKind k : {ClipKind::kWalk, ClipKind::kHop, ClipKind::kCrawl})
    clips.push_back(generate_clip(k, ClipParams::defaults(k), 3.0));
  return clips;
}

// Procedural clips outside the training corpus, all by the default performer:
// slower, faster and shorter-stride variants of each training gait plus the
// two gaits the controller never saw.
std::vector<MotionClip> held_out_corpus() {
  std::vector<MotionClip> clips;
  for (ClipKind k : {ClipKind::kWalk, ClipKind::kHop, ClipKind::kCrawl}) {
    const ClipParams d = ClipParams::defaults(k);
    const std::vector<std::pair<std::string, ClipParams>> variants{
        {"slow", [&] { ClipParams p = d; p.period *= 1.2; return p; }()},
        {"fast", [&] { ClipParams p = d; p.period *= 0.85; return p; }()},
        {"short", [&] { ClipParams p = d; p.stride *= 0.75; return p; }()}};
    for (const auto& [name, p] : variants) {
      clips.push_back(generate_clip(k, p, 3.0));
      clips.back().id = to_string(k) + "_" + name;
    }
  }
  for (ClipKind k : {ClipKind::kKick, ClipKind::kCartwheelProxy})
    clips.push_back(generate_clip(k, ClipParams::defaults(k), 3.0));
  return clips;
}

// Clip recorded from the frozen controller driving `truth` through `source`
// as re-performed by that body. Keypoints come from the same body.
MotionClip rollout_clip(const Controller& ctl, const CharacterModel& base,
                        const CharacterDesign& truth, const MotionClip& source,
                        const ImitationConfig& icfg, const std::string& id) {
  const CharacterModel body = build(truth, base);
  const MotionClip ref = retarget_clip(source, base, body);
  const Trajectory t = evaluation_rollout(ctl, body, design_features(truth), ref, icfg);
  MotionClip clip;
  clip.id = id;
  clip.category = source.category;
  clip.frame_rate = source.frame_rate;
  clip.frames.push_back(ref.frames[0]);
  for (const StepRecord& s : t.steps) clip.frames.push_back(s.state.q);
  attach_keypoints(clip, body);
  clip.validate();
  return clip;
}

struct Line {
  std::string id;
  Outcome outcome;
};

class Run {
 public:
  Run(RunConfig cfg, fs::path out, bool retrain, std::string controller_path)
      : cfg_(std::move(cfg)),
        out_(std::move(out)),
        retrain_(retrain),
        controller_path_(std::move(controller_path)) {
    cfg_.train.imitation = cfg_.imitation;
    cfg_.train.seed = *cfg_.seed;
    cfg_.train.workers = cfg_.workers;
    cfg_.design_opt.imitation = cfg_.imitation;
    cfg_.design_opt.space = design_space_by_name(cfg_.design_space, base_);
    cfg_.design_opt.seed = *cfg_.seed;
    cfg_.design_opt.workers = cfg_.workers;
    fs::create_directories(out_);
  }

  void report(const std::string& id, Outcome o) {
    std::cout << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
    lines_.push_back({id, std::move(o)});
  }

  bool all_pass() const {
    for (const auto& l : lines_)
      if (!l.outcome.pass) return false;
    return !lines_.empty();
  }

  void print_summary() const {
    std::vector<Line> sorted = lines_;
    std::sort(sorted.begin(), sorted.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
    std::cout << "\nsummary\n";
    for (const auto& l : sorted)
      std::cout << l.id << ' ' << (l.outcome.pass ? "PASS" : "FAIL") << "  " << l.outcome.detail
                << '\n';
  }

  void write_summary() const {
    json j = io::header("morphsim.acceptance");
    j["config"] = to_json(cfg_);
    for (const auto& l : lines_)
      j["criteria"].push_back({{"id", l.id}, {"pass", l.outcome.pass}, {"detail", l.outcome.detail}});
    save_json(out_ / "acceptance.json", j);
  }

  void fast_checks() {
    report("C1", acceptance::formula_fidelity());
    report("C2", acceptance::gradient_suite(cfg_.train, cfg_.design_opt));
    report("C3", acceptance::physics_suite());
  }

  // C4: train (or reuse the cached run), then compare with the untrained
  // controller on the training corpus under deterministic evaluation.
  void learning() {
    const std::vector<MotionClip> clips = training_corpus();
    const Trainer initial(clips, base_, cfg_.train);
    const EvalReport before =
        evaluate_design(initial.controller(), identity_design(base_), base_, clips, cfg_.imitation);

    double train_seconds = 0.0;
    int iterations = cfg_.train.iterations;
    bool external = false;
    const json fingerprint = {{"train", to_json(cfg_.train)},
                              {"imitation", to_json(cfg_.imitation)},
                              {"seed", cfg_.train.seed},
                              {"workers", cfg_.train.workers}};
    if (!controller_path_.empty()) {
      controller_ = load_controller(controller_path_);
      external = true;
    } else if (!retrain_ && fs::exists(out_ / "checkpoint.json") &&
               fs::exists(out_ / "train_manifest.json") &&
               read_json(out_ / "train_manifest.json")["train"] == fingerprint) {
      const json m = read_json(out_ / "train_manifest.json");
      controller_ = load_controller(out_ / "checkpoint.json");
      train_seconds = m["seconds"].get<double>();
      std::cout << "(reusing cached training from " << (out_ / "checkpoint.json").string()
                << ")" << std::endl;
    } else {
      Trainer trainer(clips, base_, cfg_.train);
      std::ostringstream log;
      log << "iteration,steps,episodes,mean_reward,success_rate,approx_kl\n";
      const auto t0 = Clock::now();
      for (int it = 0; it < iterations; ++it) {
        const IterationStats s = trainer.iterate();
        log << s.iteration << ',' << s.steps << ',' << s.episodes << ',' << s.mean_reward << ','
            << s.success_rate << ',' << s.ppo.approx_kl << '\n';
        if ((it + 1) % 100 == 0)
          std::cout << "  train " << it + 1 << "/" << iterations << " reward " << s.mean_reward
                    << " " << static_cast<int>(seconds_since(t0)) << " s" << std::endl;
      }
      train_seconds = seconds_since(t0);
      controller_ = trainer.controller();
      save_json(out_ / "checkpoint.json", to_json(controller_));
      write_text(out_ / "train_log.csv", log.str());
      json m = io::header("morphsim.acceptance_training");
      m["train"] = fingerprint;
      m["seconds"] = train_seconds;
      m["controller_hash"] = std::to_string(controller_hash(controller_));
      save_json(out_ / "train_manifest.json", m);
    }
    const EvalReport after =
        evaluate_design(controller_, identity_design(base_), base_, clips, cfg_.imitation);
    write_text(out_ / "c4_untrained.csv", before.to_csv());
    write_text(out_ / "c4_trained.csv", after.to_csv());

    const double ratio = after.aggregate.e_mpjpe_g / before.aggregate.e_mpjpe_g;
    const bool in_budget = external || train_seconds <= 7200.0;
    std::string detail = fmt(
        "S_succ %.0f%% (need >= 80%%), E_mpjpe-g %.1f mm vs untrained %.1f mm (ratio %.3f, need "
        "< 0.5), ",
        100.0 * after.aggregate.s_succ, after.aggregate.e_mpjpe_g, before.aggregate.e_mpjpe_g,
        ratio);
    detail += external ? std::string("external checkpoint, budget not measured")
                       : fmt("%d iterations in %.1f min (budget 120 min), seed %llu", iterations,
                             train_seconds / 60.0,
                             static_cast<unsigned long long>(*cfg_.seed));
    report("C4", {after.aggregate.s_succ >= 0.8 && ratio < 0.5 && in_budget, detail});
  }

  // C5 and C8: recover the leg length of a rollout clip; C6 and C7 reuse the
  // optimized design.
  void design() {
    const ImitationConfig& icfg = cfg_.imitation;
    const MotionClip walk = generate_clip(ClipKind::kWalk, ClipParams::defaults(ClipKind::kWalk), 3.0);
    const MotionClip target =
        rollout_clip(controller_, base_, leg_design(base_, 1.3), walk, icfg, "walk_leg1.3");
    save_json(out_ / "c5_clip.json", to_json(target));

    const auto t0 = Clock::now();
    std::vector<double> scales;
    for (int i = 0; i <= 14; ++i) scales.push_back(0.8 + 0.05 * i);
    const auto grid = leg_length_grid(controller_, {target}, base_, scales, icfg, cfg_.design_opt.box);
    std::ostringstream gcsv;
    gcsv << "leg_length,mean_reward\n" << std::setprecision(10);
    double grid_best = grid[0].first, grid_reward = grid[0].second;
    for (const auto& [s, r] : grid) {
      gcsv << s << ',' << r << '\n';
      if (r > grid_reward) {
        grid_reward = r;
        grid_best = s;
      }
    }
    write_text(out_ / "c5_grid.csv", gcsv.str());

    const std::uint64_t hash_before = controller_hash(controller_);
    const DesignOptResult res = optimize(controller_, {target}, base_, cfg_.design_opt);
    const std::uint64_t hash_after = controller_hash(controller_);
    const double seconds = seconds_since(t0);
    write_text(out_ / "c5_history.csv", history_csv(res.history, cfg_.design_opt.space));
    save_json(out_ / "c5_design.json", to_json(res.best_design));
    optimized_ = res.best_design;

    const double found = leg_of(res.best_design);
    report("C5", {std::abs(found - grid_best) <= 0.05 + 1e-12 && seconds <= 3600.0,
                  fmt("optimized leg scale %.4f, grid optimum %.2f (reward %.4f), |diff| %.4f "
                      "(tol 0.05), grid + optimize %.1f min (budget 60 min)",
                      found, grid_best, grid_reward, std::abs(found - grid_best), seconds / 60.0)});

    c6_candidates_.push_back({target, res});
    report_c8(hash_before, hash_after);
  }

  void report_c8(std::uint64_t before, std::uint64_t after) {
    report("C8", {before == after, fmt("controller hash %016llx before, %016llx after optimize",
                                       static_cast<unsigned long long>(before),
                                       static_cast<unsigned long long>(after))});
  }

  // C6: a fixed candidate set, the recovery clip plus clips re-performed by
  // a body with 1.5x legs. Each candidate the default design fails is
  // optimized; one 0% -> 100% case with lower MPJPE passes.
  void directional() {
    const ImitationConfig& icfg = cfg_.imitation;
    const CharacterModel tall = build(leg_design(base_, 1.5), base_);
    for (ClipKind k : {ClipKind::kWalk, ClipKind::kHop, ClipKind::kCrawl}) {
      MotionClip c = retarget_clip(generate_clip(k, ClipParams::defaults(k), 3.0), base_, tall);
      c.id = to_string(k) + "_tall";
      c6_candidates_.push_back({c, std::nullopt});
    }
    std::ostringstream detail, csv;
    csv << "clip,default_S_succ,default_E_mpjpe,optimized_leg,optimized_S_succ,"
           "optimized_E_mpjpe\n";
    bool pass = false;
    for (auto& [clip, result] : c6_candidates_) {
      const EvalReport d = evaluate_design(controller_, identity_design(base_), base_, {clip}, icfg,
                                           cfg_.design_opt.box);
      const ClipMetrics& dm = d.clips[0];
      if (dm.s_succ > 0.0) {
        detail << clip.id << ": default succeeds; ";
        csv << clip.id << ',' << dm.s_succ << ',' << dm.e_mpjpe << ",,,\n";
        continue;
      }
      if (!result) result = optimize(controller_, {clip}, base_, cfg_.design_opt);
      const ClipMetrics& om = result->best_report.clips[0];
      const bool ok = om.s_succ == 1.0 && om.e_mpjpe < dm.e_mpjpe;
      pass = pass || ok;
      detail << fmt("%s: default 0%% %.0f mm -> leg %.3f %.0f%% %.0f mm; ", clip.id.c_str(),
                    dm.e_mpjpe, leg_of(result->best_design), 100.0 * om.s_succ, om.e_mpjpe);
      csv << clip.id << ',' << dm.s_succ << ',' << dm.e_mpjpe << ',' << leg_of(result->best_design)
          << ',' << om.s_succ << ',' << om.e_mpjpe << '\n';
    }
    write_text(out_ / "c6.csv", csv.str());
    std::string text = detail.str();
    if (text.size() >= 2) text.resize(text.size() - 2);
    report("C6", {pass, text});
  }

  // C7: success on held-out procedural clips, recovered design vs default.
  void retention() {
    const std::vector<MotionClip> held = held_out_corpus();
    const EvalReport d = evaluate_design(controller_, identity_design(base_), base_, held,
                                         cfg_.imitation, cfg_.design_opt.box);
    const EvalReport o =
        evaluate_design(controller_, optimized_, base_, held, cfg_.imitation, cfg_.design_opt.box);
    write_text(out_ / "c7_default.csv", d.to_csv());
    write_text(out_ / "c7_optimized.csv", o.to_csv());
    const double drop = 100.0 * (d.aggregate.s_succ - o.aggregate.s_succ);
    report("C7", {drop <= 15.0 + 1e-9,
                  fmt("held-out S_succ default %.1f%%, optimized (leg %.3f) %.1f%%, drop %.1f pp "
                      "(max 15) over %zu clips",
                      100.0 * d.aggregate.s_succ, leg_of(optimized_), 100.0 * o.aggregate.s_succ,
                      drop, held.size())});
  }

 private:
  RunConfig cfg_;
  fs::path out_;
  bool retrain_;
  std::string controller_path_;
  CharacterModel base_ = default_character();
  Controller controller_;
  CharacterDesign optimized_;
  std::vector<std::pair<MotionClip, std::optional<DesignOptResult>>> c6_candidates_;
  std::vector<Line> lines_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance run"};
  std::string config = MORPHSIM_ACCEPTANCE_CONFIG;
  std::string out = "acceptance_out";
  std::string controller;
  bool retrain = false, fast = false;
  app.add_option("--config", config, "pinned run configuration")->check(CLI::ExistingFile);
  app.add_option("--out", out, "output and cache directory");
  app.add_option("--controller", controller, "use this checkpoint instead of training");
  app.add_flag("--retrain", retrain, "ignore a cached training run");
  app.add_flag("--fast-only", fast, "only the formula, gradient and physics checks");
  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg;
    merge_json(cfg, read_json(config));
    if (!cfg.seed) cfg.seed = 1;
    Run run(cfg, out, retrain, controller);
    run.fast_checks();
    if (!fast) {
      run.learning();
      run.design();
      run.directional();
      run.retention();
    }
    run.print_summary();
    run.write_summary();
    return run.all_pass() ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "acceptance run aborted: " << e.what() << "\n";
    return 2;
  }
}
