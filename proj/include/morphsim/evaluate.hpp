#pragma once

// Deterministic evaluation of a controller on a design over a set of clips.

#include <vector>

#include "morphsim/character.hpp"
#include "morphsim/imitation.hpp"
#include "morphsim/metrics.hpp"
#include "morphsim/train.hpp"

namespace morphsim {

// Mean actions from frame 0 to the clip end; a failure resets the character
// to the reference at the failure frame and the rollout continues.
inline Trajectory evaluation_rollout(const Controller& ctl, const CharacterModel& model,
                                     const VecX& design_feats, const MotionClip& clip,
                                     const ImitationConfig& cfg) {
  RolloutOptions opt;
  opt.reset_on_failure = true;
  return rollout(model, design_feats, clip, [&](const VecX& o) { return ctl.act(o); }, cfg, opt);
}

inline EvalReport evaluate_design(const Controller& ctl, const CharacterDesign& design,
                                  const CharacterModel& base, const std::vector<MotionClip>& clips,
                                  const ImitationConfig& cfg, const DesignBox& box = {}) {
  if (clips.empty()) throw ValidationError("empty corpus");
  const CharacterModel model = build(design, base, box);
  if (ctl.obs_dim() != observation_dim(model) || ctl.act_dim() != action_dim(model, cfg))
    throw DimensionError("controller does not match the character topology");
  const VecX feats = design_features(design, box);
  EvalReport report;
  for (const auto& clip : clips)
    report.clips.push_back(clip_metrics(evaluation_rollout(ctl, model, feats, clip, cfg), clip));
  report.finalize();
  return report;
}

}  // namespace morphsim
