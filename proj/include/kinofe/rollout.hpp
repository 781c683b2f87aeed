#pragma once

#include "kinofe/se3.hpp"
#include "kinofe/world.hpp"

#include <functional>
#include <span>
#include <vector>

namespace kinofe {

/// One-step body-frame model: inputs 22xB, controls 2xB -> state change 6xB.
using StepPredictor = std::function<MatX(const MatX& inputs, const MatX& controls)>;

/// A stretch of logged trajectory used for autoregressive evaluation:
/// the initial pose, T controls, the T embeddings observed at steps 0..T-1,
/// and the T ground-truth poses reached at steps 1..T.
struct RolloutWindow {
  PoseState initial;
  std::vector<Control> controls;
  std::vector<Vec8> e_elev;
  std::vector<Vec8> e_sem;
  std::vector<PoseState> truth;

  int horizon() const { return static_cast<int>(controls.size()); }
};

RolloutWindow make_window(const Trajectory& traj, std::size_t start, int horizon);

/// 22xB inputs for the given world poses and embeddings.
MatX assemble_inputs(const MatX& poses, std::span<const Vec8> e_elev, std::span<const Vec8> e_sem);

/// Applies from_body_frame column-wise to 6xB world poses.
MatX compose_poses(const MatX& poses, const MatX& deltas);

/// Predicted world poses for steps 1..T of every window. Each step re-zeroes the
/// body frame at the predicted pose and uses the observed embedding of that step.
std::vector<std::vector<PoseState>> rollout_batch(const StepPredictor& model,
                                                  std::span<const RolloutWindow> windows);

}  // namespace kinofe
