#include "kinofe/rollout.hpp"

#include <cmath>

namespace kinofe {

RolloutWindow make_window(const Trajectory& traj, std::size_t start, int horizon) {
  if (horizon < 1) throw InvalidArgument("make_window: horizon must be >= 1");
  if (start + horizon >= traj.size()) throw InvalidArgument("make_window: window exceeds trajectory");
  if (!traj.has_embeddings()) throw InvalidArgument("make_window: trajectory has no embeddings");
  RolloutWindow w;
  w.initial = traj.poses[start];
  for (int t = 0; t < horizon; ++t) {
    w.controls.push_back(traj.controls[start + t]);
    w.e_elev.push_back(traj.e_elev[start + t]);
    w.e_sem.push_back(traj.e_sem[start + t]);
    w.truth.push_back(traj.poses[start + t + 1]);
  }
  return w;
}

MatX assemble_inputs(const MatX& poses, std::span<const Vec8> e_elev, std::span<const Vec8> e_sem) {
  const Eigen::Index b = poses.cols();
  if (poses.rows() != kStateDim || static_cast<Eigen::Index>(e_elev.size()) != b ||
      static_cast<Eigen::Index>(e_sem.size()) != b) {
    throw InvalidArgument("assemble_inputs: shape mismatch");
  }
  MatX in = MatX::Zero(kInputDim, b);
  in.row(3) = poses.row(3);
  in.row(4) = poses.row(4);
  for (Eigen::Index j = 0; j < b; ++j) {
    in.col(j).segment<kEmbedDim>(kStateDim) = e_elev[j];
    in.col(j).segment<kEmbedDim>(kStateDim + kEmbedDim) = e_sem[j];
  }
  return in;
}

MatX compose_poses(const MatX& poses, const MatX& deltas) {
  if (poses.rows() != kStateDim || deltas.rows() != kStateDim || poses.cols() != deltas.cols()) {
    throw InvalidArgument("compose_poses: expected matching 6xB matrices");
  }
  MatX out(kStateDim, poses.cols());
  for (Eigen::Index j = 0; j < poses.cols(); ++j) {
    out.col(j) = from_body_frame(PoseState::from_vec(poses.col(j)), deltas.col(j)).vec();
  }
  return out;
}

std::vector<std::vector<PoseState>> rollout_batch(const StepPredictor& model,
                                                  std::span<const RolloutWindow> windows) {
  std::vector<std::vector<PoseState>> out(windows.size());
  if (windows.empty()) return out;
  const int horizon = windows.front().horizon();
  const auto b = static_cast<Eigen::Index>(windows.size());
  MatX poses(kStateDim, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    if (windows[j].horizon() != horizon) throw InvalidArgument("rollout_batch: windows differ in horizon");
    poses.col(j) = windows[j].initial.vec();
    out[j].reserve(horizon);
  }
  std::vector<Vec8> ee(b), es(b);
  MatX controls(kControlDim, b);
  for (int t = 0; t < horizon; ++t) {
    for (Eigen::Index j = 0; j < b; ++j) {
      ee[j] = windows[j].e_elev[t];
      es[j] = windows[j].e_sem[t];
      controls.col(j) = windows[j].controls[t].vec();
    }
    const MatX delta = model(assemble_inputs(poses, ee, es), controls);
    if (delta.rows() != kStateDim || delta.cols() != b) {
      throw InvalidArgument("rollout_batch: predictor returned wrong shape");
    }
    poses = compose_poses(poses, delta);
    for (Eigen::Index j = 0; j < b; ++j) out[j].push_back(PoseState::from_vec(poses.col(j)));
  }
  return out;
}

}  // namespace kinofe
