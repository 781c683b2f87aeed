#include "kinofe/se3.hpp"

#include <algorithm>
#include <cmath>

namespace kinofe {

namespace {

void require_finite_pose(const PoseState& p, const char* what) {
  if (!p.vec().allFinite()) {
    throw InvalidArgument(std::string(what) + ": non-finite pose component");
  }
}

}  // namespace

PoseState PoseState::from_vec(const Vec6& v, Frame f) {
  return PoseState{v[0], v[1], v[2], wrap_angle(v[3]), wrap_angle(v[4]), wrap_angle(v[5]), f};
}

double wrap_angle(double a) {
  if (a > -kPi && a <= kPi) return a;
  double w = std::remainder(a, 2.0 * kPi);
  if (w <= -kPi) w = kPi;
  return w;
}

Vec6 wrap_angles(Vec6 v) {
  for (int i = 3; i < 6; ++i) v[i] = wrap_angle(v[i]);
  return v;
}

Control clamp_control(Control u, double v_max) {
  u.steer = std::clamp(u.steer, -1.0, 1.0);
  u.speed = std::clamp(u.speed, 0.0, v_max);
  return u;
}

bool control_valid(const Control& u, double v_max) {
  return std::isfinite(u.steer) && std::isfinite(u.speed) && u.steer >= -1.0 && u.steer <= 1.0 &&
         u.speed >= 0.0 && u.speed <= v_max;
}

Vec6 to_body_frame(const PoseState& prev, const PoseState& next) {
  require_finite_pose(prev, "to_body_frame");
  require_finite_pose(next, "to_body_frame");
  const double dx = next.x - prev.x;
  const double dy = next.y - prev.y;
  const double c = std::cos(prev.yaw);
  const double s = std::sin(prev.yaw);
  Vec6 d;
  d[0] = c * dx + s * dy;
  d[1] = -s * dx + c * dy;
  d[2] = next.z - prev.z;
  d[3] = wrap_angle(next.roll - prev.roll);
  d[4] = wrap_angle(next.pitch - prev.pitch);
  d[5] = wrap_angle(next.yaw - prev.yaw);
  return d;
}

PoseState from_body_frame(const PoseState& prev, const Vec6& delta) {
  require_finite_pose(prev, "from_body_frame");
  if (!delta.allFinite()) throw InvalidArgument("from_body_frame: non-finite delta");
  const double c = std::cos(prev.yaw);
  const double s = std::sin(prev.yaw);
  PoseState out;
  out.x = prev.x + c * delta[0] - s * delta[1];
  out.y = prev.y + s * delta[0] + c * delta[1];
  out.z = prev.z + delta[2];
  out.roll = wrap_angle(prev.roll + delta[3]);
  out.pitch = wrap_angle(prev.pitch + delta[4]);
  out.yaw = wrap_angle(prev.yaw + delta[5]);
  out.frame = Frame::World;
  return out;
}

Vec22 assemble_input(const PoseState& pose, const Eigen::Ref<const VecX>& e_elev,
                     const Eigen::Ref<const VecX>& e_sem) {
  if (e_elev.size() != kEmbedDim || e_sem.size() != kEmbedDim) {
    throw InvalidArgument("assemble_input: embeddings must have dimension 8");
  }
  if (!e_elev.allFinite() || !e_sem.allFinite()) {
    throw InvalidArgument("assemble_input: non-finite embedding");
  }
  Vec22 in = Vec22::Zero();
  in[3] = pose.roll;
  in[4] = pose.pitch;
  in.segment<kEmbedDim>(kStateDim) = e_elev;
  in.segment<kEmbedDim>(kStateDim + kEmbedDim) = e_sem;
  return in;
}

ConditionedSample make_sample(const PoseState& prev, const PoseState& next, const Control& u,
                              const Vec8& e_elev, const Vec8& e_sem) {
  ConditionedSample s;
  s.input = assemble_input(prev, e_elev, e_sem);
  s.control = u.vec();
  s.target = to_body_frame(prev, next);
  return s;
}

}  // namespace kinofe
