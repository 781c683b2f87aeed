#pragma once

#include "kinofe/types.hpp"

namespace kinofe {

enum class Frame : std::uint8_t { World, Body };

/// Six-DoF vehicle pose. Angles are kept in (-pi, pi].
struct PoseState {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  Frame frame = Frame::World;

  Vec6 vec() const { return Vec6(x, y, z, roll, pitch, yaw); }
  static PoseState from_vec(const Vec6& v, Frame f = Frame::World);

  bool operator==(const PoseState&) const = default;
};

/// Normalized steering in [-1, 1] and speed in [0, v_max].
struct Control {
  double steer = 0.0;
  double speed = 0.0;

  Vec2 vec() const { return Vec2(steer, speed); }
  bool operator==(const Control&) const = default;
};

inline constexpr double kMaxSpeed = 3.0;

Control clamp_control(Control u, double v_max = kMaxSpeed);
bool control_valid(const Control& u, double v_max = kMaxSpeed);

/// One training/adaptation transition in the gravity-aligned body frame.
struct ConditionedSample {
  Vec22 input = Vec22::Zero();
  Vec2 control = Vec2::Zero();
  Vec6 target = Vec6::Zero();
};

/// Maps an angle onto (-pi, pi]; -pi itself maps to +pi.
double wrap_angle(double a);

/// Applies wrap_angle to the roll/pitch/yaw slots (3..5) of a pose-shaped vector.
Vec6 wrap_angles(Vec6 v);

/// World-frame motion from `prev` to `next` expressed in the gravity-aligned
/// frame of `prev`: planar displacement rotated by -yaw_prev, angle deltas
/// taken on the circle.
Vec6 to_body_frame(const PoseState& prev, const PoseState& next);

/// Inverse of to_body_frame.
PoseState from_body_frame(const PoseState& prev, const Vec6& delta);

/// [0, 0, 0, roll, pitch, 0, e_elev, e_sem].
Vec22 assemble_input(const PoseState& pose, const Eigen::Ref<const VecX>& e_elev,
                     const Eigen::Ref<const VecX>& e_sem);

/// Builds a full sample from two consecutive world poses and the embedding observed at `prev`.
ConditionedSample make_sample(const PoseState& prev, const PoseState& next, const Control& u,
                              const Vec8& e_elev, const Vec8& e_sem);

}  // namespace kinofe
