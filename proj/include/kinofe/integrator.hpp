#pragma once

#include "kinofe/net.hpp"
#include "kinofe/types.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace kinofe {

struct Rk4Config {
  double dt = 0.1;
  int substeps = 1;

  void validate() const;
};

/// Derivative field over the 22-d conditioned input and the 2-d control.
using DerivativeField = std::function<Vec6(const Vec22&, const Vec2&)>;

/// Classic RK4 over [0, dt]. Stages see the input with its six pose slots
/// advanced by the running increment; embeddings and control are held.
/// Returns the accumulated change, not the absolute state.
Vec6 rk4_step(const DerivativeField& deriv, const Vec22& input, const Vec2& control,
              const Rk4Config& cfg = {});

struct OrderEstimate {
  bool exact = false;       // both differences vanished
  double order = 0.0;       // log2 of successive difference ratio
  double coarse_diff = 0.0; // |y(dt) - y(dt/2)|
  double fine_diff = 0.0;   // |y(dt/2) - y(dt/4)|
};

/// Richardson estimate of the global order over one control interval using
/// 1, 2 and 4 substeps.
OrderEstimate convergence_order(const DerivativeField& deriv, const Vec22& input,
                                const Vec2& control, double dt = 0.1);

/// Stage caches recorded by the taped batched integrator, one array per substep.
template <typename Scalar>
struct Rk4Tape {
  std::vector<std::array<typename FeedforwardNet<Scalar>::Cache, 4>> stages;
};

namespace detail {

template <typename Scalar>
void check_stage(const MatXT<Scalar>& k, int substep, int stage) {
  if (!k.allFinite()) {
    throw NumericalError("rk4: non-finite derivative at substep " + std::to_string(substep) +
                         ", stage " + std::to_string(stage + 1));
  }
}

template <typename Scalar>
MatXT<Scalar> stack_input(const Eigen::Ref<const MatXT<Scalar>>& inputs,
                          const Eigen::Ref<const MatXT<Scalar>>& controls) {
  if (inputs.rows() != kInputDim || controls.rows() != kControlDim ||
      inputs.cols() != controls.cols()) {
    throw InvalidArgument("rk4: expected 22xB inputs and 2xB controls");
  }
  MatXT<Scalar> z(kNetInputDim, inputs.cols());
  z.topRows(kInputDim) = inputs;
  z.bottomRows(kControlDim) = controls;
  return z;
}

template <typename Scalar>
MatXT<Scalar> rk4_net_impl(const FeedforwardNet<Scalar>& g,
                           const Eigen::Ref<const MatXT<Scalar>>& inputs,
                           const Eigen::Ref<const MatXT<Scalar>>& controls, const Rk4Config& cfg,
                           Rk4Tape<Scalar>* tape) {
  cfg.validate();
  if (g.input_dim() != kNetInputDim || g.output_dim() != kStateDim) {
    throw InvalidArgument("rk4: derivative network must map 24 -> 6");
  }
  using Matrix = MatXT<Scalar>;
  const Matrix z0 = stack_input<Scalar>(inputs, controls);
  const Scalar h = static_cast<Scalar>(cfg.dt / cfg.substeps);
  const Scalar half = h / Scalar(2);
  Matrix acc = Matrix::Zero(kStateDim, z0.cols());
  if (tape) tape->stages.assign(cfg.substeps, {});
  typename FeedforwardNet<Scalar>::Cache scratch;
  for (int j = 0; j < cfg.substeps; ++j) {
    auto cache = [&](int s) -> typename FeedforwardNet<Scalar>::Cache& {
      return tape ? tape->stages[j][s] : scratch;
    };
    Matrix base = z0;
    base.topRows(kStateDim) += acc;
    Matrix z = base;
    const Matrix k1 = g.forward(z, cache(0));
    check_stage(k1, j, 0);
    z.topRows(kStateDim) = base.topRows(kStateDim) + half * k1;
    const Matrix k2 = g.forward(z, cache(1));
    check_stage(k2, j, 1);
    z.topRows(kStateDim) = base.topRows(kStateDim) + half * k2;
    const Matrix k3 = g.forward(z, cache(2));
    check_stage(k3, j, 2);
    z.topRows(kStateDim) = base.topRows(kStateDim) + h * k3;
    const Matrix k4 = g.forward(z, cache(3));
    check_stage(k4, j, 3);
    acc += (h / Scalar(6)) * (k1 + Scalar(2) * k2 + Scalar(2) * k3 + k4);
  }
  return acc;
}

}  // namespace detail

/// Batched RK4 of a derivative network: inputs 22xB, controls 2xB, result 6xB.
template <typename Scalar>
MatXT<Scalar> rk4_net(const FeedforwardNet<Scalar>& g,
                      const Eigen::Ref<const MatXT<Scalar>>& inputs,
                      const Eigen::Ref<const MatXT<Scalar>>& controls,
                      const Rk4Config& cfg = {}) {
  return detail::rk4_net_impl<Scalar>(g, inputs, controls, cfg, nullptr);
}

/// Same as rk4_net, recording stage caches for rk4_net_backward.
template <typename Scalar>
MatXT<Scalar> rk4_net(const FeedforwardNet<Scalar>& g,
                      const Eigen::Ref<const MatXT<Scalar>>& inputs,
                      const Eigen::Ref<const MatXT<Scalar>>& controls, const Rk4Config& cfg,
                      Rk4Tape<Scalar>& tape) {
  return detail::rk4_net_impl<Scalar>(g, inputs, controls, cfg, &tape);
}

/// Reverse pass through the unrolled RK4 stages. Adds d(sum(upstream .* out))/dtheta
/// into `param_grad` and returns the gradient with respect to the 22xB inputs.
template <typename Scalar>
MatXT<Scalar> rk4_net_backward(const FeedforwardNet<Scalar>& g, const Rk4Tape<Scalar>& tape,
                               const Eigen::Ref<const MatXT<Scalar>>& upstream,
                               const Rk4Config& cfg, Eigen::Ref<VecXT<Scalar>> param_grad) {
  using Matrix = MatXT<Scalar>;
  if (static_cast<int>(tape.stages.size()) != cfg.substeps) {
    throw InvalidArgument("rk4_net_backward: tape does not match configuration");
  }
  if (upstream.rows() != kStateDim) throw InvalidArgument("rk4_net_backward: upstream must be 6xB");
  const Scalar h = static_cast<Scalar>(cfg.dt / cfg.substeps);
  const Scalar half = h / Scalar(2);
  const Scalar sixth = h / Scalar(6);
  Matrix d_acc = upstream;
  Matrix dz0 = Matrix::Zero(kNetInputDim, upstream.cols());
  for (int j = cfg.substeps - 1; j >= 0; --j) {
    const auto& st = tape.stages[j];
    const Matrix dz4 = g.backward(st[3], sixth * d_acc, param_grad);
    const Matrix dz3 =
        g.backward(st[2], Scalar(2) * sixth * d_acc + h * dz4.topRows(kStateDim), param_grad);
    const Matrix dz2 =
        g.backward(st[1], Scalar(2) * sixth * d_acc + half * dz3.topRows(kStateDim), param_grad);
    const Matrix dz1 =
        g.backward(st[0], sixth * d_acc + half * dz2.topRows(kStateDim), param_grad);
    const Matrix d_base = dz1 + dz2 + dz3 + dz4;
    dz0 += d_base;
    d_acc += d_base.topRows(kStateDim);
  }
  return dz0.topRows(kInputDim);
}

}  // namespace kinofe
