#include "kinofe/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace kinofe {

void Rk4Config::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("Rk4Config: dt must be positive");
  if (substeps < 1) throw InvalidArgument("Rk4Config: substeps must be >= 1");
}

namespace {

Vec6 checked(const DerivativeField& f, const Vec22& x, const Vec2& u, int substep, int stage) {
  Vec6 k = f(x, u);
  if (!k.allFinite()) {
    throw NumericalError("rk4_step: non-finite derivative at substep " + std::to_string(substep) +
                         ", stage " + std::to_string(stage));
  }
  return k;
}

}  // namespace

Vec6 rk4_step(const DerivativeField& deriv, const Vec22& input, const Vec2& control,
              const Rk4Config& cfg) {
  cfg.validate();
  if (!control.allFinite()) throw InvalidArgument("rk4_step: non-finite control");
  const double h = cfg.dt / cfg.substeps;
  Vec6 acc = Vec6::Zero();
  for (int j = 0; j < cfg.substeps; ++j) {
    Vec22 base = input;
    base.head<kStateDim>() += acc;
    Vec22 x = base;
    const Vec6 k1 = checked(deriv, x, control, j, 1);
    x.head<kStateDim>() = base.head<kStateDim>() + 0.5 * h * k1;
    const Vec6 k2 = checked(deriv, x, control, j, 2);
    x.head<kStateDim>() = base.head<kStateDim>() + 0.5 * h * k2;
    const Vec6 k3 = checked(deriv, x, control, j, 3);
    x.head<kStateDim>() = base.head<kStateDim>() + h * k3;
    const Vec6 k4 = checked(deriv, x, control, j, 4);
    acc += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return acc;
}

OrderEstimate convergence_order(const DerivativeField& deriv, const Vec22& input,
                                const Vec2& control, double dt) {
  const Vec6 y1 = rk4_step(deriv, input, control, {dt, 1});
  const Vec6 y2 = rk4_step(deriv, input, control, {dt, 2});
  const Vec6 y4 = rk4_step(deriv, input, control, {dt, 4});
  OrderEstimate est;
  est.coarse_diff = (y1 - y2).norm();
  est.fine_diff = (y2 - y4).norm();
  // differences at rounding level count as exact integration
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, y4.norm());
  if (est.coarse_diff <= floor && est.fine_diff <= floor) {
    est.exact = true;
    return est;
  }
  est.order = std::log2(est.coarse_diff / est.fine_diff);
  return est;
}

}  // namespace kinofe
