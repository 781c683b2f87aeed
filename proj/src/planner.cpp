#include "kinofe/planner.hpp"

#include "kinofe/trainer.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <memory>
#include <sstream>

namespace kinofe {

ForwardModel ground_truth_model(const EnvironmentSpec& env, const WorldConfig& cfg) {
  return [&env, cfg](int, const MatX& poses, const MatX& controls) {
    MatX out(kStateDim, poses.cols());
    for (Eigen::Index j = 0; j < poses.cols(); ++j) {
      const Control u{controls(0, j), controls(1, j)};
      out.col(j) = step_ground_truth(env, PoseState::from_vec(poses.col(j)), u, cfg).pose.vec();
    }
    return out;
  };
}

ForwardModel learned_model(StepPredictor predictor, EmbeddingProvider embed, int embed_stride) {
  if (!predictor || !embed) throw InvalidArgument("learned_model: predictor and embeddings required");
  if (embed_stride < 1) throw InvalidArgument("learned_model: embed_stride must be >= 1");
  struct Held {
    std::vector<Vec8> elev, sem;
  };
  auto held = std::make_shared<Held>();
  return [predictor = std::move(predictor), embed = std::move(embed), embed_stride, held](
             int t, const MatX& poses, const MatX& controls) {
    const auto k = static_cast<std::size_t>(poses.cols());
    if (t % embed_stride == 0 || held->elev.size() != k) {
      held->elev.resize(k);
      held->sem.resize(k);
      for (std::size_t j = 0; j < k; ++j) {
        auto [e, s] = embed(PoseState::from_vec(poses.col(static_cast<Eigen::Index>(j))));
        held->elev[j] = e;
        held->sem[j] = s;
      }
    }
    return compose_poses(poses, predictor(assemble_inputs(poses, held->elev, held->sem), controls));
  };
}

void MppiConfig::validate() const {
  if (horizon < 1 || samples < 1) throw InvalidArgument("MppiConfig: horizon and samples must be >= 1");
  if (!(temperature > 0.0)) throw InvalidArgument("MppiConfig: temperature must be positive");
  if (!(steer_noise >= 0.0) || !(speed_noise >= 0.0)) {
    throw InvalidArgument("MppiConfig: noise std must be non-negative");
  }
  if (!(v_max > 0.0) || v_max > kMaxSpeed) throw InvalidArgument("MppiConfig: v_max must be in (0, 3]");
  if (!(goal_radius >= 0.0)) throw InvalidArgument("MppiConfig: goal_radius must be non-negative");
  if (!(weights.goal >= 0.0) || !(weights.attitude >= 0.0) || !(weights.boundary >= 0.0)) {
    throw InvalidArgument("MppiConfig: cost weights must be non-negative");
  }
  if (!(bound_lo < bound_hi)) throw InvalidArgument("MppiConfig: empty bounds");
}

MppiResult mppi_plan(const ForwardModel& model, const PoseState& pose, const Vec2& goal,
                     std::span<const Control> nominal, const MppiConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  const int h = cfg.horizon;
  const int k = cfg.samples;
  if (static_cast<int>(nominal.size()) != h) throw InvalidArgument("mppi_plan: nominal length != horizon");
  std::normal_distribution<double> gauss(0.0, 1.0);

  // Perturbed sequences, clipped to the control bounds. Rows: time; cols: samples.
  MatX steer(h, k), speed(h, k);
  std::vector<Control> base(h);
  for (int t = 0; t < h; ++t) base[t] = clamp_control(nominal[t], cfg.v_max);
  for (int j = 0; j < k; ++j) {
    for (int t = 0; t < h; ++t) {
      const Control u = clamp_control({base[t].steer + cfg.steer_noise * gauss(rng),
                                       base[t].speed + cfg.speed_noise * gauss(rng)},
                                      cfg.v_max);
      steer(t, j) = u.steer;
      speed(t, j) = u.speed;
    }
  }

  VecX cost = VecX::Zero(k);
  MatX poses = pose.vec().replicate(1, k);
  MatX controls(kControlDim, k);
  for (int t = 0; t < h; ++t) {
    controls.row(0) = steer.row(t);
    controls.row(1) = speed.row(t);
    poses = model(t, poses, controls);
    for (int j = 0; j < k; ++j) {
      if (!std::isfinite(cost[j])) continue;
      const auto p = poses.col(j);
      if (!p.allFinite()) {
        cost[j] = std::numeric_limits<double>::infinity();
        continue;
      }
      const double dist = std::hypot(p[0] - goal[0], p[1] - goal[1]);
      double c = cfg.weights.goal * (dist > cfg.goal_radius ? dist : 0.0);
      c += cfg.weights.attitude * (p[3] * p[3] + p[4] * p[4]);
      if (p[0] < cfg.bound_lo || p[0] > cfg.bound_hi || p[1] < cfg.bound_lo || p[1] > cfg.bound_hi) {
        c += cfg.weights.boundary;
      }
      cost[j] += c;
    }
  }

  MppiResult r;
  double smin = std::numeric_limits<double>::infinity();
  for (int j = 0; j < k; ++j) smin = std::min(smin, cost[j]);
  r.min_cost = smin;
  if (!std::isfinite(smin)) {
    r.all_infinite = true;
    r.control = Control{0.0, 0.0};
    r.nominal.assign(h, Control{0.0, 0.0});
    return r;
  }
  VecX w(k);
  for (int j = 0; j < k; ++j) {
    w[j] = std::isfinite(cost[j]) ? std::exp(-(cost[j] - smin) / cfg.temperature) : 0.0;
  }
  w /= w.sum();
  r.nominal.resize(h);
  for (int t = 0; t < h; ++t) {
    // Weighted mean of the perturbations, so zero noise reproduces the nominal exactly.
    const double ds = (w.array() * (steer.row(t).transpose().array() - base[t].steer)).sum();
    const double dv = (w.array() * (speed.row(t).transpose().array() - base[t].speed)).sum();
    r.nominal[t] = clamp_control({base[t].steer + ds, base[t].speed + dv}, cfg.v_max);
  }
  r.control = r.nominal.front();
  return r;
}

MppiPlanner::MppiPlanner(MppiConfig cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(seed), nominal_(cfg.horizon, Control{0.0, 0.0}) {
  cfg_.validate();
}

MppiResult MppiPlanner::plan(const ForwardModel& model, const PoseState& pose, const Vec2& goal) {
  MppiResult r = mppi_plan(model, pose, goal, nominal_, cfg_, rng_);
  nominal_.assign(r.nominal.begin() + 1, r.nominal.end());
  nominal_.push_back(r.nominal.back());
  return r;
}

std::string to_string(AdaptMode m) { return m == AdaptMode::Once ? "once" : "periodic"; }

AdaptMode parse_adapt_mode(std::string_view name) {
  if (name == "once") return AdaptMode::Once;
  if (name == "periodic") return AdaptMode::Periodic;
  throw InvalidArgument("unknown adapt mode '" + std::string(name) + "' (expected once or periodic)");
}

void AdaptationPolicy::validate() const {
  if (mode == AdaptMode::Periodic && !(period > 0.0)) {
    throw InvalidArgument("AdaptationPolicy: period must be positive in periodic mode");
  }
  if (capacity < 1) throw InvalidArgument("AdaptationPolicy: capacity must be >= 1");
  if (!(lambda >= 0.0)) throw InvalidArgument("AdaptationPolicy: lambda must be non-negative");
}

AdaptationBuffer::AdaptationBuffer(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw InvalidArgument("AdaptationBuffer: capacity must be >= 1");
  data_.reserve(capacity);
}

void AdaptationBuffer::push(const ConditionedSample& s) {
  if (static_cast<int>(data_.size()) < capacity_) {
    data_.push_back(s);
    return;
  }
  data_[head_] = s;
  head_ = (head_ + 1) % data_.size();
}

std::vector<ConditionedSample> AdaptationBuffer::recent(std::size_t n) const {
  n = std::min(n, data_.size());
  std::vector<ConditionedSample> out;
  out.reserve(n);
  const std::size_t sz = data_.size();
  for (std::size_t i = sz - n; i < sz; ++i) out.push_back(data_[(head_ + i) % sz]);
  return out;
}

double kinematic_time_bound(const EnvironmentSpec& env, const PoseState& start, const Vec2& goal,
                            const WorldConfig& cfg) {
  const double dist = std::hypot(goal[0] - start.x, goal[1] - start.y);
  return dist / (kMaxSpeed * terrain_factor(env, start, cfg));
}

NavigationReport run_navigation(const EnvironmentSpec& env, const PoseState& start, const Vec2& goal,
                                NavigationModel model, const AdaptationPolicy& policy,
                                const NavigationConfig& cfg) {
  policy.validate();
  const double margin = cfg.world.boundary_margin;
  if (!env.in_bounds(start.x, start.y, margin) || !env.in_bounds(goal[0], goal[1], margin)) {
    throw InvalidArgument("run_navigation: start and goal must lie inside the map margin");
  }
  if (model.basis) {
    if (!model.embed) throw InvalidArgument("run_navigation: a learned model needs perception");
    if (model.alpha.size() != model.basis->k()) throw InvalidArgument("run_navigation: alpha length != k");
  } else if (!model.fixed) {
    throw InvalidArgument("run_navigation: no forward model");
  }

  MppiConfig mcfg = cfg.mppi;
  mcfg.bound_lo = margin;
  mcfg.bound_hi = env.side - margin;
  MppiPlanner planner(mcfg, cfg.seed);
  const double dt = cfg.world.dt;

  VecX alpha = model.alpha;
  auto make_forward = [&]() -> ForwardModel {
    if (!model.basis) return model.fixed;
    return learned_model(basis_predictor(*model.basis, alpha), model.embed, model.embed_stride);
  };
  ForwardModel forward = make_forward();

  NavigationReport rep;
  PoseState pose = settle(env, start.x, start.y, start.yaw, cfg.world);
  const int refit_every = std::max(1, static_cast<int>(std::lround(policy.period / dt)));
  AdaptationBuffer buffer(policy.capacity);
  double sr = 0, sr2 = 0, sp = 0, sp2 = 0;
  int visited = 0;
  auto visit = [&](const PoseState& p) {
    sr += p.roll;
    sr2 += p.roll * p.roll;
    sp += p.pitch;
    sp2 += p.pitch * p.pitch;
    ++visited;
    if (cfg.keep_trace) {
      rep.trace.time.push_back(rep.time);
      rep.trace.poses.push_back(p);
    }
  };
  rep.trace.env_id = env.id;
  visit(pose);
  const int max_steps = static_cast<int>(std::ceil(cfg.timeout / dt - 1e-9));
  while (true) {
    if (std::hypot(pose.x - goal[0], pose.y - goal[1]) <= mcfg.goal_radius) {
      rep.success = true;
      break;
    }
    if (rep.steps >= max_steps) {
      rep.timed_out = true;
      break;
    }
    const MppiResult plan = planner.plan(forward, pose, goal);
    if (plan.all_infinite) ++rep.planner_failures;
    const StepResult next = step_ground_truth(env, pose, plan.control, cfg.world);
    if (cfg.keep_trace) rep.trace.controls.push_back(plan.control);
    if (model.basis && policy.mode == AdaptMode::Periodic) {
      const auto [ee, es] = model.embed(pose);
      buffer.push(make_sample(pose, next.pose, plan.control, ee, es));
    }
    pose = next.pose;
    ++rep.steps;
    rep.time = rep.steps * dt;
    visit(pose);
    if (next.out_of_bounds) {
      rep.boundary_exit = true;
      break;
    }
    if (model.basis && policy.mode == AdaptMode::Periodic && rep.steps % refit_every == 0) {
      const auto recent = buffer.recent(static_cast<std::size_t>(refit_every));
      const auto t0 = std::chrono::steady_clock::now();
      try {
        alpha = adapt(*model.basis, recent, policy.lambda).coefficients.alpha;
        forward = make_forward();
        ++rep.refits;
      } catch (const CoefficientSolveError&) {
        // keep the previous coefficients
      }
      rep.max_refit_seconds = std::max(
          rep.max_refit_seconds,
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
  }
  if (cfg.keep_trace && rep.trace.controls.size() + 1 == rep.trace.poses.size()) {
    rep.trace.controls.push_back(Control{0.0, 0.0});
  }
  rep.trace.boundary_flag = rep.boundary_exit;
  const double n = static_cast<double>(visited);
  rep.mean_roll = sr / n;
  rep.mean_pitch = sp / n;
  rep.var_roll = std::max(0.0, sr2 / n - rep.mean_roll * rep.mean_roll);
  rep.var_pitch = std::max(0.0, sp2 / n - rep.mean_pitch * rep.mean_pitch);
  return rep;
}

std::string navigation_line(const NavigationReport& r, const std::string& tag) {
  std::ostringstream os;
  os << std::setprecision(10) << tag << ',' << (r.success ? 1 : 0) << ',' << r.time << ',' << r.steps
     << ',' << r.mean_roll << ',' << r.var_roll << ',' << r.mean_pitch << ',' << r.var_pitch << ','
     << r.refits;
  return os.str();
}

}  // namespace kinofe
