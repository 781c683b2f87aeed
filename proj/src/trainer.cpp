#include "kinofe/trainer.hpp"

#include "kinofe/detail/binio.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace kinofe {

namespace {

constexpr std::string_view kTrainerMagic{"KFETRAIN", 8};
constexpr std::uint32_t kTrainerVersion = 1;

Vec6 residual(const PoseState& pred, const PoseState& gt) {
  return wrap_angles(pred.vec() - gt.vec());
}

// Partial Fisher-Yates: the first n entries of [0, count) in random order.
std::vector<std::size_t> draw_without_replacement(std::size_t count, std::size_t n,
                                                  std::mt19937_64& rng) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, count - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  return idx;
}

bool usable(const Trajectory& t, int horizon) {
  return t.has_embeddings() && t.size() >= static_cast<std::size_t>(horizon) + 1;
}

std::vector<std::size_t> usable_trajectories(const EnvironmentData& env, int horizon) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < env.trajectories.size(); ++i) {
    if (usable(env.trajectories[i], horizon)) out.push_back(i);
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (k < 1 || depth < 1 || envs_per_batch < 1 || trajs_per_env < 1 || example_trajs < 1 ||
      query_trajs < 1 || rollouts_per_traj < 1 || horizon < 1 || example_batch < 1 ||
      example_samples_per_env < 0 || hidden < 0) {
    throw InvalidArgument("TrainConfig: counts must be positive");
  }
  if (example_trajs + query_trajs != trajs_per_env) {
    throw InvalidArgument("TrainConfig: example + query trajectories must equal trajectories per env");
  }
  if (!(lambda > 0.0) || !(dt > 0.0) || !(schedule.lr_start > 0.0) || !(schedule.lr_end > 0.0) ||
      schedule.total_steps < 1) {
    throw InvalidArgument("TrainConfig: lambda, dt and learning rates must be positive");
  }
}

RolloutLossReport multistep_loss(std::span<const PoseState> predicted,
                                 std::span<const PoseState> ground_truth) {
  if (predicted.size() != ground_truth.size()) {
    throw InvalidArgument("multistep_loss: sequences differ in length (" +
                          std::to_string(predicted.size()) + " vs " +
                          std::to_string(ground_truth.size()) + ")");
  }
  RolloutLossReport r;
  r.per_step = VecX::Zero(static_cast<Eigen::Index>(predicted.size()));
  r.windows = 1;
  for (std::size_t t = 0; t < predicted.size(); ++t) {
    const Vec6 e = residual(predicted[t], ground_truth[t]);
    const Vec6 sq = e.array().square();
    r.per_dim += sq;
    r.per_step[static_cast<Eigen::Index>(t)] = sq.sum();
  }
  r.total = r.per_step.sum();
  return r;
}

StepPredictor basis_predictor(const BasisSet& basis, const VecX& alpha) {
  if (alpha.size() != basis.k()) throw InvalidArgument("basis_predictor: alpha has wrong length");
  return [&basis, alpha](const MatX& inputs, const MatX& controls) {
    return predict(basis, alpha, inputs, controls);
  };
}

std::vector<PoseState> rollout(const BasisSet& basis, const VecX& alpha, const RolloutWindow& window) {
  if (window.e_elev.size() != window.controls.size() || window.e_sem.size() != window.controls.size()) {
    throw InvalidArgument("rollout: window embeddings do not match its controls");
  }
  const RolloutWindow* w = &window;
  return rollout_batch(basis_predictor(basis, alpha), std::span(w, 1)).front();
}

EnvBatch sample_env(const EnvironmentData& env, std::uint64_t seed, const TrainConfig& cfg) {
  const auto pool = usable_trajectories(env, cfg.horizon);
  if (pool.size() < static_cast<std::size_t>(cfg.trajs_per_env)) {
    throw InvalidArgument("insufficient data: environment " + env.id + " has " +
                          std::to_string(pool.size()) + " usable trajectories, need " +
                          std::to_string(cfg.trajs_per_env));
  }
  EnvBatch b;
  b.env = &env;
  b.seed = seed;
  std::mt19937_64 rng(seed);
  const auto picked = draw_without_replacement(pool.size(), cfg.trajs_per_env, rng);
  for (int i = 0; i < cfg.trajs_per_env; ++i) {
    (i < cfg.example_trajs ? b.examples : b.queries).push_back(pool[picked[i]]);
  }
  for (std::size_t q : b.queries) {
    const std::size_t starts = env.trajectories[q].size() - cfg.horizon;
    const std::size_t n = std::min<std::size_t>(starts, cfg.rollouts_per_traj);
    for (std::size_t s : draw_without_replacement(starts, n, rng)) b.windows.emplace_back(q, s);
  }
  return b;
}

std::vector<EnvBatch> sample_batch(const Dataset& data, const TrainConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  std::vector<std::size_t> eligible;
  for (std::size_t e = 0; e < data.envs.size(); ++e) {
    if (usable_trajectories(data.envs[e], cfg.horizon).size() >=
        static_cast<std::size_t>(cfg.trajs_per_env)) {
      eligible.push_back(e);
    }
  }
  if (eligible.size() < static_cast<std::size_t>(cfg.envs_per_batch)) {
    throw InvalidArgument("insufficient data: " + std::to_string(eligible.size()) +
                          " environments have at least " + std::to_string(cfg.trajs_per_env) +
                          " trajectories of length >= " + std::to_string(cfg.horizon + 1) +
                          ", need " + std::to_string(cfg.envs_per_batch));
  }
  const auto picked = draw_without_replacement(eligible.size(), cfg.envs_per_batch, rng);
  std::vector<std::uint64_t> seeds(picked.size());
  for (auto& s : seeds) s = rng();
  std::vector<EnvBatch> out;
  for (std::size_t i = 0; i < picked.size(); ++i) {
    out.push_back(sample_env(data.envs[eligible[picked[i]]], seeds[i], cfg));
  }
  return out;
}

CoefficientVector fit_alpha(const BasisSet& basis, const EnvBatch& batch, const TrainConfig& cfg) {
  if (!batch.env) throw InvalidArgument("fit_alpha: batch has no environment");
  std::vector<std::pair<std::size_t, std::size_t>> transitions;
  for (std::size_t e : batch.examples) {
    const auto& t = batch.env->trajectories[e];
    for (std::size_t i = 0; i + 1 < t.size(); ++i) transitions.emplace_back(e, i);
  }
  if (transitions.empty()) throw InvalidArgument("fit_alpha: example trajectories have no transitions");
  if (cfg.example_samples_per_env > 0 &&
      transitions.size() > static_cast<std::size_t>(cfg.example_samples_per_env)) {
    // Separate stream so the window draws stay independent of the cap.
    std::mt19937_64 rng(batch.seed ^ 0x9e3779b97f4a7c15ULL);
    auto idx = draw_without_replacement(transitions.size(), cfg.example_samples_per_env, rng);
    std::sort(idx.begin(), idx.end());
    std::vector<std::pair<std::size_t, std::size_t>> kept;
    for (std::size_t i : idx) kept.push_back(transitions[i]);
    transitions = std::move(kept);
  }
  std::vector<ConditionedSample> samples;
  samples.reserve(transitions.size());
  for (auto [e, i] : transitions) samples.push_back(batch.env->trajectories[e].sample(i));
  auto c = adapt(basis, samples, cfg.lambda, cfg.example_batch).coefficients;
  c.source_env = batch.env->id;
  return c;
}

RolloutLossReport rollout_loss_and_grad(const BasisSet& basis, std::span<const RolloutWindow> windows,
                                        const MatX& alphas, std::vector<VecX>* grads) {
  RolloutLossReport report;
  if (windows.empty()) return report;
  const int k = basis.k();
  const auto b = static_cast<Eigen::Index>(windows.size());
  const int horizon = windows.front().horizon();
  if (alphas.rows() != k || alphas.cols() != b) {
    throw InvalidArgument("rollout_loss_and_grad: alphas must be k x windows");
  }
  for (const auto& w : windows) {
    if (w.horizon() != horizon || static_cast<int>(w.truth.size()) != horizon) {
      throw InvalidArgument("rollout_loss_and_grad: windows differ in horizon");
    }
  }
  if (grads) {
    grads->resize(k);
    for (int i = 0; i < k; ++i) {
      if ((*grads)[i].size() != basis.net(i).param_count()) {
        (*grads)[i] = VecX::Zero(basis.net(i).param_count());
      }
    }
  }
  const Rk4Config& rk4 = basis.rk4();

  std::vector<MatX> poses(horizon + 1, MatX(kStateDim, b));
  std::vector<MatX> inputs(horizon), controls(horizon, MatX(kControlDim, b)), deltas(horizon);
  std::vector<MatX> resid(horizon, MatX(kStateDim, b));
  for (Eigen::Index j = 0; j < b; ++j) poses[0].col(j) = windows[j].initial.vec();
  std::vector<Vec8> ee(b), es(b);
  report.per_step = VecX::Zero(horizon);
  for (int t = 0; t < horizon; ++t) {
    for (Eigen::Index j = 0; j < b; ++j) {
      ee[j] = windows[j].e_elev[t];
      es[j] = windows[j].e_sem[t];
      controls[t].col(j) = windows[j].controls[t].vec();
    }
    inputs[t] = assemble_inputs(poses[t], ee, es);
    deltas[t] = MatX::Zero(kStateDim, b);
    for (int i = 0; i < k; ++i) {
      const MatX g = rk4_net<double>(basis.net(i), inputs[t], controls[t], rk4);
      deltas[t] += g * alphas.row(i).asDiagonal();
    }
    poses[t + 1] = compose_poses(poses[t], deltas[t]);
    for (Eigen::Index j = 0; j < b; ++j) {
      resid[t].col(j) = wrap_angles(poses[t + 1].col(j) - windows[j].truth[t].vec());
    }
    const MatX sq = resid[t].array().square();
    report.per_step[t] = sq.sum();
    report.per_dim += sq.rowwise().sum();
  }
  report.total = report.per_step.sum();
  report.windows = b;
  if (!grads) return report;

  // Reverse pass. Angle wrapping has unit derivative almost everywhere.
  MatX d_next = MatX::Zero(kStateDim, b);
  Rk4Tape<double> tape;
  for (int t = horizon - 1; t >= 0; --t) {
    d_next += 2.0 * resid[t];
    MatX d_prev = d_next;
    MatX d_delta = d_next;
    const MatX& p = poses[t];
    const MatX& dl = deltas[t];
    for (Eigen::Index j = 0; j < b; ++j) {
      const double c = std::cos(p(5, j));
      const double s = std::sin(p(5, j));
      const double dx = d_next(0, j);
      const double dy = d_next(1, j);
      d_delta(0, j) = c * dx + s * dy;
      d_delta(1, j) = -s * dx + c * dy;
      d_prev(5, j) += dx * (-s * dl(0, j) - c * dl(1, j)) + dy * (c * dl(0, j) - s * dl(1, j));
    }
    for (int i = 0; i < k; ++i) {
      rk4_net<double>(basis.net(i), inputs[t], controls[t], rk4, tape);
      const MatX upstream = d_delta * alphas.row(i).asDiagonal();
      const MatX d_in = rk4_net_backward<double>(basis.net(i), tape, upstream, rk4, (*grads)[i]);
      d_prev.row(3) += d_in.row(3);
      d_prev.row(4) += d_in.row(4);
    }
    d_next = std::move(d_prev);
  }
  return report;
}

RolloutLossReport batch_loss_and_grad(const BasisSet& basis, std::span<const EnvBatch> batch,
                                      const TrainConfig& cfg, std::vector<VecX>* grads) {
  std::vector<RolloutWindow> windows;
  std::vector<VecX> alpha_cols;
  for (const auto& eb : batch) {
    const VecX alpha = fit_alpha(basis, eb, cfg).alpha;
    for (auto [q, s] : eb.windows) {
      windows.push_back(make_window(eb.env->trajectories[q], s, cfg.horizon));
      alpha_cols.push_back(alpha);
    }
  }
  MatX alphas(basis.k(), static_cast<Eigen::Index>(windows.size()));
  for (std::size_t j = 0; j < alpha_cols.size(); ++j) alphas.col(static_cast<Eigen::Index>(j)) = alpha_cols[j];
  return rollout_loss_and_grad(basis, windows, alphas, grads);
}

RolloutLossReport train_step(BasisSet& basis, const Dataset& data, const TrainConfig& cfg,
                             std::mt19937_64& rng, std::vector<AdamState<double>>& opt,
                             std::int64_t step) {
  // All draws happen before anything is modified so a rejected batch leaves state intact.
  const auto batch = sample_batch(data, cfg, rng);
  std::vector<VecX> grads;
  RolloutLossReport report = batch_loss_and_grad(basis, batch, cfg, &grads);
  const double lr = lr_at(cfg.schedule, step);
  if (opt.size() != static_cast<std::size_t>(basis.k())) opt.resize(basis.k());
  for (int i = 0; i < basis.k(); ++i) {
    adam_step<double>(basis.net(i).params(), grads[i], opt[i], lr);
  }
  report.step = step;
  report.lr = lr;
  return report;
}

Trainer::Trainer(BasisSet basis, TrainConfig cfg)
    : basis_(std::move(basis)), cfg_(cfg), opt_(basis_.k()), rng_(cfg.seed) {
  cfg_.validate();
  if (basis_.k() != cfg_.k) throw InvalidArgument("Trainer: basis size differs from config k");
}

Trainer::Trainer(TrainConfig cfg) : cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  std::mt19937_64 init(cfg_.seed ^ 0x5bd1e995ULL);
  basis_ = BasisSet(cfg_.k, init, cfg_.rk4(), cfg_.hidden_width(), cfg_.depth);
  opt_.resize(cfg_.k);
}

RolloutLossReport Trainer::step(const Dataset& data) {
  auto r = train_step(basis_, data, cfg_, rng_, opt_, step_);
  ++step_;
  return r;
}

void Trainer::save(std::ostream& os) const {
  detail::write_bytes(os, kTrainerMagic.data(), kTrainerMagic.size());
  detail::write_pod(os, kTrainerVersion);
  detail::write_pod(os, static_cast<std::int64_t>(step_));
  write_basis(os, basis_);
  detail::write_pod(os, static_cast<std::uint32_t>(opt_.size()));
  for (const auto& s : opt_) {
    detail::write_pod(os, static_cast<std::int64_t>(s.step));
    detail::write_pod(os, static_cast<std::uint64_t>(s.m.size()));
    detail::write_bytes(os, s.m.data(), sizeof(double) * s.m.size());
    detail::write_bytes(os, s.v.data(), sizeof(double) * s.v.size());
  }
  std::ostringstream rs;
  rs << rng_;
  const std::string text = rs.str();
  detail::write_pod(os, static_cast<std::uint64_t>(text.size()));
  detail::write_bytes(os, text.data(), text.size());
  if (!os) throw FormatError("Trainer::save: write failed");
}

Trainer Trainer::load(std::istream& is, const TrainConfig& cfg) {
  detail::expect_magic(is, kTrainerMagic);
  const auto version = detail::read_pod<std::uint32_t>(is, "trainer version");
  if (version != kTrainerVersion) {
    throw FormatError("trainer checkpoint: unsupported version " + std::to_string(version));
  }
  const auto step = detail::read_pod<std::int64_t>(is, "trainer step");
  Trainer t(read_basis(is), cfg);
  t.step_ = step;
  const auto n = detail::read_pod<std::uint32_t>(is, "optimizer count");
  if (n != static_cast<std::uint32_t>(t.basis_.k())) {
    throw FormatError("trainer checkpoint: optimizer count does not match basis");
  }
  for (auto& s : t.opt_) {
    s.step = detail::read_pod<std::int64_t>(is, "adam step");
    const auto len = detail::read_pod<std::uint64_t>(is, "adam size");
    if (len > (1ULL << 32)) throw FormatError("trainer checkpoint: implausible optimizer size");
    s.m.resize(static_cast<Eigen::Index>(len));
    s.v.resize(static_cast<Eigen::Index>(len));
    detail::read_bytes(is, s.m.data(), sizeof(double) * len, "adam m");
    detail::read_bytes(is, s.v.data(), sizeof(double) * len, "adam v");
  }
  const auto len = detail::read_pod<std::uint64_t>(is, "rng length");
  if (len > (1ULL << 20)) throw FormatError("trainer checkpoint: implausible rng state");
  std::string text(len, '\0');
  detail::read_bytes(is, text.data(), len, "rng state");
  std::istringstream rs(text);
  rs >> t.rng_;
  if (!rs) throw FormatError("trainer checkpoint: bad rng state");
  return t;
}

std::string metrics_line(const RolloutLossReport& r, const std::string& tag) {
  std::ostringstream os;
  os << std::setprecision(10) << (tag.empty() ? "-" : tag) << ',' << r.step << ',' << r.lr << ','
     << r.total;
  for (int d = 0; d < kStateDim; ++d) os << ',' << r.per_dim[d];
  return os.str();
}

}  // namespace kinofe
