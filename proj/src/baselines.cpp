#include "kinofe/baselines.hpp"

#include "kinofe/detail/binio.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace kinofe {

namespace {

constexpr std::string_view kBaselineMagic{"KFEBASE\x01", 8};
constexpr std::uint32_t kBaselineVersion = 1;

std::vector<ConditionedSample> gather(const EnvironmentData& env,
                                      std::span<const std::size_t> trajectories, int cap,
                                      std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> refs;
  for (std::size_t t : trajectories) {
    const auto& tr = env.trajectories[t];
    for (std::size_t i = 0; i + 1 < tr.size(); ++i) refs.emplace_back(t, i);
  }
  if (cap > 0 && refs.size() > static_cast<std::size_t>(cap)) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> idx(refs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (int i = 0; i < cap; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    std::vector<std::pair<std::size_t, std::size_t>> kept;
    for (std::size_t i : idx) kept.push_back(refs[i]);
    refs = std::move(kept);
  }
  std::vector<ConditionedSample> out;
  out.reserve(refs.size());
  for (auto [t, i] : refs) out.push_back(env.trajectories[t].sample(i));
  return out;
}

SampleMatrices concat(const SampleMatrices& a, const SampleMatrices& b) {
  SampleMatrices m;
  m.inputs.resize(kInputDim, a.size() + b.size());
  m.controls.resize(kControlDim, a.size() + b.size());
  m.targets.resize(kStateDim, a.size() + b.size());
  m.inputs << a.inputs, b.inputs;
  m.controls << a.controls, b.controls;
  m.targets << a.targets, b.targets;
  return m;
}

LossGrad loss_at(const BaselineModel& model, const SampleMatrices& batch) {
  return [&model, &batch](const VecX& theta, VecX* grad) {
    BaselineModel m = model;
    m.net.params() = theta;
    if (grad) *grad = VecX::Zero(theta.size());
    return one_step_loss(m, batch, grad);
  };
}

}  // namespace

std::string to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::MlpLastLayer: return "mlp";
    case BaselineKind::FoMaml: return "maml";
    case BaselineKind::NodeFinetune: return "node";
  }
  return "?";
}

BaselineKind parse_baseline_kind(std::string_view name) {
  if (name == "mlp") return BaselineKind::MlpLastLayer;
  if (name == "maml") return BaselineKind::FoMaml;
  if (name == "node") return BaselineKind::NodeFinetune;
  throw InvalidArgument("unknown baseline '" + std::string(name) + "' (expected mlp, maml or node)");
}

AdaptBudget default_budget(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::MlpLastLayer: return {40000, 5e-3};
    case BaselineKind::FoMaml: return {20000, 5e-3};
    case BaselineKind::NodeFinetune: return {500, 1e-3};
  }
  throw InvalidArgument("default_budget: unknown kind");
}

AdaptOptions default_adapt_options(BaselineKind kind) {
  AdaptOptions o;
  o.budget = default_budget(kind);
  return o;
}

MatX BaselineModel::predict(const Eigen::Ref<const MatX>& inputs,
                            const Eigen::Ref<const MatX>& controls) const {
  if (integrated()) return rk4_net<double>(net, inputs, controls, rk4);
  return net.forward(detail::stack_input<double>(inputs, controls));
}

Eigen::Index BaselineModel::trainable_offset() const {
  if (kind == BaselineKind::MlpLastLayer) return net.weight_offset(net.num_layers() - 1);
  return 0;
}

StepPredictor baseline_predictor(BaselineModel model) {
  return [m = std::move(model)](const MatX& in, const MatX& u) { return m.predict(in, u); };
}

BaselineModel make_baseline(BaselineKind kind, int hidden, int depth, std::mt19937_64& rng,
                            Rk4Config rk4) {
  if (hidden < 1) throw InvalidArgument("make_baseline: hidden width must be positive");
  rk4.validate();
  return BaselineModel{kind, Net::he_uniform(basis_layer_sizes(hidden, depth), rng), rk4};
}

double one_step_loss(const BaselineModel& model, const SampleMatrices& batch, VecX* grad,
                     Vec6* per_dim) {
  const Eigen::Index b = batch.size();
  if (b == 0) throw InvalidArgument("one_step_loss: empty batch");
  if (batch.targets.rows() != kStateDim || batch.targets.cols() != b) {
    throw InvalidArgument("one_step_loss: targets must be 6 x B");
  }
  if (grad && grad->size() != model.net.param_count()) {
    throw InvalidArgument("one_step_loss: gradient buffer has wrong size");
  }
  const double scale = 1.0 / static_cast<double>(kStateDim * b);
  MatX err;
  Rk4Tape<double> tape;
  Net::Cache cache;
  if (model.integrated()) {
    err = grad ? rk4_net<double>(model.net, batch.inputs, batch.controls, model.rk4, tape)
               : rk4_net<double>(model.net, batch.inputs, batch.controls, model.rk4);
  } else {
    err = model.net.forward(detail::stack_input<double>(batch.inputs, batch.controls), cache);
  }
  err -= batch.targets;
  if (per_dim) *per_dim = err.array().square().rowwise().sum() * scale;
  const double loss = err.squaredNorm() * scale;
  if (grad) {
    const MatX upstream = (2.0 * scale) * err;
    if (model.integrated()) {
      rk4_net_backward<double>(model.net, tape, upstream, model.rk4, *grad);
    } else {
      model.net.backward(cache, upstream, *grad);
    }
  }
  return loss;
}

double fomaml_gradient(const LossGrad& example, const LossGrad& query, const VecX& theta,
                       double inner_lr, int inner_steps, VecX& grad) {
  if (inner_steps < 0) throw InvalidArgument("fomaml_gradient: inner_steps must be >= 0");
  VecX adapted = theta;
  VecX g(theta.size());
  for (int s = 0; s < inner_steps && inner_lr != 0.0; ++s) {
    example(adapted, &g);
    adapted -= inner_lr * g;
  }
  return query(adapted, &grad);
}

EnvSamples collect_env_samples(const EnvBatch& batch, int samples_per_env) {
  if (!batch.env) throw InvalidArgument("collect_env_samples: batch has no environment");
  const auto ex = gather(*batch.env, batch.examples, samples_per_env, batch.seed ^ 0x243f6a8885a308d3ULL);
  const auto q = gather(*batch.env, batch.queries, samples_per_env, batch.seed ^ 0x13198a2e03707344ULL);
  if (ex.empty() || q.empty()) throw InvalidArgument("collect_env_samples: no transitions");
  return {pack_samples(ex), pack_samples(q)};
}

RolloutLossReport pretrain_loss_and_grad(const BaselineModel& model, std::span<const EnvSamples> envs,
                                         const PretrainConfig& cfg, VecX& grad) {
  if (envs.empty()) throw InvalidArgument("pretrain_loss_and_grad: no environments");
  grad = VecX::Zero(model.net.param_count());
  RolloutLossReport r;
  VecX g(grad.size());
  const double w = 1.0 / static_cast<double>(envs.size());
  for (const auto& e : envs) {
    double loss = 0.0;
    Vec6 per_dim;
    if (model.kind == BaselineKind::FoMaml) {
      loss = fomaml_gradient(loss_at(model, e.examples), loss_at(model, e.queries), model.net.params(),
                             cfg.inner_lr, 1, g);
      per_dim.setConstant(loss / kStateDim);
    } else {
      g.setZero();
      loss = one_step_loss(model, concat(e.examples, e.queries), &g, &per_dim);
    }
    grad += w * g;
    r.total += w * loss;
    r.per_dim += w * per_dim;
  }
  r.per_step = VecX::Constant(1, r.total);
  r.windows = static_cast<std::int64_t>(envs.size());
  return r;
}

BaselineModel pretrain(BaselineKind kind, const Dataset& data, const PretrainConfig& cfg,
                       const StepCallback& on_step) {
  cfg.train.validate();
  if (cfg.steps < 0) throw InvalidArgument("pretrain: steps must be >= 0");
  std::mt19937_64 init(cfg.train.seed ^ 0x5bd1e995ULL);
  BaselineModel model =
      make_baseline(kind, cfg.train.hidden_width(), cfg.train.depth, init, cfg.train.rk4());
  std::mt19937_64 rng(cfg.train.seed);
  AdamState<double> opt;
  VecX grad;
  for (int step = 0; step < cfg.steps; ++step) {
    const auto batch = sample_batch(data, cfg.train, rng);
    std::vector<EnvSamples> envs;
    envs.reserve(batch.size());
    for (const auto& b : batch) envs.push_back(collect_env_samples(b, cfg.samples_per_env));
    auto report = pretrain_loss_and_grad(model, envs, cfg, grad);
    report.step = step;
    report.lr = lr_at(cfg.train.schedule, step);
    adam_step<double>(model.net.params(), grad, opt, report.lr);
    if (on_step) on_step(report);
  }
  return model;
}

BaselineAdaptReport adapt_baseline(const BaselineModel& model, std::span<const ConditionedSample> buffer,
                                   const AdaptOptions& options) {
  if (buffer.empty()) throw InvalidArgument("adapt_baseline: empty buffer");
  if (options.budget.steps < 0 || !(options.budget.lr >= 0.0)) {
    throw InvalidArgument("adapt_baseline: budget must be non-negative");
  }
  const auto start = std::chrono::steady_clock::now();
  const SampleMatrices batch = pack_samples(buffer);
  BaselineAdaptReport rep;
  BaselineModel current = model;
  const Eigen::Index off = current.trainable_offset();
  const Eigen::Index n = current.net.param_count() - off;
  VecX best = current.net.params();
  VecX grad(current.net.param_count());
  AdamState<double> opt;
  std::vector<double> history;
  double best_loss = std::numeric_limits<double>::infinity();
  bool first = true;
  for (int step = 0; step <= options.budget.steps; ++step) {
    grad.setZero();
    const bool last = step == options.budget.steps;
    const double loss = one_step_loss(current, batch, last ? nullptr : &grad);
    if (first) {
      rep.initial_loss = loss;
      first = false;
    }
    if (!std::isfinite(loss)) {
      rep.diverged = true;
      rep.message = "loss became non-finite at step " + std::to_string(step);
      break;
    }
    if (loss < best_loss) {
      best_loss = loss;
      best = current.net.params();
    }
    if (last) break;
    history.push_back(loss);
    if (options.early_stop && step >= options.stop_window) {
      const double before = history[history.size() - 1 - options.stop_window];
      if (before > 0.0 && (before - loss) / before < options.stop_tolerance) break;
    }
    try {
      adam_step<double>(current.net.params().tail(n), grad.tail(n), opt, options.budget.lr);
    } catch (const NumericalError& e) {
      rep.diverged = true;
      rep.message = e.what();
      break;
    }
    rep.steps_run = step + 1;
  }
  current.net.params() = best;
  rep.model = std::move(current);
  rep.final_loss = best_loss;
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

void write_baseline(std::ostream& os, const BaselineModel& model) {
  detail::write_bytes(os, kBaselineMagic.data(), kBaselineMagic.size());
  detail::write_pod(os, kBaselineVersion);
  detail::write_pod(os, static_cast<std::uint8_t>(model.kind));
  detail::write_pod(os, model.rk4.dt);
  detail::write_pod(os, static_cast<std::int32_t>(model.rk4.substeps));
  write_checkpoint(os, model.net);
  if (!os) throw FormatError("write_baseline: write failed");
}

BaselineModel read_baseline(std::istream& is) {
  detail::expect_magic(is, kBaselineMagic);
  const auto version = detail::read_pod<std::uint32_t>(is, "baseline version");
  if (version != kBaselineVersion) {
    throw FormatError("baseline checkpoint: unsupported version " + std::to_string(version));
  }
  const auto kind = detail::read_pod<std::uint8_t>(is, "baseline kind");
  if (kind > 2) throw FormatError("baseline checkpoint: unknown kind " + std::to_string(kind));
  BaselineModel m;
  m.kind = static_cast<BaselineKind>(kind);
  m.rk4.dt = detail::read_pod<double>(is, "rk4 dt");
  m.rk4.substeps = detail::read_pod<std::int32_t>(is, "rk4 substeps");
  m.rk4.validate();
  m.net = read_checkpoint<double>(is);
  if (m.net.input_dim() != kNetInputDim || m.net.output_dim() != kStateDim) {
    throw FormatError("baseline checkpoint: network must map 24 -> 6");
  }
  return m;
}

}  // namespace kinofe
