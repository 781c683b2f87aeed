#pragma once

#include "kinofe/encoder.hpp"
#include "kinofe/trainer.hpp"

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>

namespace kinofe {

enum class BaselineKind : std::uint8_t { MlpLastLayer = 0, FoMaml = 1, NodeFinetune = 2 };

std::string to_string(BaselineKind kind);
/// Accepts "mlp", "maml" and "node".
BaselineKind parse_baseline_kind(std::string_view name);

struct AdaptBudget {
  int steps = 0;
  double lr = 0.0;
};

/// Reference gradient budgets: 40000 @ 5e-3, 20000 @ 5e-3, 500 @ 1e-3.
AdaptBudget default_budget(BaselineKind kind);

/// A single network used either directly (one-step MLP) or as an RK4-integrated
/// derivative field.
struct BaselineModel {
  BaselineKind kind = BaselineKind::MlpLastLayer;
  Net net;
  Rk4Config rk4;

  bool integrated() const { return kind == BaselineKind::NodeFinetune; }
  MatX predict(const Eigen::Ref<const MatX>& inputs, const Eigen::Ref<const MatX>& controls) const;
  /// First parameter index adaptation may change; everything before it is frozen.
  Eigen::Index trainable_offset() const;
  bool operator==(const BaselineModel& o) const {
    return kind == o.kind && net == o.net && rk4.dt == o.rk4.dt && rk4.substeps == o.rk4.substeps;
  }
};

/// One-step predictor holding its own copy of the model.
StepPredictor baseline_predictor(BaselineModel model);

BaselineModel make_baseline(BaselineKind kind, int hidden, int depth, std::mt19937_64& rng,
                            Rk4Config rk4 = {});

/// Mean over all 6B entries of the squared one-step error. Adds the gradient
/// w.r.t. the network parameters into `grad` when given.
double one_step_loss(const BaselineModel& model, const SampleMatrices& batch, VecX* grad = nullptr,
                     Vec6* per_dim = nullptr);

/// Loss and gradient at theta.
using LossGrad = std::function<double(const VecX& theta, VecX* grad)>;

/// First-order MAML outer gradient: `inner_steps` plain gradient steps on the
/// example loss, then the query gradient at the adapted point. No second
/// derivatives. Returns the query loss at the adapted point.
double fomaml_gradient(const LossGrad& example, const LossGrad& query, const VecX& theta,
                       double inner_lr, int inner_steps, VecX& grad);

struct PretrainConfig {
  TrainConfig train;     // batch shape, schedule, seed, hidden width
  int steps = 1000;
  double inner_lr = 1e-2;   // FoMaml inner step
  int samples_per_env = 256;  // per split; 0 keeps every transition
};

/// Samples of one drawn environment, split into example and query sets.
struct EnvSamples {
  SampleMatrices examples;
  SampleMatrices queries;
};

EnvSamples collect_env_samples(const EnvBatch& batch, int samples_per_env);

/// Mean over environments of the pretraining objective and its gradient.
/// MlpLastLayer and NodeFinetune pool examples and queries; FoMaml adapts on the
/// examples and scores the queries.
RolloutLossReport pretrain_loss_and_grad(const BaselineModel& model, std::span<const EnvSamples> envs,
                                         const PretrainConfig& cfg, VecX& grad);

using StepCallback = std::function<void(const RolloutLossReport&)>;

BaselineModel pretrain(BaselineKind kind, const Dataset& data, const PretrainConfig& cfg,
                       const StepCallback& on_step = {});

struct AdaptOptions {
  AdaptBudget budget;
  bool early_stop = true;
  int stop_window = 100;
  double stop_tolerance = 1e-5;
};

AdaptOptions default_adapt_options(BaselineKind kind);

struct BaselineAdaptReport {
  BaselineModel model;  // best parameters seen
  double seconds = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps_run = 0;
  bool diverged = false;
  std::string message;
};

/// Adam on the one-step buffer MSE over the kind's budget. Only trainable
/// parameters move. A non-finite loss stops the run and flags divergence.
BaselineAdaptReport adapt_baseline(const BaselineModel& model, std::span<const ConditionedSample> buffer,
                                   const AdaptOptions& options);

void write_baseline(std::ostream& os, const BaselineModel& model);
BaselineModel read_baseline(std::istream& is);

}  // namespace kinofe
