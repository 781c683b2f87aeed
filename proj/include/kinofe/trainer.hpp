#pragma once

#include "kinofe/dataset.hpp"
#include "kinofe/encoder.hpp"
#include "kinofe/rollout.hpp"

#include <iosfwd>
#include <random>
#include <vector>

namespace kinofe {

/// Offline training hyperparameters. Defaults are the reference values.
struct TrainConfig {
  int k = 24;
  int hidden = 0;  // 0: floor(64 sqrt(k))
  int depth = 4;
  int envs_per_batch = 5;     // F
  int trajs_per_env = 10;     // N
  int example_trajs = 4;      // N_ex
  int query_trajs = 6;        // N_q
  int rollouts_per_traj = 2;  // S
  int horizon = 8;            // T_pred
  CosineSchedule schedule{1e-3, 1e-5, 1000};
  double lambda = 1e-3;
  double dt = 0.1;
  int example_batch = 256;
  int example_samples_per_env = 0;  // 0: every transition of the example trajectories
  std::uint64_t seed = 0;

  void validate() const;
  Rk4Config rk4() const { return {dt, 1}; }
  int hidden_width() const { return hidden > 0 ? hidden : hidden_width_for(k); }
};

struct RolloutLossReport {
  double total = 0.0;
  VecX per_step;  // summed over windows, length T_pred
  Vec6 per_dim = Vec6::Zero();
  std::int64_t step = 0;
  double lr = 0.0;
  std::int64_t windows = 0;
};

/// Sum_t ||pred_t - gt_t||^2 with angle residuals wrapped before squaring.
RolloutLossReport multistep_loss(std::span<const PoseState> predicted,
                                 std::span<const PoseState> ground_truth);

/// Autoregressive prediction of one window with fixed coefficients.
std::vector<PoseState> rollout(const BasisSet& basis, const VecX& alpha, const RolloutWindow& window);

StepPredictor basis_predictor(const BasisSet& basis, const VecX& alpha);

/// Selection for one environment within a training batch.
struct EnvBatch {
  const EnvironmentData* env = nullptr;
  std::uint64_t seed = 0;  // drives this environment's draws
  std::vector<std::size_t> examples;
  std::vector<std::size_t> queries;
  std::vector<std::pair<std::size_t, std::size_t>> windows;  // (trajectory, start)
};

/// Draws F environments, then per environment N trajectories (first N_ex are
/// examples) and S window starts per query trajectory. Throws before any draw
/// if the dataset cannot supply a batch.
std::vector<EnvBatch> sample_batch(const Dataset& data, const TrainConfig& cfg, std::mt19937_64& rng);

/// Per-environment draws from a fixed seed; used by sample_batch.
EnvBatch sample_env(const EnvironmentData& env, std::uint64_t seed, const TrainConfig& cfg);

/// Coefficients from the example trajectories of one batch entry.
CoefficientVector fit_alpha(const BasisSet& basis, const EnvBatch& batch, const TrainConfig& cfg);

/// Multi-step rollout loss over all windows with per-window coefficients
/// (column j of `alphas`), and its gradient w.r.t. every basis network.
/// Coefficients are treated as constants.
RolloutLossReport rollout_loss_and_grad(const BasisSet& basis, std::span<const RolloutWindow> windows,
                                        const MatX& alphas, std::vector<VecX>* grads);

/// Full loss/gradient for a drawn batch: fits alpha per environment, then
/// rolls out every query window.
RolloutLossReport batch_loss_and_grad(const BasisSet& basis, std::span<const EnvBatch> batch,
                                      const TrainConfig& cfg, std::vector<VecX>* grads);

/// One optimizer step of the multi-step training loop.
RolloutLossReport train_step(BasisSet& basis, const Dataset& data, const TrainConfig& cfg,
                             std::mt19937_64& rng, std::vector<AdamState<double>>& opt,
                             std::int64_t step);

/// Owns the basis, optimizer state and random stream of a training run.
class Trainer {
 public:
  Trainer(BasisSet basis, TrainConfig cfg);
  explicit Trainer(TrainConfig cfg);

  RolloutLossReport step(const Dataset& data);

  const BasisSet& basis() const { return basis_; }
  const TrainConfig& config() const { return cfg_; }
  std::int64_t steps_done() const { return step_; }

  /// Basis, optimizer moments, step counter and random stream; resuming from
  /// it continues bit-identically.
  void save(std::ostream& os) const;
  static Trainer load(std::istream& is, const TrainConfig& cfg);

 private:
  BasisSet basis_;
  TrainConfig cfg_;
  std::vector<AdamState<double>> opt_;
  std::mt19937_64 rng_;
  std::int64_t step_ = 0;
};

/// "step,lr,total,x,y,z,roll,pitch,yaw" line for the metrics log.
std::string metrics_line(const RolloutLossReport& r, const std::string& tag = "");
inline constexpr const char* kMetricsHeader = "tag,step,lr,total,x,y,z,roll,pitch,yaw";

}  // namespace kinofe
