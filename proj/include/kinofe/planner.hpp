#pragma once

#include "kinofe/embeddings.hpp"
#include "kinofe/encoder.hpp"
#include "kinofe/rollout.hpp"
#include "kinofe/world.hpp"

#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace kinofe {

/// World-frame transition for K candidates at planning step t:
/// poses 6xK, controls 2xK -> next poses 6xK.
using ForwardModel = std::function<MatX(int t, const MatX& poses, const MatX& controls)>;

/// step_ground_truth applied column-wise.
ForwardModel ground_truth_model(const EnvironmentSpec& env, const WorldConfig& cfg = {});

/// A learned body-frame predictor with embeddings looked up at the predicted
/// poses, refreshed every `embed_stride` planning steps and held in between.
ForwardModel learned_model(StepPredictor predictor, EmbeddingProvider embed, int embed_stride = 5);

struct CostWeights {
  double goal = 1.0;      // per-step planar distance to goal
  double attitude = 2.0;  // per-step roll^2 + pitch^2
  double boundary = std::numeric_limits<double>::infinity();  // per step outside the bounds
};

struct MppiConfig {
  int horizon = 20;
  int samples = 256;
  double temperature = 0.5;
  double steer_noise = 0.4;
  double speed_noise = 0.8;
  double v_max = kMaxSpeed;
  double goal_radius = 1.0;  // no distance cost once inside
  CostWeights weights;
  // Square region in which candidate poses are allowed.
  double bound_lo = -std::numeric_limits<double>::infinity();
  double bound_hi = std::numeric_limits<double>::infinity();

  void validate() const;
};

struct MppiResult {
  Control control;
  bool all_infinite = false;
  double min_cost = 0.0;
  std::vector<Control> nominal;  // updated sequence, length H
};

/// One MPPI iteration around `nominal` (length H, clipped to bounds).
MppiResult mppi_plan(const ForwardModel& model, const PoseState& pose, const Vec2& goal,
                     std::span<const Control> nominal, const MppiConfig& cfg, std::mt19937_64& rng);

/// Warm-started MPPI: the nominal sequence is shifted by one step after each call.
class MppiPlanner {
 public:
  MppiPlanner(MppiConfig cfg, std::uint64_t seed);

  MppiResult plan(const ForwardModel& model, const PoseState& pose, const Vec2& goal);
  const std::vector<Control>& nominal() const { return nominal_; }

 private:
  MppiConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<Control> nominal_;
};

enum class AdaptMode : std::uint8_t { Once = 0, Periodic = 1 };
std::string to_string(AdaptMode m);
AdaptMode parse_adapt_mode(std::string_view name);

struct AdaptationPolicy {
  AdaptMode mode = AdaptMode::Once;
  double period = 5.0;  // seconds
  int capacity = 512;   // buffer size M
  double lambda = 1e-3;

  void validate() const;
};

/// Fixed-capacity FIFO of experienced transitions.
class AdaptationBuffer {
 public:
  explicit AdaptationBuffer(int capacity);
  void push(const ConditionedSample& s);
  std::size_t size() const { return data_.size(); }
  int capacity() const { return capacity_; }
  /// The most recent n samples, oldest first.
  std::vector<ConditionedSample> recent(std::size_t n) const;
  const ConditionedSample& oldest() const { return data_.at(head_); }

 private:
  int capacity_;
  std::vector<ConditionedSample> data_;
  std::size_t head_ = 0;
};

/// What drives the planner's predictions. With a basis the coefficients may be
/// re-fitted online; otherwise `fixed` is used as is.
struct NavigationModel {
  ForwardModel fixed;
  const BasisSet* basis = nullptr;
  VecX alpha;
  EmbeddingProvider embed;  // perception; required with a basis
  int embed_stride = 5;
};

struct NavigationConfig {
  MppiConfig mppi;
  WorldConfig world;
  double timeout = 60.0;  // seconds
  std::uint64_t seed = 0;
  bool keep_trace = false;
};

struct NavigationReport {
  bool success = false;
  bool boundary_exit = false;
  bool timed_out = false;
  double time = 0.0;
  int steps = 0;
  double mean_roll = 0.0;
  double var_roll = 0.0;
  double mean_pitch = 0.0;
  double var_pitch = 0.0;
  int refits = 0;
  double max_refit_seconds = 0.0;
  int planner_failures = 0;
  Trajectory trace;
};

/// Closed loop at 1/dt Hz against step_ground_truth until the goal radius is
/// reached, the vehicle leaves the map, or the timeout expires.
NavigationReport run_navigation(const EnvironmentSpec& env, const PoseState& start, const Vec2& goal,
                                NavigationModel model, const AdaptationPolicy& policy,
                                const NavigationConfig& cfg);

/// distance / (v_max * s) with s the terrain factor at the start.
double kinematic_time_bound(const EnvironmentSpec& env, const PoseState& start, const Vec2& goal,
                            const WorldConfig& cfg = {});

/// "tag,success,time,steps,mean_roll,var_roll,mean_pitch,var_pitch,refits"
std::string navigation_line(const NavigationReport& r, const std::string& tag);
inline constexpr const char* kNavigationHeader =
    "tag,success,time,steps,mean_roll,var_roll,mean_pitch,var_pitch,refits";

}  // namespace kinofe
