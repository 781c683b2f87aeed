#pragma once

#include "kinofe/config.hpp"
#include "kinofe/dataset.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace kinofe {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2, kExitPartial = 3 };

struct Ablation {
  bool drop_elevation = false;
  bool drop_semantic = false;

  bool any() const { return drop_elevation || drop_semantic; }
  /// "", "wo-elev", "wo-sem" or "wo-both".
  std::string suffix() const;
};

/// Accepts "none", "semantic", "elevation" and "both".
Ablation parse_ablation(std::string_view name);

/// Everything cmd_generate writes, loaded back and checksum-verified.
struct DatasetBundle {
  std::string dir;
  std::vector<EnvironmentSpec> specs;
  Dataset data;  // same order as specs
  EmbeddingPipeline pipeline;
  std::uint64_t manifest_checksum = 0;
  std::vector<std::size_t> held_out;  // indices of the last environment of each level

  Dataset training() const;
};

DatasetBundle load_dataset(const std::string& dir);

/// Basis/checkpoint file names under a checkpoint directory.
std::string method_tag(const std::string& method, const Ablation& ablation);

struct CommandOptions {
  std::string dataset_dir;
  std::string checkpoint_dir;
  std::string out_dir;
  std::string method = "va";
  Ablation ablation;
  std::optional<AdaptMode> adapt_mode;
  bool overwrite = false;
  bool resume = false;
  std::ostream* log = nullptr;
};

int cmd_generate(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_train(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_evaluate(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_navigate(const ExperimentConfig& cfg, const CommandOptions& opt);
int cmd_adapt_bench(const ExperimentConfig& cfg, const CommandOptions& opt);

/// Example/evaluation split of a held-out environment: the first half of the
/// trajectories supply the adaptation buffer, the rest are scored.
struct HeldOutSplit {
  std::vector<ConditionedSample> buffer;
  std::vector<ConditionedSample> eval_samples;
  std::vector<RolloutWindow> windows;  // longest horizon
};

HeldOutSplit split_held_out(const EnvironmentData& env, int buffer_size, int windows, int horizon,
                            std::uint64_t seed);

/// Mean squared one-step error per dimension.
Vec6 one_step_mse(const StepPredictor& model, std::span<const ConditionedSample> samples);

/// Mean squared (angle-wrapped) rollout error at each requested horizon.
std::vector<double> horizon_mse(const StepPredictor& model, std::span<const RolloutWindow> windows,
                                std::span<const int> horizons);

}  // namespace kinofe
