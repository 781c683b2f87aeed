#pragma once

#include "kinofe/baselines.hpp"
#include "kinofe/embeddings.hpp"
#include "kinofe/planner.hpp"
#include "kinofe/trainer.hpp"
#include "kinofe/world.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace kinofe {

/// Malformed or inconsistent configuration; the message names the offending key.
class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct DatasetConfig {
  std::vector<ElevationLevel> levels{ElevationLevel::Low, ElevationLevel::Medium, ElevationLevel::High};
  int envs_per_level = 4;
  int trajectories_per_env = 20;
  double duration = 30.0;  // seconds per exploration trajectory
  bool flat = false;       // single-class flat maps with varied hidden traction
  int flat_class = 6;
};

struct EmbeddingConfig {
  EmbeddingMode mode = EmbeddingMode::Handcrafted;
  int patch_stride = 2;    // handcrafted only; SWAE always reads full patches
  int swae_patches = 2000;
  SwaeConfig swae;
};

struct EncoderConfig {
  double lambda = 1e-3;
  int batch = 256;
  int adapt_samples = 256;  // M: transitions used to adapt on a held-out environment
};

struct TrainerSection {
  TrainConfig train;  // seed is derived from the master seed
  int steps = 1000;
  int checkpoint_every = 100;
};

struct BaselineSection {
  int steps = 1000;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  double inner_lr = 1e-2;
  int samples_per_env = 256;
  AdaptBudget mlp = default_budget(BaselineKind::MlpLastLayer);
  AdaptBudget maml = default_budget(BaselineKind::FoMaml);
  AdaptBudget node = default_budget(BaselineKind::NodeFinetune);
  bool early_stop = true;

  AdaptBudget budget(BaselineKind kind) const;
};

struct EvaluationConfig {
  std::vector<int> horizons{1, 8, 16, 32, 64};
  int windows_per_env = 32;
};

struct NavigationSection {
  MppiConfig mppi;
  AdaptationPolicy policy;
  int trials = 5;
  double mission_length = 20.0;
  double timeout = 60.0;
  int embed_stride = 5;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  WorldConfig world;
  DatasetConfig dataset;
  EmbeddingConfig embeddings;
  EncoderConfig encoder;
  TrainerSection trainer;
  BaselineSection baselines;
  EvaluationConfig evaluation;
  NavigationSection planner;

  void validate() const;
};

/// Desk-scale defaults: 8 basis functions of width 64 and capped example sets.
ExperimentConfig desk_config();

std::string to_json_text(const ExperimentConfig& cfg);
/// Parses JSON text; absent keys keep desk defaults, unknown keys are rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& cfg);

/// KINOFE_SEED and KINOFE_OUTPUT_DIR override the top-level keys.
inline constexpr const char* kEnvPrefix = "KINOFE_";
void apply_env_overrides(ExperimentConfig& cfg);

/// Independent stream seed for a named component.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);

}  // namespace kinofe
