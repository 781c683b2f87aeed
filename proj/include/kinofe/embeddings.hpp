#pragma once

#include "kinofe/net.hpp"
#include "kinofe/world.hpp"

#include <functional>
#include <optional>
#include <random>
#include <utility>
#include <vector>

namespace kinofe {

enum class Modality : std::uint8_t { Elevation = 0, Semantic = 1 };

inline constexpr int kPatchPixels = 128;
inline constexpr int kLatentDim = 64;

struct PatchConfig {
  int size = kPatchPixels;  // pixels per side at full resolution
  double resolution = 0.1;  // meters per pixel
  int stride = 1;           // sample every stride-th pixel over the same footprint

  int samples() const { return size / stride; }
  void validate() const;
};

/// Vehicle-aligned raster: row index runs along body +x (forward), column along
/// body +y (left). Pixel (size/2, size/2) sits under the vehicle.
struct TerrainPatch {
  MatX values;
  Modality modality = Modality::Elevation;
  bool padded = false;
};

/// Bilinear resample of the heightfield (minus the surface height under the
/// vehicle) or of the perceived traction channel.
TerrainPatch extract_patch(const EnvironmentSpec& env, const PoseState& pose, Modality modality,
                           const PatchConfig& cfg = {});

/// mean, std, min, max, mean |d/drow|, mean |d/dcol|, center value, radial slope.
Vec8 handcrafted_stats(const TerrainPatch& patch, double pixel_spacing = 0.1);

struct Standardization {
  Vec8 mean = Vec8::Zero();
  Vec8 scale = Vec8::Ones();

  Vec8 apply(const Vec8& v) const { return (v - mean).cwiseQuotient(scale); }
};

/// Per-component moments; near-constant components keep unit scale.
Standardization fit_standardization(const std::vector<Vec8>& stats);

/// Mean over random unit projections of the squared 1-D Wasserstein-2
/// distance between the sorted projections of two equally sized sets
/// (columns are samples). Optionally returns the gradient w.r.t. `a`.
double sliced_wasserstein_distance(const Eigen::Ref<const MatX>& a, const Eigen::Ref<const MatX>& b,
                                   int n_projections, std::mt19937_64& rng, MatX* grad_a = nullptr);

struct SwaeConfig {
  int pool = 8;          // average-pool factor applied to 128x128 patches
  int hidden = 128;
  int latent = kLatentDim;
  double beta = 1.0;
  int projections = 50;
  int epochs = 40;
  int batch = 64;
  double lr = 1e-3;
  int compressor_epochs = 60;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Autoencoder over pooled patches plus the 64 -> 8 compressor.
struct SwaeModel {
  SwaeConfig cfg;
  Modality modality = Modality::Elevation;
  double input_mean = 0.0;
  double input_scale = 1.0;
  Net encoder;       // pooled -> hidden -> 64
  Net decoder;       // 64 -> hidden -> pooled
  Net compressor;    // 64 -> 32 -> 16 -> 8
  Net decompressor;  // 8 -> 16 -> 32 -> 64

  VecX pooled(const TerrainPatch& patch) const;
  VecX latent(const TerrainPatch& patch) const;
  Vec8 embed(const TerrainPatch& patch) const;
  /// Full-resolution reconstruction of one patch.
  MatX reconstruct(const TerrainPatch& patch) const;
};

struct SwaeReport {
  double initial_mse = 0.0;
  double final_mse = 0.0;
  double seconds = 0.0;
  bool diverged = false;
  std::vector<double> epoch_loss;
};

double reconstruction_mse(const SwaeModel& model, const std::vector<TerrainPatch>& patches);

/// Minimizes reconstruction MSE + beta * SW(latents, N(0, I)), then fits the
/// compressor as a bottleneck autoencoder on the latents. Requires >= 1000 patches.
SwaeModel train_swae(const std::vector<TerrainPatch>& patches, const SwaeConfig& cfg,
                     SwaeReport* report = nullptr);

enum class EmbeddingMode : std::uint8_t { Handcrafted = 0, Swae = 1 };

struct EmbeddingPipeline {
  EmbeddingMode mode = EmbeddingMode::Handcrafted;
  Standardization elevation_std;
  Standardization semantic_std;
  std::optional<SwaeModel> elevation_model;
  std::optional<SwaeModel> semantic_model;

  bool ready() const;
};

Vec8 embed(const EmbeddingPipeline& pipeline, const TerrainPatch& patch);

/// Elevation and semantic embeddings observed at a pose.
using EmbeddingProvider = std::function<std::pair<Vec8, Vec8>(const PoseState&)>;

EmbeddingProvider make_embedding_provider(const EnvironmentSpec& env,
                                          const EmbeddingPipeline& pipeline,
                                          const PatchConfig& patch = {});

void write_pipeline(const std::string& path, const EmbeddingPipeline& pipeline);
EmbeddingPipeline read_pipeline(const std::string& path);

}  // namespace kinofe
