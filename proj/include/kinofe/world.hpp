#pragma once

#include "kinofe/se3.hpp"
#include "kinofe/types.hpp"

#include <array>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace kinofe {

enum class ElevationLevel : std::uint8_t { Low = 0, Medium = 1, High = 2 };
enum class TerrainKind : std::uint8_t { Rigid = 0, Deformable = 1 };
enum class Hardness : std::uint8_t { Soft = 0, Medium = 1, Hard = 2 };

std::string to_string(ElevationLevel level);
ElevationLevel parse_level(const std::string& name);
std::string to_string(Hardness h);

inline constexpr int kNumClasses = 10;
inline constexpr double kRestitution = 0.01;

/// Nominal description of one semantic class.
struct ClassInfo {
  std::string name;
  TerrainKind kind;
  double friction_mean;  // rigid: mean of the friction normal; deformable: base traction
  double friction_std;   // rigid only
};

/// grass, wood, gravel, dirt, clay, rock, concrete, snow, mud, sand.
const std::array<ClassInfo, kNumClasses>& class_table();
int class_index(const std::string& name);

/// Deformable soil constants per hardness level.
struct SoilParams {
  double cohesion = 0.0;   // kPa
  double stiffness = 0.0;  // kN/m^(n+2)
  double hardening = 0.0;  // dimensionless
};
SoilParams soil_params(Hardness h);
/// Traction multiplier applied to a deformable class's base value.
double hardness_traction(Hardness h);

/// Per-environment draw of a class's physics.
struct ClassParams {
  TerrainKind kind = TerrainKind::Rigid;
  double friction = 0.0;  // effective traction coefficient used by the dynamics
  double restitution = kRestitution;
  Hardness hardness = Hardness::Medium;
  SoilParams soil;
  /// What perception reports for this class: its nominal traction.
  double nominal = 0.0;
};

/// Row-major raster with spacing `resolution`; cell (r, c) sits at world (c*res, r*res).
template <typename T>
struct Grid {
  int rows = 0;
  int cols = 0;
  double resolution = 0.1;
  std::vector<T> data;

  Grid() = default;
  Grid(int r, int c, double res, T fill = T{})
      : rows(r), cols(c), resolution(res), data(static_cast<std::size_t>(r) * c, fill) {}
  T& operator()(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& operator()(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  double width() const { return (cols - 1) * resolution; }
  double height() const { return (rows - 1) * resolution; }
  bool operator==(const Grid&) const = default;
};

struct LevelAmplitude {
  double low = 0.4;
  double medium = 1.6;
  double high = 4.0;
};

/// Generation and vehicle constants. Defaults describe the standard 129 m maps.
struct WorldConfig {
  double side = 129.0;
  double resolution = 0.1;
  LevelAmplitude amplitude;
  double base_wavelength = 24.0;  // meters, coarsest noise octave
  int octaves = 4;
  double persistence = 0.45;
  int voronoi_sites = 40;
  std::vector<int> classes;       // empty = all ten
  double friction_std_scale = 1.0;
  double slope_coefficient = 1.5; // c_slope in the terrain factor
  double min_terrain_factor = 0.05;
  double wheelbase = 0.5;
  double track = 0.4;
  double max_steer_angle = 0.5;   // rad at |steer| = 1
  double dt = 0.1;
  double boundary_margin = 9.2;   // keeps a rotated 12.8 m patch on the map

  void validate() const;
};

struct EnvironmentSpec {
  std::string id;
  ElevationLevel level = ElevationLevel::Low;
  std::uint64_t seed = 0;
  double side = 0.0;
  Grid<float> height;
  Grid<std::uint8_t> semantic;
  std::array<ClassParams, kNumClasses> params{};

  double height_at(double x, double y) const;
  /// Effective traction under (x, y), bilinear over the class raster.
  double friction_at(double x, double y) const;
  /// Perceived (nominal) traction under (x, y).
  double nominal_at(double x, double y) const;
  bool in_bounds(double x, double y, double margin) const;
};

EnvironmentSpec generate_environment(ElevationLevel level, std::uint64_t seed,
                                     const WorldConfig& cfg = {}, std::string id = {});

/// Flat map with one class whose traction is `friction`; used for controlled scenarios.
EnvironmentSpec make_flat_environment(double friction, const WorldConfig& cfg = {},
                                      std::string id = "flat", int class_id = 6);

/// Max |grad h| over the map.
double max_slope(const EnvironmentSpec& env);

/// z, roll, pitch of a vehicle resting on the surface at (x, y, yaw).
PoseState settle(const EnvironmentSpec& env, double x, double y, double yaw,
                 const WorldConfig& cfg = {});

/// Speed scale s in [min_terrain_factor, 1] at a pose: traction times uphill penalty.
double terrain_factor(const EnvironmentSpec& env, const PoseState& pose,
                      const WorldConfig& cfg = {});

struct StepResult {
  PoseState pose;
  bool out_of_bounds = false;
};

/// Kinematic bicycle over the heightfield for one dt.
StepResult step_ground_truth(const EnvironmentSpec& env, const PoseState& pose, Control u,
                             const WorldConfig& cfg = {});

/// Logged drive at 10 Hz. Record i holds the pose at t_i and the control applied from it.
struct Trajectory {
  std::string env_id;
  std::vector<double> time;
  std::vector<PoseState> poses;
  std::vector<Control> controls;
  std::vector<Vec8> e_elev;  // empty until embedded
  std::vector<Vec8> e_sem;
  bool boundary_flag = false;

  std::size_t size() const { return poses.size(); }
  bool has_embeddings() const { return e_elev.size() == poses.size() && e_sem.size() == poses.size(); }
  /// Transition i -> i+1 as a body-frame sample (requires embeddings).
  ConditionedSample sample(std::size_t i) const;
  bool operator==(const Trajectory&) const = default;
};

struct ExplorationParams {
  double steer_freq = 0.0;  // Hz
  double speed_freq = 0.0;  // Hz
  double v_min = 0.0;
  double amplitude = 0.0;
  double center = 0.0;
};

/// Draws sinusoidal exploration parameters; speed stays within [v_min, 3].
ExplorationParams draw_exploration(std::mt19937_64& rng);
Control exploration_control(const ExplorationParams& p, double t);

/// Sinusoidal exploration drive from a random start. Truncated at a boundary flag.
Trajectory explore(const EnvironmentSpec& env, double duration, std::uint64_t seed,
                   const WorldConfig& cfg = {}, ExplorationParams* used = nullptr);

}  // namespace kinofe
