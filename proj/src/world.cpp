#include "kinofe/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace kinofe {

std::string to_string(ElevationLevel level) {
  switch (level) {
    case ElevationLevel::Low: return "low";
    case ElevationLevel::Medium: return "medium";
    case ElevationLevel::High: return "high";
  }
  return "?";
}

ElevationLevel parse_level(const std::string& name) {
  if (name == "low") return ElevationLevel::Low;
  if (name == "medium") return ElevationLevel::Medium;
  if (name == "high") return ElevationLevel::High;
  throw InvalidArgument("unknown elevation level '" + name + "' (expected low, medium, high)");
}

std::string to_string(Hardness h) {
  switch (h) {
    case Hardness::Soft: return "soft";
    case Hardness::Medium: return "medium";
    case Hardness::Hard: return "hard";
  }
  return "?";
}

const std::array<ClassInfo, kNumClasses>& class_table() {
  static const std::array<ClassInfo, kNumClasses> table{{
      {"grass", TerrainKind::Rigid, 0.55, 0.05},
      {"wood", TerrainKind::Rigid, 0.60, 0.05},
      {"gravel", TerrainKind::Rigid, 0.65, 0.05},
      {"dirt", TerrainKind::Rigid, 0.70, 0.05},
      {"clay", TerrainKind::Rigid, 0.50, 0.05},
      {"rock", TerrainKind::Rigid, 0.85, 0.04},
      {"concrete", TerrainKind::Rigid, 0.90, 0.03},
      {"snow", TerrainKind::Deformable, 0.40, 0.0},
      {"mud", TerrainKind::Deformable, 0.35, 0.0},
      {"sand", TerrainKind::Deformable, 0.50, 0.0},
  }};
  return table;
}

int class_index(const std::string& name) {
  const auto& t = class_table();
  for (int i = 0; i < kNumClasses; ++i)
    if (t[i].name == name) return i;
  throw InvalidArgument("unknown terrain class '" + name + "'");
}

SoilParams soil_params(Hardness h) {
  switch (h) {
    case Hardness::Soft: return {0.5, 300.0, 0.5};
    case Hardness::Medium: return {2.0, 800.0, 1.0};
    case Hardness::Hard: return {5.0, 1500.0, 1.5};
  }
  return {};
}

double hardness_traction(Hardness h) {
  switch (h) {
    case Hardness::Soft: return 0.7;
    case Hardness::Medium: return 0.85;
    case Hardness::Hard: return 1.0;
  }
  return 1.0;
}

void WorldConfig::validate() const {
  if (!(side > 0.0) || !(resolution > 0.0)) throw InvalidArgument("world: side and resolution must be positive");
  if (octaves < 1) throw InvalidArgument("world: octaves must be >= 1");
  if (voronoi_sites < 1) throw InvalidArgument("world: voronoi_sites must be >= 1");
  if (!(wheelbase > 0.0) || !(track > 0.0)) throw InvalidArgument("world: vehicle dimensions must be positive");
  if (!(dt > 0.0)) throw InvalidArgument("world: dt must be positive");
  if (!(min_terrain_factor > 0.0) || min_terrain_factor > 1.0)
    throw InvalidArgument("world: min_terrain_factor must lie in (0, 1]");
  for (int c : classes)
    if (c < 0 || c >= kNumClasses) throw InvalidArgument("world: class index out of range");
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice(std::uint64_t seed, int octave, std::int64_t ix, std::int64_t iy) {
  std::uint64_t h = splitmix(seed ^ splitmix(static_cast<std::uint64_t>(octave) + 0x51ULL));
  h = splitmix(h ^ static_cast<std::uint64_t>(ix));
  h = splitmix(h ^ (static_cast<std::uint64_t>(iy) * 0x632be59bd9b4e019ULL));
  return static_cast<double>(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double value_noise(std::uint64_t seed, int octave, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  const double tx = smooth(x - fx), ty = smooth(y - fy);
  const double a = lattice(seed, octave, ix, iy), b = lattice(seed, octave, ix + 1, iy);
  const double c = lattice(seed, octave, ix, iy + 1), d = lattice(seed, octave, ix + 1, iy + 1);
  return (a + (b - a) * tx) + ((c + (d - c) * tx) - (a + (b - a) * tx)) * ty;
}

double amplitude_for(ElevationLevel level, const LevelAmplitude& a) {
  switch (level) {
    case ElevationLevel::Low: return a.low;
    case ElevationLevel::Medium: return a.medium;
    case ElevationLevel::High: return a.high;
  }
  return a.low;
}

template <typename T>
double bilinear(const Grid<T>& g, double x, double y, const auto& value) {
  const double gx = std::clamp(x / g.resolution, 0.0, static_cast<double>(g.cols - 1));
  const double gy = std::clamp(y / g.resolution, 0.0, static_cast<double>(g.rows - 1));
  const int c0 = std::min(static_cast<int>(gx), g.cols - 2 < 0 ? 0 : g.cols - 2);
  const int r0 = std::min(static_cast<int>(gy), g.rows - 2 < 0 ? 0 : g.rows - 2);
  const int c1 = std::min(c0 + 1, g.cols - 1), r1 = std::min(r0 + 1, g.rows - 1);
  const double tx = gx - c0, ty = gy - r0;
  const double v00 = value(g(r0, c0)), v01 = value(g(r0, c1));
  const double v10 = value(g(r1, c0)), v11 = value(g(r1, c1));
  const double top = v00 + (v01 - v00) * tx;
  const double bot = v10 + (v11 - v10) * tx;
  return top + (bot - top) * ty;
}

int grid_points(double side, double res) { return static_cast<int>(std::lround(side / res)); }

}  // namespace

double EnvironmentSpec::height_at(double x, double y) const {
  return bilinear(height, x, y, [](float v) { return static_cast<double>(v); });
}

double EnvironmentSpec::friction_at(double x, double y) const {
  return bilinear(semantic, x, y, [this](std::uint8_t c) { return params[c].friction; });
}

double EnvironmentSpec::nominal_at(double x, double y) const {
  return bilinear(semantic, x, y, [this](std::uint8_t c) { return params[c].nominal; });
}

bool EnvironmentSpec::in_bounds(double x, double y, double margin) const {
  const double w = height.width(), h = height.height();
  return x >= margin && y >= margin && x <= w - margin && y <= h - margin;
}

namespace {

std::array<ClassParams, kNumClasses> draw_class_params(std::mt19937_64& rng,
                                                        const WorldConfig& cfg) {
  std::array<ClassParams, kNumClasses> out{};
  const auto& table = class_table();
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> hardness(0, 2);
  for (int i = 0; i < kNumClasses; ++i) {
    ClassParams p;
    p.kind = table[i].kind;
    if (p.kind == TerrainKind::Rigid) {
      const double mu = table[i].friction_mean + cfg.friction_std_scale * table[i].friction_std * unit(rng);
      p.friction = std::clamp(mu, 0.05, 1.0);
      p.nominal = table[i].friction_mean;
    } else {
      p.hardness = static_cast<Hardness>(hardness(rng));
      p.soil = soil_params(p.hardness);
      p.friction = table[i].friction_mean * hardness_traction(p.hardness);
      p.nominal = table[i].friction_mean * hardness_traction(Hardness::Medium);
    }
    out[i] = p;
  }
  return out;
}

}  // namespace

EnvironmentSpec generate_environment(ElevationLevel level, std::uint64_t seed,
                                     const WorldConfig& cfg, std::string id) {
  cfg.validate();
  EnvironmentSpec env;
  env.id = id.empty() ? to_string(level) + "_" + std::to_string(seed) : std::move(id);
  env.level = level;
  env.seed = seed;
  env.side = cfg.side;
  const int n = grid_points(cfg.side, cfg.resolution);
  env.height = Grid<float>(n, n, cfg.resolution);
  env.semantic = Grid<std::uint8_t>(n, n, cfg.resolution);

  std::mt19937_64 rng(seed);
  const std::uint64_t noise_seed = rng();
  const double amp = amplitude_for(level, cfg.amplitude);
  double norm = 0.0;
  for (int o = 0; o < cfg.octaves; ++o) norm += std::pow(cfg.persistence, o);
  for (int r = 0; r < n; ++r) {
    const double y = r * cfg.resolution;
    for (int c = 0; c < n; ++c) {
      const double x = c * cfg.resolution;
      double h = 0.0, weight = 1.0, wavelength = cfg.base_wavelength;
      for (int o = 0; o < cfg.octaves; ++o) {
        h += weight * value_noise(noise_seed, o, x / wavelength, y / wavelength);
        weight *= cfg.persistence;
        wavelength *= 0.5;
      }
      env.height(r, c) = static_cast<float>(amp * h / norm);
    }
  }

  std::vector<int> classes = cfg.classes;
  if (classes.empty()) {
    classes.resize(kNumClasses);
    std::iota(classes.begin(), classes.end(), 0);
  }
  const int sites = std::max<int>(cfg.voronoi_sites, static_cast<int>(classes.size()));
  std::vector<double> sx(sites), sy(sites);
  std::vector<std::uint8_t> sc(sites);
  std::uniform_real_distribution<double> pos(0.0, env.height.width());
  std::vector<int> order = classes;
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<std::size_t> pick(0, classes.size() - 1);
  for (int s = 0; s < sites; ++s) {
    sx[s] = pos(rng);
    sy[s] = pos(rng);
    sc[s] = static_cast<std::uint8_t>(s < static_cast<int>(order.size()) ? order[s] : classes[pick(rng)]);
  }
  for (int r = 0; r < n; ++r) {
    const double y = r * cfg.resolution;
    for (int c = 0; c < n; ++c) {
      const double x = c * cfg.resolution;
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int s = 0; s < sites; ++s) {
        const double d = (x - sx[s]) * (x - sx[s]) + (y - sy[s]) * (y - sy[s]);
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      env.semantic(r, c) = sc[best];
    }
  }
  // every site owns at least the pixel nearest to it
  for (int s = 0; s < static_cast<int>(order.size()); ++s) {
    const int c = std::clamp(static_cast<int>(std::lround(sx[s] / cfg.resolution)), 0, n - 1);
    const int r = std::clamp(static_cast<int>(std::lround(sy[s] / cfg.resolution)), 0, n - 1);
    env.semantic(r, c) = sc[s];
  }
  env.params = draw_class_params(rng, cfg);
  return env;
}

EnvironmentSpec make_flat_environment(double friction, const WorldConfig& cfg, std::string id,
                                      int class_id) {
  cfg.validate();
  if (class_id < 0 || class_id >= kNumClasses) throw InvalidArgument("make_flat_environment: bad class");
  EnvironmentSpec env;
  env.id = std::move(id);
  env.side = cfg.side;
  const int n = grid_points(cfg.side, cfg.resolution);
  env.height = Grid<float>(n, n, cfg.resolution, 0.0f);
  env.semantic = Grid<std::uint8_t>(n, n, cfg.resolution, static_cast<std::uint8_t>(class_id));
  for (int i = 0; i < kNumClasses; ++i) {
    env.params[i].kind = class_table()[i].kind;
    env.params[i].friction = class_table()[i].friction_mean;
    env.params[i].nominal = class_table()[i].friction_mean;
  }
  env.params[class_id].friction = friction;
  return env;
}

double max_slope(const EnvironmentSpec& env) {
  const auto& g = env.height;
  double best = 0.0;
  for (int r = 0; r + 1 < g.rows; ++r) {
    for (int c = 0; c + 1 < g.cols; ++c) {
      const double gx = (g(r, c + 1) - g(r, c)) / g.resolution;
      const double gy = (g(r + 1, c) - g(r, c)) / g.resolution;
      best = std::max(best, std::hypot(gx, gy));
    }
  }
  return best;
}

PoseState settle(const EnvironmentSpec& env, double x, double y, double yaw,
                 const WorldConfig& cfg) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double hl = 0.5 * cfg.wheelbase, ht = 0.5 * cfg.track;
  const double front = env.height_at(x + c * hl, y + s * hl);
  const double rear = env.height_at(x - c * hl, y - s * hl);
  const double left = env.height_at(x - s * ht, y + c * ht);
  const double right = env.height_at(x + s * ht, y - c * ht);
  PoseState p;
  p.x = x;
  p.y = y;
  p.z = env.height_at(x, y);
  // right-handed body axes (x forward, y left, z up): nose-up is negative pitch
  p.pitch = std::atan2(rear - front, cfg.wheelbase);
  p.roll = std::atan2(left - right, cfg.track);
  p.yaw = wrap_angle(yaw);
  return p;
}

double terrain_factor(const EnvironmentSpec& env, const PoseState& pose, const WorldConfig& cfg) {
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  const double hl = 0.5 * cfg.wheelbase;
  const double uphill =
      (env.height_at(pose.x + c * hl, pose.y + s * hl) - env.height_at(pose.x - c * hl, pose.y - s * hl)) /
      cfg.wheelbase;
  const double mu = env.friction_at(pose.x, pose.y);
  return std::clamp(mu * (1.0 - cfg.slope_coefficient * std::max(0.0, uphill)),
                    cfg.min_terrain_factor, 1.0);
}

StepResult step_ground_truth(const EnvironmentSpec& env, const PoseState& pose, Control u,
                             const WorldConfig& cfg) {
  if (!pose.vec().allFinite() || !std::isfinite(u.steer) || !std::isfinite(u.speed)) {
    throw InvalidArgument("step_ground_truth: non-finite pose or control");
  }
  u = clamp_control(u);
  const double v = terrain_factor(env, pose, cfg) * u.speed;
  const double yaw_rate = v * std::tan(u.steer * cfg.max_steer_angle) / cfg.wheelbase;
  const double mid = pose.yaw + 0.5 * yaw_rate * cfg.dt;
  double x = pose.x + v * cfg.dt * std::cos(mid);
  double y = pose.y + v * cfg.dt * std::sin(mid);
  StepResult out;
  const double lo = cfg.boundary_margin;
  const double hi_x = env.height.width() - cfg.boundary_margin;
  const double hi_y = env.height.height() - cfg.boundary_margin;
  if (x < lo || y < lo || x > hi_x || y > hi_y) {
    out.out_of_bounds = true;
    x = std::clamp(x, lo, std::max(lo, hi_x));
    y = std::clamp(y, lo, std::max(lo, hi_y));
  }
  out.pose = settle(env, x, y, pose.yaw + yaw_rate * cfg.dt, cfg);
  return out;
}

ConditionedSample Trajectory::sample(std::size_t i) const {
  if (i + 1 >= poses.size()) throw InvalidArgument("Trajectory::sample: index out of range");
  if (!has_embeddings()) throw InvalidArgument("Trajectory::sample: trajectory has no embeddings");
  return make_sample(poses[i], poses[i + 1], controls[i], e_elev[i], e_sem[i]);
}

ExplorationParams draw_exploration(std::mt19937_64& rng) {
  ExplorationParams p;
  p.steer_freq = std::uniform_real_distribution<double>(0.1, 0.5)(rng);
  p.speed_freq = std::uniform_real_distribution<double>(0.1, 2.5)(rng);
  p.v_min = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
  p.amplitude = 0.5 * (kMaxSpeed - p.v_min);
  p.center = 0.5 * (kMaxSpeed + p.v_min);
  return p;
}

Control exploration_control(const ExplorationParams& p, double t) {
  Control u;
  u.steer = std::sin(2.0 * kPi * p.steer_freq * t);
  u.speed = std::clamp(p.center + p.amplitude * std::sin(2.0 * kPi * p.speed_freq * t), p.v_min,
                       kMaxSpeed);
  return u;
}

Trajectory explore(const EnvironmentSpec& env, double duration, std::uint64_t seed,
                   const WorldConfig& cfg, ExplorationParams* used) {
  if (!(duration > 0.0)) throw InvalidArgument("explore: duration must be positive");
  std::mt19937_64 rng(seed);
  const ExplorationParams p = draw_exploration(rng);
  if (used) *used = p;
  const double lo = cfg.boundary_margin + 10.0;
  const double hi = env.height.width() - cfg.boundary_margin - 10.0;
  double x0, y0;
  if (hi > lo) {
    std::uniform_real_distribution<double> pos(lo, hi);
    x0 = pos(rng);
    y0 = pos(rng);
  } else {
    x0 = y0 = 0.5 * env.height.width();
  }
  const double yaw0 = std::uniform_real_distribution<double>(-kPi, kPi)(rng);

  Trajectory traj;
  traj.env_id = env.id;
  const auto steps = static_cast<std::size_t>(std::llround(duration / cfg.dt));
  traj.time.reserve(steps);
  traj.poses.reserve(steps);
  traj.controls.reserve(steps);
  PoseState pose = settle(env, x0, y0, yaw0, cfg);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) * cfg.dt;
    const Control u = exploration_control(p, t);
    traj.time.push_back(t);
    traj.poses.push_back(pose);
    traj.controls.push_back(u);
    const StepResult next = step_ground_truth(env, pose, u, cfg);
    if (next.out_of_bounds) {
      traj.boundary_flag = true;
      break;
    }
    pose = next.pose;
  }
  return traj;
}

}  // namespace kinofe
