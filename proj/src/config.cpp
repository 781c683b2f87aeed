#include "kinofe/config.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

namespace kinofe {

using nlohmann::json;

namespace {

std::string mode_name(EmbeddingMode m) { return m == EmbeddingMode::Handcrafted ? "handcrafted" : "swae"; }

EmbeddingMode parse_embedding_mode(const std::string& s) {
  if (s == "handcrafted") return EmbeddingMode::Handcrafted;
  if (s == "swae") return EmbeddingMode::Swae;
  throw InvalidArgument("unknown embedding mode '" + s + "' (expected handcrafted or swae)");
}

// JSON has no infinity; unbounded weights are written as the string "inf".
json number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

// Strict reader over one JSON object: every key must be consumed.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  void get_double(const char* key, double& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& v = j_.at(key);
    if (v.is_string() && (v == "inf" || v == "-inf")) {
      out = v == "inf" ? std::numeric_limits<double>::infinity()
                       : -std::numeric_limits<double>::infinity();
    } else if (v.is_number()) {
      out = v.get<double>();
    } else {
      throw ConfigError(where(key) + ": expected a number");
    }
  }

  template <typename T>
  void get_enum(const char* key, T& out, const std::function<T(const std::string&)>& parse) {
    if (!j_.contains(key)) return;
    std::string s;
    get(key, s);
    try {
      out = parse(s);
    } catch (const InvalidArgument& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  void section(const char* key, const std::function<void(Reader&)>& fn) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    Reader sub(j_.at(key), where(key));
    fn(sub);
    sub.finish();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown key");
    }
  }

  std::string where(const std::string& key) const {
    if (path_.empty()) return key.empty() ? "<root>" : key;
    return key.empty() ? path_ : path_ + "." + key;
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json budget_json(const AdaptBudget& b) { return {{"steps", b.steps}, {"lr", b.lr}}; }

void read_budget(Reader& r, const char* key, AdaptBudget& b) {
  r.section(key, [&](Reader& s) {
    s.get("steps", b.steps);
    s.get_double("lr", b.lr);
  });
}

json to_json(const ExperimentConfig& c) {
  json levels = json::array();
  for (auto l : c.dataset.levels) levels.push_back(to_string(l));
  const auto& w = c.world;
  const auto& t = c.trainer.train;
  const auto& m = c.planner.mppi;
  return {
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"world",
       {{"side", w.side},
        {"resolution", w.resolution},
        {"amplitude", {{"low", w.amplitude.low}, {"medium", w.amplitude.medium}, {"high", w.amplitude.high}}},
        {"base_wavelength", w.base_wavelength},
        {"octaves", w.octaves},
        {"persistence", w.persistence},
        {"voronoi_sites", w.voronoi_sites},
        {"classes", w.classes},
        {"friction_std_scale", w.friction_std_scale},
        {"slope_coefficient", w.slope_coefficient},
        {"min_terrain_factor", w.min_terrain_factor},
        {"wheelbase", w.wheelbase},
        {"track", w.track},
        {"max_steer_angle", w.max_steer_angle},
        {"dt", w.dt},
        {"boundary_margin", w.boundary_margin}}},
      {"dataset",
       {{"levels", levels},
        {"envs_per_level", c.dataset.envs_per_level},
        {"trajectories_per_env", c.dataset.trajectories_per_env},
        {"duration", c.dataset.duration},
        {"flat", c.dataset.flat},
        {"flat_class", c.dataset.flat_class}}},
      {"embeddings",
       {{"mode", mode_name(c.embeddings.mode)},
        {"patch_stride", c.embeddings.patch_stride},
        {"swae_patches", c.embeddings.swae_patches},
        {"swae",
         {{"pool", c.embeddings.swae.pool},
          {"hidden", c.embeddings.swae.hidden},
          {"latent", c.embeddings.swae.latent},
          {"beta", c.embeddings.swae.beta},
          {"projections", c.embeddings.swae.projections},
          {"epochs", c.embeddings.swae.epochs},
          {"batch", c.embeddings.swae.batch},
          {"lr", c.embeddings.swae.lr},
          {"compressor_epochs", c.embeddings.swae.compressor_epochs},
          {"seed", c.embeddings.swae.seed}}}}},
      {"encoder",
       {{"lambda", c.encoder.lambda}, {"batch", c.encoder.batch}, {"adapt_samples", c.encoder.adapt_samples}}},
      {"trainer",
       {{"k", t.k},
        {"hidden", t.hidden},
        {"depth", t.depth},
        {"envs_per_batch", t.envs_per_batch},
        {"trajs_per_env", t.trajs_per_env},
        {"example_trajs", t.example_trajs},
        {"query_trajs", t.query_trajs},
        {"rollouts_per_traj", t.rollouts_per_traj},
        {"horizon", t.horizon},
        {"lr_start", t.schedule.lr_start},
        {"lr_end", t.schedule.lr_end},
        {"lr_steps", t.schedule.total_steps},
        {"lambda", t.lambda},
        {"dt", t.dt},
        {"example_batch", t.example_batch},
        {"example_samples_per_env", t.example_samples_per_env},
        {"steps", c.trainer.steps},
        {"checkpoint_every", c.trainer.checkpoint_every}}},
      {"baselines",
       {{"steps", c.baselines.steps},
        {"lr_start", c.baselines.lr_start},
        {"lr_end", c.baselines.lr_end},
        {"inner_lr", c.baselines.inner_lr},
        {"samples_per_env", c.baselines.samples_per_env},
        {"mlp", budget_json(c.baselines.mlp)},
        {"maml", budget_json(c.baselines.maml)},
        {"node", budget_json(c.baselines.node)},
        {"early_stop", c.baselines.early_stop}}},
      {"evaluation", {{"horizons", c.evaluation.horizons}, {"windows_per_env", c.evaluation.windows_per_env}}},
      {"planner",
       {{"horizon", m.horizon},
        {"samples", m.samples},
        {"temperature", m.temperature},
        {"steer_noise", m.steer_noise},
        {"speed_noise", m.speed_noise},
        {"v_max", m.v_max},
        {"goal_radius", m.goal_radius},
        {"weights",
         {{"goal", number(m.weights.goal)},
          {"attitude", number(m.weights.attitude)},
          {"boundary", number(m.weights.boundary)}}},
        {"adapt_mode", to_string(c.planner.policy.mode)},
        {"adapt_period", c.planner.policy.period},
        {"buffer_capacity", c.planner.policy.capacity},
        {"adapt_lambda", c.planner.policy.lambda},
        {"trials", c.planner.trials},
        {"mission_length", c.planner.mission_length},
        {"timeout", c.planner.timeout},
        {"embed_stride", c.planner.embed_stride}}},
  };
}

void from_json(const json& j, ExperimentConfig& c) {
  Reader r(j, "");
  r.get("seed", c.seed);
  r.get("output_dir", c.output_dir);
  r.section("world", [&](Reader& s) {
    auto& w = c.world;
    s.get_double("side", w.side);
    s.get_double("resolution", w.resolution);
    s.section("amplitude", [&](Reader& a) {
      a.get_double("low", w.amplitude.low);
      a.get_double("medium", w.amplitude.medium);
      a.get_double("high", w.amplitude.high);
    });
    s.get_double("base_wavelength", w.base_wavelength);
    s.get("octaves", w.octaves);
    s.get_double("persistence", w.persistence);
    s.get("voronoi_sites", w.voronoi_sites);
    s.get("classes", w.classes);
    s.get_double("friction_std_scale", w.friction_std_scale);
    s.get_double("slope_coefficient", w.slope_coefficient);
    s.get_double("min_terrain_factor", w.min_terrain_factor);
    s.get_double("wheelbase", w.wheelbase);
    s.get_double("track", w.track);
    s.get_double("max_steer_angle", w.max_steer_angle);
    s.get_double("dt", w.dt);
    s.get_double("boundary_margin", w.boundary_margin);
  });
  r.section("dataset", [&](Reader& s) {
    if (j.at("dataset").contains("levels")) {
      std::vector<std::string> names;
      s.get("levels", names);
      c.dataset.levels.clear();
      for (std::size_t i = 0; i < names.size(); ++i) {
        try {
          c.dataset.levels.push_back(parse_level(names[i]));
        } catch (const InvalidArgument& e) {
          throw ConfigError(s.where("levels") + "[" + std::to_string(i) + "]: " + e.what());
        }
      }
    }
    s.get("envs_per_level", c.dataset.envs_per_level);
    s.get("trajectories_per_env", c.dataset.trajectories_per_env);
    s.get_double("duration", c.dataset.duration);
    s.get("flat", c.dataset.flat);
    s.get("flat_class", c.dataset.flat_class);
  });
  r.section("embeddings", [&](Reader& s) {
    s.get_enum<EmbeddingMode>("mode", c.embeddings.mode, parse_embedding_mode);
    s.get("patch_stride", c.embeddings.patch_stride);
    s.get("swae_patches", c.embeddings.swae_patches);
    s.section("swae", [&](Reader& w) {
      auto& v = c.embeddings.swae;
      w.get("pool", v.pool);
      w.get("hidden", v.hidden);
      w.get("latent", v.latent);
      w.get_double("beta", v.beta);
      w.get("projections", v.projections);
      w.get("epochs", v.epochs);
      w.get("batch", v.batch);
      w.get_double("lr", v.lr);
      w.get("compressor_epochs", v.compressor_epochs);
      w.get("seed", v.seed);
    });
  });
  r.section("encoder", [&](Reader& s) {
    s.get_double("lambda", c.encoder.lambda);
    s.get("batch", c.encoder.batch);
    s.get("adapt_samples", c.encoder.adapt_samples);
  });
  r.section("trainer", [&](Reader& s) {
    auto& t = c.trainer.train;
    s.get("k", t.k);
    s.get("hidden", t.hidden);
    s.get("depth", t.depth);
    s.get("envs_per_batch", t.envs_per_batch);
    s.get("trajs_per_env", t.trajs_per_env);
    s.get("example_trajs", t.example_trajs);
    s.get("query_trajs", t.query_trajs);
    s.get("rollouts_per_traj", t.rollouts_per_traj);
    s.get("horizon", t.horizon);
    s.get_double("lr_start", t.schedule.lr_start);
    s.get_double("lr_end", t.schedule.lr_end);
    s.get("lr_steps", t.schedule.total_steps);
    s.get_double("lambda", t.lambda);
    s.get_double("dt", t.dt);
    s.get("example_batch", t.example_batch);
    s.get("example_samples_per_env", t.example_samples_per_env);
    s.get("steps", c.trainer.steps);
    s.get("checkpoint_every", c.trainer.checkpoint_every);
  });
  r.section("baselines", [&](Reader& s) {
    auto& b = c.baselines;
    s.get("steps", b.steps);
    s.get_double("lr_start", b.lr_start);
    s.get_double("lr_end", b.lr_end);
    s.get_double("inner_lr", b.inner_lr);
    s.get("samples_per_env", b.samples_per_env);
    read_budget(s, "mlp", b.mlp);
    read_budget(s, "maml", b.maml);
    read_budget(s, "node", b.node);
    s.get("early_stop", b.early_stop);
  });
  r.section("evaluation", [&](Reader& s) {
    s.get("horizons", c.evaluation.horizons);
    s.get("windows_per_env", c.evaluation.windows_per_env);
  });
  r.section("planner", [&](Reader& s) {
    auto& m = c.planner.mppi;
    s.get("horizon", m.horizon);
    s.get("samples", m.samples);
    s.get_double("temperature", m.temperature);
    s.get_double("steer_noise", m.steer_noise);
    s.get_double("speed_noise", m.speed_noise);
    s.get_double("v_max", m.v_max);
    s.get_double("goal_radius", m.goal_radius);
    s.section("weights", [&](Reader& w) {
      w.get_double("goal", m.weights.goal);
      w.get_double("attitude", m.weights.attitude);
      w.get_double("boundary", m.weights.boundary);
    });
    s.get_enum<AdaptMode>("adapt_mode", c.planner.policy.mode,
                          [](const std::string& v) { return parse_adapt_mode(v); });
    s.get_double("adapt_period", c.planner.policy.period);
    s.get("buffer_capacity", c.planner.policy.capacity);
    s.get_double("adapt_lambda", c.planner.policy.lambda);
    s.get("trials", c.planner.trials);
    s.get_double("mission_length", c.planner.mission_length);
    s.get_double("timeout", c.planner.timeout);
    s.get("embed_stride", c.planner.embed_stride);
  });
  r.finish();
}

void check(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

template <typename Fn>
void rethrow_as(const std::string& key, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

}  // namespace

AdaptBudget BaselineSection::budget(BaselineKind kind) const {
  switch (kind) {
    case BaselineKind::MlpLastLayer: return mlp;
    case BaselineKind::FoMaml: return maml;
    case BaselineKind::NodeFinetune: return node;
  }
  throw InvalidArgument("budget: unknown kind");
}

void ExperimentConfig::validate() const {
  rethrow_as("world", [&] { world.validate(); });
  check(!dataset.levels.empty(), "dataset.levels", "must list at least one level");
  check(dataset.envs_per_level >= 1, "dataset.envs_per_level", "must be >= 1");
  check(dataset.trajectories_per_env >= 1, "dataset.trajectories_per_env", "must be >= 1");
  check(dataset.duration > 0.0, "dataset.duration", "must be positive");
  check(dataset.flat_class >= 0 && dataset.flat_class < kNumClasses, "dataset.flat_class",
        "must name one of the terrain classes");
  check(embeddings.patch_stride >= 1 && kPatchPixels % embeddings.patch_stride == 0,
        "embeddings.patch_stride", "must divide the patch size");
  check(embeddings.swae_patches >= 1000, "embeddings.swae_patches", "must be >= 1000");
  rethrow_as("embeddings.swae", [&] { embeddings.swae.validate(); });
  check(encoder.lambda >= 0.0, "encoder.lambda", "must be non-negative");
  check(encoder.batch >= 1, "encoder.batch", "must be >= 1");
  check(encoder.adapt_samples >= 1, "encoder.adapt_samples", "must be >= 1");
  rethrow_as("trainer", [&] { trainer.train.validate(); });
  check(trainer.steps >= 0, "trainer.steps", "must be >= 0");
  check(trainer.checkpoint_every >= 1, "trainer.checkpoint_every", "must be >= 1");
  check(baselines.steps >= 0, "baselines.steps", "must be >= 0");
  check(baselines.lr_start > 0.0 && baselines.lr_end > 0.0, "baselines.lr_start", "rates must be positive");
  check(baselines.samples_per_env >= 0, "baselines.samples_per_env", "must be >= 0");
  for (auto [name, b] : {std::pair{"baselines.mlp", baselines.mlp}, std::pair{"baselines.maml", baselines.maml},
                         std::pair{"baselines.node", baselines.node}}) {
    check(b.steps > 0 && b.lr > 0.0, name, "budget steps and lr must be positive");
  }
  check(!evaluation.horizons.empty(), "evaluation.horizons", "must not be empty");
  for (int h : evaluation.horizons) check(h >= 1, "evaluation.horizons", "entries must be >= 1");
  check(evaluation.windows_per_env >= 1, "evaluation.windows_per_env", "must be >= 1");
  rethrow_as("planner", [&] {
    planner.mppi.validate();
    planner.policy.validate();
  });
  check(planner.trials >= 1, "planner.trials", "must be >= 1");
  check(planner.mission_length > 0.0, "planner.mission_length", "must be positive");
  check(planner.timeout > 0.0, "planner.timeout", "must be positive");
  check(planner.embed_stride >= 1, "planner.embed_stride", "must be >= 1");
}

ExperimentConfig desk_config() {
  ExperimentConfig c;
  c.trainer.train.k = 8;
  c.trainer.train.hidden = 64;
  c.trainer.train.example_samples_per_env = 256;
  return c;
}

std::string to_json_text(const ExperimentConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c = desk_config();
  from_json(j, c);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void save_config(const std::string& path, const ExperimentConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw ConfigError("config: cannot write '" + path + "'");
  out << to_json_text(cfg);
}

void apply_env_overrides(ExperimentConfig& cfg) {
  const std::string prefix = kEnvPrefix;
  if (const char* v = std::getenv((prefix + "SEED").c_str())) {
    try {
      std::size_t used = 0;
      const unsigned long long s = std::stoull(v, &used);
      if (used != std::string(v).size()) throw std::invalid_argument("trailing characters");
      cfg.seed = s;
    } catch (const std::exception&) {
      throw ConfigError(prefix + "SEED: expected an unsigned integer, got '" + v + "'");
    }
  }
  if (const char* v = std::getenv((prefix + "OUTPUT_DIR").c_str())) {
    if (!*v) throw ConfigError(prefix + "OUTPUT_DIR: must not be empty");
    cfg.output_dir = v;
  }
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : tag) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = master ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace kinofe
