#include "kinofe/experiments.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

namespace kinofe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kPipelineFile = "embedding.bin";
constexpr const char* kResultsSchema = "# kinofe-results v1";

std::ostream& log_of(const CommandOptions& opt) { return opt.log ? *opt.log : std::clog; }

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + p.string() + "'");
  out << s;
  if (!out) throw FormatError("write failed for '" + p.string() + "'");
}

std::string fmt(double v, int precision = 10) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

fs::path out_dir_of(const ExperimentConfig& cfg, const CommandOptions& opt) {
  return opt.out_dir.empty() ? fs::path(cfg.output_dir) : fs::path(opt.out_dir);
}

fs::path checkpoint_dir_of(const ExperimentConfig& cfg, const CommandOptions& opt) {
  return opt.checkpoint_dir.empty() ? out_dir_of(cfg, opt) : fs::path(opt.checkpoint_dir);
}

fs::path dataset_dir_of(const ExperimentConfig& cfg, const CommandOptions& opt) {
  return opt.dataset_dir.empty() ? fs::path(cfg.output_dir) : fs::path(opt.dataset_dir);
}

// Selects n of [0, count) without replacement, in increasing order.
std::vector<std::size_t> subsample(std::size_t count, std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (n >= count) return idx;
  for (std::size_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, count - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

EnvironmentSpec build_environment(const ExperimentConfig& cfg, ElevationLevel level, const std::string& id,
                                  std::uint64_t seed) {
  if (!cfg.dataset.flat) return generate_environment(level, seed, cfg.world, id);
  // Flat maps differ only in their hidden traction.
  std::mt19937_64 rng(seed);
  const double friction = std::uniform_real_distribution<double>(0.3, 1.0)(rng);
  EnvironmentSpec env = make_flat_environment(friction, cfg.world, id, cfg.dataset.flat_class);
  env.level = level;
  env.seed = seed;
  return env;
}

PatchConfig patch_config(const ExperimentConfig& cfg) {
  PatchConfig p;
  p.stride = cfg.embeddings.mode == EmbeddingMode::Handcrafted ? cfg.embeddings.patch_stride : 1;
  return p;
}

// Embeds every pose of the given trajectories in place.
void attach_embeddings(const EnvironmentSpec& env, const EmbeddingPipeline& pipeline, const PatchConfig& patch,
                       std::vector<Trajectory>& trajs) {
  const auto provider = make_embedding_provider(env, pipeline, patch);
  for (auto& t : trajs) {
    t.e_elev.resize(t.size());
    t.e_sem.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      auto [e, s] = provider(t.poses[i]);
      t.e_elev[i] = e;
      t.e_sem[i] = s;
    }
  }
}

EmbeddingPipeline build_pipeline(const ExperimentConfig& cfg, const std::vector<EnvironmentSpec>& envs,
                                 const std::vector<std::vector<Trajectory>>& trajs, std::ostream& log) {
  EmbeddingPipeline pipeline;
  pipeline.mode = cfg.embeddings.mode;
  const PatchConfig patch = patch_config(cfg);
  if (cfg.embeddings.mode == EmbeddingMode::Handcrafted) {
    // Raw statistics first, then standardize over the whole corpus.
    EmbeddingPipeline raw;
    std::vector<Vec8> elev, sem;
    for (std::size_t e = 0; e < envs.size(); ++e) {
      const auto provider = make_embedding_provider(envs[e], raw, patch);
      for (const auto& t : trajs[e]) {
        for (const auto& p : t.poses) {
          auto [a, b] = provider(p);
          elev.push_back(a);
          sem.push_back(b);
        }
      }
    }
    pipeline.elevation_std = fit_standardization(elev);
    pipeline.semantic_std = fit_standardization(sem);
    return pipeline;
  }
  std::vector<std::pair<std::size_t, PoseState>> poses;
  for (std::size_t e = 0; e < envs.size(); ++e) {
    for (const auto& t : trajs[e]) {
      for (const auto& p : t.poses) poses.emplace_back(e, p);
    }
  }
  std::mt19937_64 rng(derive_seed(cfg.seed, "swae-patches"));
  const auto pick = subsample(poses.size(), static_cast<std::size_t>(cfg.embeddings.swae_patches), rng);
  for (Modality m : {Modality::Elevation, Modality::Semantic}) {
    std::vector<TerrainPatch> patches;
    for (std::size_t i : pick) patches.push_back(extract_patch(envs[poses[i].first], poses[i].second, m, patch));
    SwaeConfig sc = cfg.embeddings.swae;
    sc.seed = derive_seed(cfg.seed, m == Modality::Elevation ? "swae-elev" : "swae-sem");
    SwaeReport rep;
    auto model = train_swae(patches, sc, &rep);
    log << "swae " << (m == Modality::Elevation ? "elevation" : "semantic") << ": reconstruction mse "
        << rep.initial_mse << " -> " << rep.final_mse << "\n";
    (m == Modality::Elevation ? pipeline.elevation_model : pipeline.semantic_model) = std::move(model);
  }
  return pipeline;
}

struct MethodModel {
  std::optional<BasisSet> basis;
  std::optional<BaselineModel> baseline;
};

bool is_baseline(const std::string& method) { return method == "node" || method == "maml" || method == "mlp"; }

void check_method(const std::string& method, bool allow_gt = false) {
  if (method == "va" || is_baseline(method) || (allow_gt && method == "gt")) return;
  throw ConfigError("--method: unknown method '" + method + "' (expected va, node, maml or mlp)");
}

std::optional<MethodModel> load_method(const fs::path& dir, const std::string& tag, const std::string& method) {
  MethodModel m;
  if (method == "va") {
    const fs::path p = dir / (tag + ".basis");
    if (!fs::exists(p)) return std::nullopt;
    std::ifstream in(p, std::ios::binary);
    m.basis = read_basis(in);
  } else {
    const fs::path p = dir / (tag + ".model");
    if (!fs::exists(p)) return std::nullopt;
    std::ifstream in(p, std::ios::binary);
    m.baseline = read_baseline(in);
  }
  return m;
}

std::vector<ConditionedSample> transitions(const std::vector<const Trajectory*>& trajs) {
  std::vector<ConditionedSample> out;
  for (const auto* t : trajs) {
    for (std::size_t i = 0; i + 1 < t->size(); ++i) out.push_back(t->sample(i));
  }
  return out;
}

void check_manifest(const fs::path& ck, const std::string& tag, std::uint64_t manifest) {
  const fs::path meta = ck / (tag + ".meta.json");
  if (!fs::exists(meta)) return;
  const json j = json::parse(read_text(meta));
  if (j.value("manifest", std::string()) != hex64(manifest)) {
    throw FormatError("dataset/manifest mismatch: checkpoint '" + tag + "' was trained on manifest " +
                      j.value("manifest", std::string("?")) + ", dataset has " + hex64(manifest));
  }
}

void write_meta(const fs::path& ck, const std::string& tag, std::uint64_t manifest, std::int64_t steps) {
  json j{{"tag", tag}, {"manifest", hex64(manifest)}, {"steps", steps}};
  write_text(ck / (tag + ".meta.json"), j.dump(2) + "\n");
}

// Keeps the header and the lines of steps before `keep_steps`.
std::string truncate_metrics(const fs::path& p, std::int64_t keep_steps) {
  std::istringstream in(fs::exists(p) ? read_text(p) : std::string());
  std::string line, out;
  std::int64_t n = -1;
  while (std::getline(in, line) && n < keep_steps) {
    out += line + "\n";
    ++n;
  }
  if (out.empty()) out = std::string(kMetricsHeader) + "\n";
  return out;
}

StepPredictor predictor_for(const MethodModel& m, const VecX& alpha) {
  if (m.basis) return basis_predictor(*m.basis, alpha);
  return baseline_predictor(*m.baseline);
}

}  // namespace

std::string Ablation::suffix() const {
  if (drop_elevation && drop_semantic) return "wo-both";
  if (drop_elevation) return "wo-elev";
  if (drop_semantic) return "wo-sem";
  return "";
}

Ablation parse_ablation(std::string_view name) {
  if (name == "none" || name.empty()) return {};
  if (name == "semantic") return {false, true};
  if (name == "elevation") return {true, false};
  if (name == "both") return {true, true};
  throw ConfigError("--ablate: unknown value '" + std::string(name) + "' (expected semantic, elevation or both)");
}

std::string method_tag(const std::string& method, const Ablation& ablation) {
  return ablation.any() ? method + "-" + ablation.suffix() : method;
}

Dataset DatasetBundle::training() const {
  Dataset d;
  for (std::size_t i = 0; i < data.envs.size(); ++i) {
    if (std::find(held_out.begin(), held_out.end(), i) == held_out.end()) d.envs.push_back(data.envs[i]);
  }
  return d;
}

DatasetBundle load_dataset(const std::string& dir) {
  DatasetBundle b;
  b.dir = dir;
  const fs::path root(dir);
  const fs::path mpath = root / kManifest;
  if (!fs::exists(mpath)) throw FormatError("dataset: no manifest in '" + dir + "'");
  b.manifest_checksum = file_checksum(mpath.string());
  json m;
  try {
    m = json::parse(read_text(mpath));
  } catch (const json::exception& e) {
    throw FormatError(std::string("dataset manifest: ") + e.what());
  }
  if (m.value("schema", std::string()) != "kinofe-dataset" || m.value("version", 0) != 1) {
    throw FormatError("dataset manifest: unsupported schema");
  }
  auto verify = [&](const json& entry) {
    const std::string file = entry.at("file").get<std::string>();
    const std::string want = entry.at("checksum").get<std::string>();
    const fs::path p = root / file;
    if (!fs::exists(p)) throw FormatError("dataset/manifest mismatch: missing file " + file);
    const std::string got = hex64(file_checksum(p.string()));
    if (got != want) {
      throw FormatError("dataset/manifest mismatch: " + file + " has checksum " + got + ", manifest says " + want);
    }
    return p.string();
  };
  b.pipeline = read_pipeline(verify(m.at("pipeline")));
  std::map<ElevationLevel, std::size_t> last;
  for (const auto& e : m.at("envs")) {
    b.specs.push_back(read_environment(verify(e)));
    EnvironmentData data;
    data.id = e.at("id").get<std::string>();
    data.level = parse_level(e.at("level").get<std::string>());
    if (data.id != b.specs.back().id) throw FormatError("dataset/manifest mismatch: environment id " + data.id);
    for (const auto& t : e.at("trajectories")) data.trajectories.push_back(read_trajectory(verify(t)));
    last[data.level] = b.data.envs.size();
    b.data.envs.push_back(std::move(data));
  }
  for (auto [level, idx] : last) b.held_out.push_back(idx);
  std::sort(b.held_out.begin(), b.held_out.end());
  return b;
}

HeldOutSplit split_held_out(const EnvironmentData& env, int buffer_size, int windows, int horizon,
                            std::uint64_t seed) {
  const std::size_t n = env.trajectories.size();
  if (n < 2) throw InvalidArgument("split_held_out: environment " + env.id + " needs >= 2 trajectories");
  const std::size_t n_ex = (n + 1) / 2;
  std::vector<const Trajectory*> ex, ev;
  for (std::size_t i = 0; i < n; ++i) (i < n_ex ? ex : ev).push_back(&env.trajectories[i]);
  HeldOutSplit s;
  std::mt19937_64 rng(seed);
  const auto pool = transitions(ex);
  for (std::size_t i : subsample(pool.size(), static_cast<std::size_t>(buffer_size), rng)) s.buffer.push_back(pool[i]);
  s.eval_samples = transitions(ev);
  std::vector<const Trajectory*> long_enough;
  for (const auto* t : ev) {
    if (t->size() >= static_cast<std::size_t>(horizon) + 1) long_enough.push_back(t);
  }
  if (long_enough.empty()) {
    throw InvalidArgument("split_held_out: no evaluation trajectory of environment " + env.id + " spans " +
                          std::to_string(horizon) + " steps");
  }
  for (int w = 0; w < windows; ++w) {
    const auto* t = long_enough[std::uniform_int_distribution<std::size_t>(0, long_enough.size() - 1)(rng)];
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, t->size() - horizon - 1)(rng);
    s.windows.push_back(make_window(*t, start, horizon));
  }
  if (s.buffer.empty() || s.eval_samples.empty()) {
    throw InvalidArgument("split_held_out: environment " + env.id + " has too few transitions");
  }
  return s;
}

Vec6 one_step_mse(const StepPredictor& model, std::span<const ConditionedSample> samples) {
  if (samples.empty()) throw InvalidArgument("one_step_mse: no samples");
  const SampleMatrices m = pack_samples(samples);
  const MatX err = model(m.inputs, m.controls) - m.targets;
  return err.array().square().rowwise().mean();
}

std::vector<double> horizon_mse(const StepPredictor& model, std::span<const RolloutWindow> windows,
                                std::span<const int> horizons) {
  if (windows.empty()) throw InvalidArgument("horizon_mse: no windows");
  const auto preds = rollout_batch(model, windows);
  std::vector<double> out;
  for (int h : horizons) {
    if (h < 1 || h > windows.front().horizon()) throw InvalidArgument("horizon_mse: horizon out of range");
    double sum = 0.0;
    for (std::size_t j = 0; j < windows.size(); ++j) {
      sum += wrap_angles(preds[j][h - 1].vec() - windows[j].truth[h - 1].vec()).squaredNorm();
    }
    out.push_back(sum / (static_cast<double>(windows.size()) * kStateDim));
  }
  return out;
}

int cmd_generate(const ExperimentConfig& cfg, const CommandOptions& opt) {
  cfg.validate();
  auto& log = log_of(opt);
  const fs::path out = out_dir_of(cfg, opt);
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!opt.overwrite) {
      throw ConfigError("output directory '" + out.string() + "' is not empty; pass --overwrite to replace it");
    }
    for (const char* name : {"envs", "trajs", kManifest, kPipelineFile, "config.json"}) fs::remove_all(out / name);
  }
  fs::create_directories(out / "envs");
  fs::create_directories(out / "trajs");

  std::vector<EnvironmentSpec> envs;
  std::vector<std::vector<Trajectory>> trajs;
  for (ElevationLevel level : cfg.dataset.levels) {
    for (int e = 0; e < cfg.dataset.envs_per_level; ++e) {
      std::ostringstream id;
      id << to_string(level) << '_' << std::setw(2) << std::setfill('0') << e;
      const std::uint64_t seed = derive_seed(cfg.seed, "env/" + id.str());
      envs.push_back(build_environment(cfg, level, id.str(), seed));
      std::vector<Trajectory> ts;
      for (int j = 0; j < cfg.dataset.trajectories_per_env; ++j) {
        ts.push_back(explore(envs.back(), cfg.dataset.duration, derive_seed(seed, "traj/" + std::to_string(j)),
                             cfg.world));
      }
      trajs.push_back(std::move(ts));
      log << "generated " << id.str() << "\n";
    }
  }
  const EmbeddingPipeline pipeline = build_pipeline(cfg, envs, trajs, log);
  write_pipeline((out / kPipelineFile).string(), pipeline);

  json manifest{{"schema", "kinofe-dataset"},
                {"version", 1},
                {"seed", cfg.seed},
                {"trajectory_schema", kTrajectorySchema},
                {"pipeline", {{"file", kPipelineFile}, {"checksum", hex64(file_checksum((out / kPipelineFile).string()))}}},
                {"envs", json::array()}};
  const PatchConfig patch = patch_config(cfg);
  for (std::size_t e = 0; e < envs.size(); ++e) {
    attach_embeddings(envs[e], pipeline, patch, trajs[e]);
    const std::string env_file = "envs/" + envs[e].id + ".env";
    write_environment((out / env_file).string(), envs[e]);
    json entry{{"id", envs[e].id},
               {"level", to_string(envs[e].level)},
               {"file", env_file},
               {"checksum", hex64(file_checksum((out / env_file).string()))},
               {"trajectories", json::array()}};
    for (std::size_t j = 0; j < trajs[e].size(); ++j) {
      std::ostringstream name;
      name << "trajs/" << envs[e].id << '_' << std::setw(2) << std::setfill('0') << j << ".traj";
      write_trajectory((out / name.str()).string(), trajs[e][j]);
      entry["trajectories"].push_back({{"file", name.str()},
                                       {"records", trajs[e][j].size()},
                                       {"checksum", hex64(file_checksum((out / name.str()).string()))}});
    }
    manifest["envs"].push_back(std::move(entry));
  }
  save_config((out / "config.json").string(), cfg);
  write_text(out / kManifest, manifest.dump(2) + "\n");
  log << "manifest " << hex64(file_checksum((out / kManifest).string())) << "\n";
  return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg, const CommandOptions& opt) {
  cfg.validate();
  check_method(opt.method);
  auto& log = log_of(opt);
  const DatasetBundle bundle = load_dataset(dataset_dir_of(cfg, opt).string());
  Dataset data = bundle.training();
  if (opt.ablation.any()) data = ablate(data, opt.ablation.drop_elevation, opt.ablation.drop_semantic);
  const fs::path ck = checkpoint_dir_of(cfg, opt);
  fs::create_directories(ck);
  const std::string tag = method_tag(opt.method, opt.ablation);
  const fs::path metrics = ck / ("train_" + tag + ".csv");

  TrainConfig tc = cfg.trainer.train;
  tc.seed = derive_seed(cfg.seed, "train/" + opt.method);

  if (opt.method == "va") {
    const fs::path state = ck / (tag + ".ckpt");
    std::optional<Trainer> trainer;
    if (opt.resume && fs::exists(state)) {
      check_manifest(ck, tag, bundle.manifest_checksum);
      std::ifstream in(state, std::ios::binary);
      trainer.emplace(Trainer::load(in, tc));
      log << "resuming " << tag << " at step " << trainer->steps_done() << "\n";
    } else {
      trainer.emplace(tc);
    }
    std::string lines = truncate_metrics(metrics, trainer->steps_done());
    auto checkpoint = [&] {
      {
        std::ofstream os(state, std::ios::binary);
        trainer->save(os);
      }
      write_meta(ck, tag, bundle.manifest_checksum, trainer->steps_done());
      write_text(metrics, lines);
    };
    while (trainer->steps_done() < cfg.trainer.steps) {
      const auto r = trainer->step(data);
      lines += metrics_line(r, tag) + "\n";
      if (r.step % 50 == 0) log << tag << " step " << r.step << " loss " << r.total << "\n";
      if (trainer->steps_done() % cfg.trainer.checkpoint_every == 0) checkpoint();
    }
    checkpoint();
    std::ofstream os(ck / (tag + ".basis"), std::ios::binary);
    write_basis(os, trainer->basis());
    return kExitOk;
  }

  const BaselineKind kind = parse_baseline_kind(opt.method);
  const fs::path model_path = ck / (tag + ".model");
  if (opt.resume && fs::exists(model_path)) {
    check_manifest(ck, tag, bundle.manifest_checksum);
    log << tag << " already trained; nothing to resume\n";
    return kExitOk;
  }
  PretrainConfig pc;
  pc.train = tc;
  pc.train.schedule = {cfg.baselines.lr_start, cfg.baselines.lr_end, cfg.baselines.steps};
  pc.steps = cfg.baselines.steps;
  pc.inner_lr = cfg.baselines.inner_lr;
  pc.samples_per_env = cfg.baselines.samples_per_env;
  std::string lines = std::string(kMetricsHeader) + "\n";
  const BaselineModel model = pretrain(kind, data, pc, [&](const RolloutLossReport& r) {
    lines += metrics_line(r, tag) + "\n";
    if (r.step % 50 == 0) log << tag << " step " << r.step << " loss " << r.total << "\n";
  });
  write_text(metrics, lines);
  std::ofstream os(model_path, std::ios::binary);
  write_baseline(os, model);
  os.close();
  write_meta(ck, tag, bundle.manifest_checksum, pc.steps);
  return kExitOk;
}

int cmd_evaluate(const ExperimentConfig& cfg, const CommandOptions& opt) {
  cfg.validate();
  auto& log = log_of(opt);
  const DatasetBundle bundle = load_dataset(dataset_dir_of(cfg, opt).string());
  Dataset data = bundle.data;
  if (opt.ablation.any()) data = ablate(data, opt.ablation.drop_elevation, opt.ablation.drop_semantic);
  const fs::path ck = checkpoint_dir_of(cfg, opt);
  const fs::path out = out_dir_of(cfg, opt);
  fs::create_directories(out);

  std::vector<std::string> methods;
  if (opt.method == "all") {
    methods = {"va", "node", "maml", "mlp"};
  } else {
    check_method(opt.method);
    methods = {opt.method};
  }
  const auto& horizons = cfg.evaluation.horizons;
  const int max_h = *std::max_element(horizons.begin(), horizons.end());
  const std::string suffix = opt.ablation.any() ? "_" + opt.ablation.suffix() : "";

  std::ostringstream csv, txt, series, timing;
  csv << kResultsSchema << "\nmethod,level,env,one_step_mse,x,y,z,roll,pitch,yaw";
  for (int h : horizons) csv << ",h" << h;
  csv << "\n";
  txt << kResultsSchema << "\n" << std::left << std::setw(14) << "method" << std::setw(8) << "level"
      << std::setw(12) << "one-step";
  for (int h : horizons) txt << std::setw(12) << ("h" + std::to_string(h));
  txt << "\n";
  series << "method,level,horizon,mse\n";
  timing << "method,level,env,adapt_seconds\n";

  int missing = 0;
  for (const auto& method : methods) {
    const std::string tag = method_tag(method, opt.ablation);
    std::optional<MethodModel> model;
    try {
      check_manifest(ck, tag, bundle.manifest_checksum);
      model = load_method(ck, tag, method);
    } catch (const std::exception& e) {
      log << "checkpoint " << tag << ": " << e.what() << "\n";
    }
    if (!model) {
      log << "missing checkpoint for " << tag << " in " << ck.string() << "\n";
      ++missing;
      continue;
    }
    for (std::size_t idx : bundle.held_out) {
      const auto& env = data.envs[idx];
      const auto split = split_held_out(env, cfg.encoder.adapt_samples, cfg.evaluation.windows_per_env, max_h,
                                        derive_seed(cfg.seed, "eval/" + env.id));
      StepPredictor pred;
      double seconds = 0.0;
      if (model->basis) {
        const auto r = adapt(*model->basis, split.buffer, cfg.encoder.lambda, cfg.encoder.batch);
        seconds = r.seconds;
        pred = predictor_for(*model, r.coefficients.alpha);
      } else {
        AdaptOptions ao;
        ao.budget = cfg.baselines.budget(model->baseline->kind);
        ao.early_stop = cfg.baselines.early_stop;
        auto r = adapt_baseline(*model->baseline, split.buffer, ao);
        seconds = r.seconds;
        MethodModel adapted;
        adapted.baseline = std::move(r.model);
        pred = predictor_for(adapted, VecX());
      }
      const Vec6 per_dim = one_step_mse(pred, split.eval_samples);
      const auto hm = horizon_mse(pred, split.windows, horizons);
      const std::string level = to_string(env.level);
      csv << tag << ',' << level << ',' << env.id << ',' << fmt(per_dim.mean());
      for (int d = 0; d < kStateDim; ++d) csv << ',' << fmt(per_dim[d]);
      for (double v : hm) csv << ',' << fmt(v);
      csv << "\n";
      txt << std::setw(14) << tag << std::setw(8) << level << std::setw(12) << fmt(per_dim.mean(), 5);
      for (double v : hm) txt << std::setw(12) << fmt(v, 5);
      txt << "\n";
      for (std::size_t i = 0; i < horizons.size(); ++i) {
        series << tag << ',' << level << ',' << horizons[i] << ',' << fmt(hm[i]) << "\n";
      }
      timing << tag << ',' << level << ',' << env.id << ',' << fmt(seconds) << "\n";
      log << tag << " " << env.id << " one-step " << per_dim.mean() << " adapt " << seconds << " s\n";
    }
  }
  write_text(out / ("results" + suffix + ".csv"), csv.str());
  write_text(out / ("results" + suffix + ".txt"), txt.str());
  write_text(out / ("horizons" + suffix + ".csv"), series.str());
  write_text(out / ("timing" + suffix + ".csv"), timing.str());
  if (missing == static_cast<int>(methods.size())) return kExitRuntime;
  return missing ? kExitPartial : kExitOk;
}

int cmd_navigate(const ExperimentConfig& cfg, const CommandOptions& opt) {
  cfg.validate();
  check_method(opt.method, true);
  auto& log = log_of(opt);
  const DatasetBundle bundle = load_dataset(dataset_dir_of(cfg, opt).string());
  const fs::path ck = checkpoint_dir_of(cfg, opt);
  const fs::path out = out_dir_of(cfg, opt);
  fs::create_directories(out);
  AdaptationPolicy policy = cfg.planner.policy;
  if (opt.adapt_mode) policy.mode = *opt.adapt_mode;

  std::optional<MethodModel> model;
  std::string tag = opt.method;
  if (opt.method != "gt") {
    tag = method_tag(opt.method, opt.ablation);
    check_manifest(ck, tag, bundle.manifest_checksum);
    model = load_method(ck, tag, opt.method);
    if (!model) throw FormatError("missing checkpoint for " + tag + " in " + ck.string());
  }
  const std::string run = opt.method == "va" ? tag + "-" + to_string(policy.mode) : tag;
  const PatchConfig patch = patch_config(cfg);

  std::ostringstream csv, txt;
  csv << kNavigationHeader << ",level,env,error\n";
  txt << kResultsSchema << "\n"
      << std::left << std::setw(18) << "method" << std::setw(8) << "level" << std::setw(10) << "success"
      << std::setw(12) << "time[s]" << std::setw(22) << "roll[deg]" << "pitch[deg]\n";
  int errors = 0;
  const double rad2deg = 180.0 / kPi;
  for (std::size_t idx : bundle.held_out) {
    const auto& env = bundle.specs[idx];
    const auto& data = bundle.data.envs[idx];
    NavigationModel nm;
    if (model && model->basis) {
      nm.basis = &*model->basis;
      const auto split = split_held_out(data, cfg.encoder.adapt_samples, 1, 1, derive_seed(cfg.seed, "eval/" + env.id));
      nm.alpha = adapt(*model->basis, split.buffer, cfg.encoder.lambda, cfg.encoder.batch).coefficients.alpha;
      nm.embed = make_embedding_provider(env, bundle.pipeline, patch);
      nm.embed_stride = cfg.planner.embed_stride;
    } else if (model) {
      const auto split = split_held_out(data, cfg.encoder.adapt_samples, 1, 1, derive_seed(cfg.seed, "eval/" + env.id));
      AdaptOptions ao;
      ao.budget = cfg.baselines.budget(model->baseline->kind);
      ao.early_stop = cfg.baselines.early_stop;
      MethodModel adapted;
      adapted.baseline = adapt_baseline(*model->baseline, split.buffer, ao).model;
      nm.fixed = learned_model(predictor_for(adapted, VecX()), make_embedding_provider(env, bundle.pipeline, patch),
                               cfg.planner.embed_stride);
    } else {
      nm.fixed = ground_truth_model(env, cfg.world);
    }
    int successes = 0;
    double time_sum = 0.0, roll = 0.0, roll_var = 0.0, pitch = 0.0, pitch_var = 0.0;
    for (int t = 0; t < cfg.planner.trials; ++t) {
      const std::uint64_t seed = derive_seed(cfg.seed, "nav/" + env.id + "/" + std::to_string(t));
      NavigationReport rep;
      std::string error;
      try {
        std::mt19937_64 rng(seed);
        const double margin = cfg.world.boundary_margin + 1.0;
        std::uniform_real_distribution<double> coord(margin, env.side - margin);
        std::uniform_real_distribution<double> heading(-kPi, kPi);
        PoseState start;
        Vec2 goal;
        bool placed = false;
        for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
          start.x = coord(rng);
          start.y = coord(rng);
          start.yaw = heading(rng);
          goal = {start.x + cfg.planner.mission_length * std::cos(start.yaw),
                  start.y + cfg.planner.mission_length * std::sin(start.yaw)};
          placed = env.in_bounds(goal[0], goal[1], margin);
        }
        if (!placed) throw InvalidArgument("could not place a mission of the requested length");
        NavigationConfig nc;
        nc.mppi = cfg.planner.mppi;
        nc.world = cfg.world;
        nc.timeout = cfg.planner.timeout;
        nc.seed = seed;
        rep = run_navigation(env, start, goal, nm, policy, nc);
      } catch (const std::exception& e) {
        error = e.what();
        ++errors;
      }
      csv << navigation_line(rep, run) << ',' << to_string(env.level) << ',' << env.id << ','
          << (error.empty() ? "-" : "\"" + error + "\"") << "\n";
      if (rep.success) {
        ++successes;
        time_sum += rep.time;
      }
      roll += rep.mean_roll;
      roll_var += rep.var_roll;
      pitch += rep.mean_pitch;
      pitch_var += rep.var_pitch;
    }
    const double n = cfg.planner.trials;
    std::ostringstream r, p;
    r << std::fixed << std::setprecision(2) << roll / n * rad2deg << " +- " << roll_var / n * rad2deg * rad2deg;
    p << std::fixed << std::setprecision(2) << pitch / n * rad2deg << " +- " << pitch_var / n * rad2deg * rad2deg;
    txt << std::setw(18) << run << std::setw(8) << to_string(env.level) << std::setw(10)
        << (std::to_string(successes) + "/" + std::to_string(cfg.planner.trials)) << std::setw(12)
        << (successes ? fmt(time_sum / successes, 4) : std::string("-")) << std::setw(22) << r.str() << p.str() << "\n";
    log << run << " " << env.id << ": " << successes << "/" << cfg.planner.trials << " successes\n";
  }
  write_text(out / ("navigation_" + run + ".csv"), csv.str());
  write_text(out / ("navigation_" + run + ".txt"), txt.str());
  return errors ? kExitPartial : kExitOk;
}

int cmd_adapt_bench(const ExperimentConfig& cfg, const CommandOptions& opt) {
  cfg.validate();
  auto& log = log_of(opt);
  const DatasetBundle bundle = load_dataset(dataset_dir_of(cfg, opt).string());
  const fs::path ck = checkpoint_dir_of(cfg, opt);
  const fs::path out = out_dir_of(cfg, opt);
  fs::create_directories(out);
  const auto& env = bundle.data.envs[bundle.held_out.front()];
  const auto split = split_held_out(env, cfg.encoder.adapt_samples, 1, 1, derive_seed(cfg.seed, "eval/" + env.id));
  const TrainConfig& tc = cfg.trainer.train;

  std::ostringstream csv, timing;
  csv << "method,steps,initial_loss,final_loss\n";
  timing << "method,seconds\n";

  auto va = load_method(ck, "va", "va");
  if (!va) {
    log << "no trained basis; timing a freshly initialized one of the same size\n";
    std::mt19937_64 rng(derive_seed(cfg.seed, "bench/va"));
    va = MethodModel{BasisSet(tc.k, rng, tc.rk4(), tc.hidden_width(), tc.depth), std::nullopt};
  }
  const auto r = adapt(*va->basis, split.buffer, cfg.encoder.lambda, cfg.encoder.batch);
  const Vec6 va_mse = one_step_mse(predictor_for(*va, r.coefficients.alpha), split.buffer);
  csv << "va,1,-," << fmt(va_mse.mean()) << "\n";
  timing << "va," << fmt(r.seconds) << "\n";
  std::map<std::string, double> secs{{"va", r.seconds}};

  for (const std::string method : {"node", "maml", "mlp"}) {
    const BaselineKind kind = parse_baseline_kind(method);
    auto m = load_method(ck, method, method);
    if (!m) {
      std::mt19937_64 rng(derive_seed(cfg.seed, "bench/" + method));
      m = MethodModel{std::nullopt, make_baseline(kind, tc.hidden_width(), tc.depth, rng, tc.rk4())};
    }
    AdaptOptions ao;
    ao.budget = cfg.baselines.budget(kind);
    ao.early_stop = false;
    const auto rep = adapt_baseline(*m->baseline, split.buffer, ao);
    csv << method << ',' << rep.steps_run << ',' << fmt(rep.initial_loss) << ',' << fmt(rep.final_loss) << "\n";
    timing << method << ',' << fmt(rep.seconds) << "\n";
    secs[method] = rep.seconds;
    log << method << ": " << rep.steps_run << " steps in " << rep.seconds << " s\n";
  }
  write_text(out / "adapt_bench.csv", csv.str());
  write_text(out / "adapt_bench_timing.csv", timing.str());
  const bool ordered = secs["va"] < secs["node"] && secs["node"] < secs["maml"] && secs["maml"] < secs["mlp"];
  log << "va " << secs["va"] << " s, node/va ratio " << secs["node"] / secs["va"]
      << (ordered ? ", ordering va < node < maml < mlp holds\n" : ", ordering does not hold\n");
  return kExitOk;
}

}  // namespace kinofe
