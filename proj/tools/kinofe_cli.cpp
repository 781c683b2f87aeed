// kinofe: dataset generation, training, evaluation, navigation and adaptation benchmarks.

#include "kinofe/experiments.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

namespace {

using namespace kinofe;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string dataset;
  std::string checkpoints;
  std::string method;
  std::string ablate = "none";
  std::string adapt_mode;
  bool overwrite = false;
  bool resume = false;
};

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? desk_config() : load_config(c.config_path);
  apply_env_overrides(cfg);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

CommandOptions resolve_options(const Common& c, const std::string& default_method) {
  CommandOptions o;
  o.dataset_dir = c.dataset;
  o.checkpoint_dir = c.checkpoints;
  o.out_dir = c.out;
  o.method = c.method.empty() ? default_method : c.method;
  o.ablation = parse_ablation(c.ablate);
  if (!c.adapt_mode.empty()) {
    try {
      o.adapt_mode = parse_adapt_mode(c.adapt_mode);
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("--adapt-mode: ") + e.what());
    }
  }
  o.overwrite = c.overwrite;
  o.resume = c.resume;
  o.log = &std::cerr;
  return o;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON experiment configuration")->check(CLI::ExistingFile);
  sub->add_option("--seed", c.seed, "Master seed (overrides the config)");
  sub->add_option("--out", c.out, "Output directory");
}

void add_dataset(CLI::App* sub, Common& c) {
  sub->add_option("--dataset", c.dataset, "Dataset directory written by 'generate'");
  sub->add_option("--checkpoints", c.checkpoints, "Checkpoint directory (defaults to --out)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Terrain-adaptive kinodynamics with function-encoder basis networks"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("generate", "Build environments, exploration trajectories and embeddings");
  add_common(gen, c);
  gen->add_flag("--overwrite", c.overwrite, "Replace an existing dataset in --out");

  auto* train = app.add_subcommand("train", "Train the basis (va) or a baseline");
  add_common(train, c);
  add_dataset(train, c);
  train->add_option("--method", c.method, "va, node, maml or mlp")->check(CLI::IsMember({"va", "node", "maml", "mlp"}));
  train->add_option("--ablate", c.ablate, "Drop embeddings: semantic, elevation or both")
      ->check(CLI::IsMember({"none", "semantic", "elevation", "both"}));
  train->add_flag("--resume", c.resume, "Continue from the last checkpoint");

  auto* eval = app.add_subcommand("evaluate", "Adapt on held-out environments and score predictions");
  add_common(eval, c);
  add_dataset(eval, c);
  eval->add_option("--method", c.method, "va, node, maml, mlp or all")
      ->check(CLI::IsMember({"va", "node", "maml", "mlp", "all"}));
  eval->add_option("--ablate", c.ablate, "Drop embeddings: semantic, elevation or both")
      ->check(CLI::IsMember({"none", "semantic", "elevation", "both"}));

  auto* nav = app.add_subcommand("navigate", "Closed-loop MPPI missions on held-out environments");
  add_common(nav, c);
  add_dataset(nav, c);
  nav->add_option("--method", c.method, "va, node, maml, mlp or gt")
      ->check(CLI::IsMember({"va", "node", "maml", "mlp", "gt"}));
  nav->add_option("--adapt-mode", c.adapt_mode, "once or periodic")->check(CLI::IsMember({"once", "periodic"}));
  nav->add_option("--ablate", c.ablate, "Drop embeddings: semantic, elevation or both")
      ->check(CLI::IsMember({"none", "semantic", "elevation", "both"}));

  auto* bench = app.add_subcommand("adapt-bench", "Time adaptation of every method on one buffer");
  add_common(bench, c);
  add_dataset(bench, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    const ExperimentConfig cfg = resolve_config(c);
    if (gen->parsed()) return cmd_generate(cfg, resolve_options(c, "va"));
    if (train->parsed()) return cmd_train(cfg, resolve_options(c, "va"));
    if (eval->parsed()) return cmd_evaluate(cfg, resolve_options(c, "all"));
    if (nav->parsed()) return cmd_navigate(cfg, resolve_options(c, "va"));
    if (bench->parsed()) return cmd_adapt_bench(cfg, resolve_options(c, "va"));
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
