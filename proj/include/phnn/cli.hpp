#pragma once

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "phnn/pipeline.hpp"

// Command-line frontend. The pipeline stages are exposed both individually and
// as one `run` command; a JSON config document seeds the settings and explicit
// flags override its fields.

namespace phnn::cli {

inline int exit_code_for(const error& e) {
  switch (e.code()) {
    case errc::numeric: return 3;
    case errc::missing: return 4;
    default: return 2;  // config, shape, io
  }
}

struct CliOptions {
  std::string command;
  std::string preset;
  std::string config_file;
  std::string out;
  std::vector<std::string> archs;
  std::optional<double> sigma;
  std::optional<int> iterations;
  std::optional<int> batch_size;
  std::optional<double> learning_rate;
  std::optional<double> lambda_force;
  std::optional<double> lambda_damping;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed_data, seed_init, seed_shuffle;
  std::optional<int> width, depth;
  std::optional<std::string> activation;
  std::optional<double> t_max;
  std::optional<double> poincare_t_max;
  unsigned jobs = 0;
  bool fast = false;
};

inline ExperimentConfig build_config(const CliOptions& opt) {
  ExperimentConfig cfg;
  if (!opt.preset.empty()) cfg = preset_config(opt.preset);
  if (!opt.config_file.empty()) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(read_file(opt.config_file));
    } catch (const nlohmann::json::exception& e) {
      fail(errc::config, "cannot parse config " + opt.config_file + ": " + e.what());
    }
    if (doc.contains("preset") && opt.preset.empty())
      cfg = preset_config(doc.at("preset").get<std::string>());
    config_apply_json(cfg, doc);
  }
  if (opt.fast) apply_fast_mode(cfg);  // explicit flags below override the fast profile
  if (opt.sigma) cfg.noise_sigma = *opt.sigma;
  if (!opt.archs.empty()) {
    cfg.architectures.clear();
    for (const auto& a : opt.archs) cfg.architectures.push_back(model::arch_from_name(a));
  }
  if (opt.iterations) cfg.train.iterations = *opt.iterations;
  if (opt.batch_size) cfg.train.batch_size = *opt.batch_size;
  if (opt.learning_rate) cfg.train.learning_rate = *opt.learning_rate;
  if (opt.lambda_force) cfg.train.lambda_force = *opt.lambda_force;
  if (opt.lambda_damping) cfg.train.lambda_damping = *opt.lambda_damping;
  if (opt.mode) cfg.train.mode = training::mode_from_name(*opt.mode);
  if (opt.seed_data) cfg.seed_data = *opt.seed_data;
  if (opt.seed_init) cfg.seed_init = *opt.seed_init;
  if (opt.seed_shuffle) cfg.seed_shuffle = *opt.seed_shuffle;
  if (opt.width) cfg.width = *opt.width;
  if (opt.depth) cfg.depth = *opt.depth;
  if (opt.activation) cfg.activation = model::activation_from_name(*opt.activation);
  if (opt.t_max) cfg.t_max = *opt.t_max;
  if (opt.poincare_t_max) cfg.poincare_t_max = *opt.poincare_t_max;
  cfg.jobs = opt.jobs;

  if (!opt.out.empty()) {
    cfg.out_dir = opt.out;
  } else {
    const char* root = std::getenv("PHNN_OUT_ROOT");
    const fs::path base = root != nullptr ? fs::path(root) : fs::path("runs");
    cfg.out_dir = base / (cfg.preset.empty() ? std::string("experiment") : cfg.preset);
  }
  if (cfg.architectures.empty()) fail(errc::config, "no architectures selected");
  return cfg;
}

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"port-Hamiltonian neural network experiment pipeline"};
  app.require_subcommand(1);

  CliOptions opt;
  const std::vector<std::string> commands = {"run",      "generate",   "train",  "rollout",
                                             "evaluate", "poincare",   "gridsearch", "report"};
  for (const auto& name : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--preset", opt.preset, "experiment preset name");
    sub->add_option("--config", opt.config_file, "JSON config document");
    sub->add_option("--out", opt.out, "output directory");
    sub->add_option("--arch", opt.archs, "architecture (repeatable)");
    sub->add_option("--sigma", opt.sigma, "input noise standard deviation");
    sub->add_option("--iterations", opt.iterations, "training iterations");
    sub->add_option("--batch-size", opt.batch_size, "minibatch size (0 = auto)");
    sub->add_option("--learning-rate", opt.learning_rate, "optimizer step size");
    sub->add_option("--lambda-force", opt.lambda_force, "L1 weight on the learned force");
    sub->add_option("--lambda-damping", opt.lambda_damping, "L1 weight on the damping scalar");
    sub->add_option("--mode", opt.mode, "derivative | embedded_rk4");
    sub->add_option("--seed-data", opt.seed_data, "dataset seed");
    sub->add_option("--seed-init", opt.seed_init, "parameter init seed");
    sub->add_option("--seed-shuffle", opt.seed_shuffle, "batch shuffle seed");
    sub->add_option("--width", opt.width, "hidden layer width");
    sub->add_option("--depth", opt.depth, "hidden layer count");
    sub->add_option("--activation", opt.activation, "tanh | sin | cos");
    sub->add_option("--t-max", opt.t_max, "trajectory horizon");
    sub->add_option("--poincare-t-max", opt.poincare_t_max, "stroboscopic rollout horizon");
    sub->add_option("--jobs", opt.jobs, "parallel workers within a stage");
    sub->add_flag("--fast", opt.fast, "desk-scale settings: 3000 iterations, width 64");
    sub->callback([&opt, name] { opt.command = name; });
  }

  std::reverse(args.begin(), args.end());  // CLI11 consumes back to front
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    ExperimentConfig cfg = build_config(opt);
    if (opt.command == "run") {
      run_pipeline(cfg);
    } else if (opt.command == "generate") {
      stage_generate(cfg);
    } else if (opt.command == "train") {
      for (auto arch : cfg.architectures) stage_train(cfg, arch);
    } else if (opt.command == "rollout") {
      for (auto arch : cfg.architectures) stage_rollout(cfg, arch);
    } else if (opt.command == "evaluate") {
      stage_evaluate(cfg);
    } else if (opt.command == "poincare") {
      stage_poincare(cfg);
    } else if (opt.command == "gridsearch") {
      stage_gridsearch(cfg);
    } else if (opt.command == "report") {
      stage_report(cfg);
    }
    return 0;
  } catch (const error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(std::move(args));
}

}  // namespace phnn::cli
