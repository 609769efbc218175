#include <CLI11.hpp>
#include <iostream>
#include <string>

#include "tascforge/log.hpp"
#include "tascforge/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  long long seed = -1;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration file")->required();
  cmd->add_option("--seed", args.seed, "override the config seed");
  cmd->add_option("--out", args.out_dir, "override the output directory");
}

tascforge::RunConfig load_with_overrides(const CommonArgs& args) {
  auto config = tascforge::load_config(args.config_path);
  if (args.seed >= 0) config.seed = static_cast<std::uint64_t>(args.seed);
  if (!args.out_dir.empty()) config.out_dir = args.out_dir;
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "tascforge: two-stage transfer-learning pipeline (GP/EI head tuning, "
      "trajectory-similarity filter pruning)"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string backbone_path, model_path;

  auto* pretrain = app.add_subcommand("pretrain", "train the backbone on the source dataset");
  add_common(pretrain, args);
  auto* tune = app.add_subcommand("tune", "Bayesian-optimize the head on the target dataset");
  add_common(tune, args);
  tune->add_option("--backbone", backbone_path, "backbone checkpoint to tune on");
  auto* prune = app.add_subcommand("prune", "similarity-based filter pruning loop");
  add_common(prune, args);
  prune->add_option("--model", model_path, "checkpoint to prune (default: tuned.tasc)");
  auto* run = app.add_subcommand("run", "full pipeline: pretrain, tune, prune, report");
  add_common(run, args);
  auto* oracle = app.add_subcommand("oracle", "brute-force evaluation of the whole space");
  add_common(oracle, args);
  auto* report = app.add_subcommand("report", "summarize run artifacts as a table");
  add_common(report, args);

  CLI11_PARSE(app, argc, argv);

  try {
    auto config = load_with_overrides(args);
    if (pretrain->parsed()) return tascforge::cmd_pretrain(config);
    if (tune->parsed()) return tascforge::cmd_tune(config, backbone_path);
    if (prune->parsed()) return tascforge::cmd_prune(config, model_path);
    if (run->parsed()) return tascforge::cmd_run(config);
    if (oracle->parsed()) return tascforge::cmd_oracle(config);
    if (report->parsed()) return tascforge::cmd_report(config);
  } catch (const tascforge::Error& e) {
    tascforge::log_error(e.what());
    return tascforge::exit_code_for(e);
  } catch (const std::exception& e) {
    tascforge::log_error(e.what());
    return tascforge::exit_code::kRuntimeError;
  }
  return tascforge::exit_code::kOk;
}
