#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmen/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"minimax-entropy domain adaptation experiments"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, out_path;
  std::vector<int> k_values;
  std::vector<double> lambda_values;
  bool parallel = false;

  auto* run = app.add_subcommand("run", "train every configured variant and write CSVs");
  run->add_option("config", config_path, "experiment config (json)")->required();

  auto* sweep = app.add_subcommand("sweep", "grid over k and lambda, one train per cell");
  sweep->add_option("config", config_path, "experiment config (json)")->required();
  sweep->add_option("--k", k_values, "k values")->required();
  sweep->add_option("--lambda", lambda_values, "lambda values")->required();
  sweep->add_flag("--parallel", parallel, "run independent cells across threads");

  auto* eval = app.add_subcommand("eval", "report both heads' target accuracies");
  eval->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("config", config_path, "experiment config (json)")->required();

  auto* dump = app.add_subcommand("dump-features", "export generator features as CSV");
  dump->add_option("checkpoint", checkpoint_path, "checkpoint file")->required();
  dump->add_option("config", config_path, "experiment config (json)")->required();
  dump->add_option("output", out_path, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return mmen::cmd_run(config_path);
    if (sweep->parsed()) return mmen::cmd_sweep(config_path, k_values, lambda_values, parallel);
    if (eval->parsed()) return mmen::cmd_eval(checkpoint_path, config_path);
    if (dump->parsed()) return mmen::cmd_dump_features(checkpoint_path, config_path, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
