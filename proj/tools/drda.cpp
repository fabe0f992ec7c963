#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "drda/cli_runner.hpp"
#include "drda/config.hpp"

int main(int argc, char** argv) {
  CLI::App app{"drda: radial-structure domain adaptation trainer"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, data_path, out_path;

  CLI::App* train = app.add_subcommand("train", "train on a domain pair");
  train->add_option("--config", config_path, "run config JSON")->required();

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--data", data_path, "config JSON providing the dataset")->required();

  CLI::App* dump = app.add_subcommand("dump-features", "dump bottleneck features + anchors");
  dump->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  dump->add_option("--data", data_path, "config JSON providing the dataset")->required();
  dump->add_option("--out", out_path, "output CSV path")->required();

  CLI::App* presets = app.add_subcommand("presets", "list available presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : drda::kExitConfigError;
  }

  if (train->parsed()) return drda::run_train(config_path);
  if (eval->parsed()) return drda::run_eval(checkpoint_path, data_path);
  if (dump->parsed()) return drda::run_dump_features(checkpoint_path, data_path, out_path);
  if (presets->parsed()) {
    for (const std::string& name : drda::preset_names()) std::cout << name << "\n";
    return 0;
  }
  return drda::kExitConfigError;
}
