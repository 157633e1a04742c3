// Command-line front end: aikae <train|eval|assimilate|gradcheck|ablate|synth> [options]

#include "aikae/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace {

// Named flags and the config keys they set. Flags override --set and the config file.
const std::vector<std::pair<std::string, std::vector<std::string>>> kFlagKeys = {
    {"--seed", {"run.seed"}},
    {"--out", {"run.out_dir"}},
    {"--data", {"data.path"}},
    {"--splits", {"data.splits"}},
    {"--mode", {"data.mode"}},
    {"--tl", {"data.lookback"}},
    {"--tp", {"data.horizon"}},
    {"--variant", {"model.variant"}},
    {"--p", {"model.p"}},
    {"--k", {"model.k"}},
    {"--w", {"model.w"}},
    {"--revin", {"model.revin"}},
    {"--epochs", {"train.epochs"}},
    {"--batch-size", {"train.batch_size"}},
    {"--lr", {"optim.lr"}},
    {"--alpha", {"loss.alpha"}},
    {"--checkpoint", {"eval.checkpoint", "assim.checkpoint"}},
    {"--horizons", {"eval.horizons"}},
    {"--obs", {"assim.obs"}},
    {"--truth", {"assim.truth"}},
    {"--horizon", {"assim.horizon"}},
    {"--constraint", {"assim.constraint"}},
    {"--steps", {"assim.steps"}},
    {"--assim-lr", {"assim.lr"}},
    {"--preset", {"ablate.preset"}},
    {"--grid", {"ablate.grid"}},
    {"--system", {"synth.system"}},
    {"--length", {"synth.length"}},
    {"--corrupt", {"gradcheck.corrupt"}},
};

struct Options {
  std::string config_file;
  std::vector<std::string> assignments;
  std::map<std::string, std::string> flags;
};

void add_options(CLI::App* cmd, Options& opt) {
  cmd->add_option("-c,--config", opt.config_file, "INI configuration file");
  cmd->add_option("--set", opt.assignments, "override any key: section.key=value (repeatable)");
  for (const auto& [flag, keys] : kFlagKeys) {
    std::string help = "sets " + keys.front();
    for (std::size_t i = 1; i < keys.size(); ++i) help += " and " + keys[i];
    cmd->add_option(flag, opt.flags[flag], help);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman autoencoders (KAE, IKAE, IKAE-zp, AIKAE): training, evaluation and data assimilation"};
  app.require_subcommand(0, 1);
  bool list_keys = false;
  app.add_flag("--list-keys", list_keys, "print every config key with its default and exit");

  Options opt;
  std::map<std::string, CLI::App*> commands;
  const std::map<std::string, std::string> help = {
      {"train", "train a model; writes model.json, metrics.csv and summary.json"},
      {"eval", "score a checkpoint on the test split against persistence and linear baselines"},
      {"assimilate", "fit the initial latent state to timestamped observations and forecast"},
      {"gradcheck", "finite-difference check of every loss term and the assimilation cost"},
      {"ablate", "run an ablation grid into a resumable CSV table"},
      {"synth", "write a synthetic dataset CSV"},
  };
  for (const auto& name : aikae::command_names()) {
    commands[name] = app.add_subcommand(name, help.at(name));
    add_options(commands[name], opt);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? aikae::kExitOk : aikae::kExitUsage;
  }

  if (list_keys) {
    for (const auto& k : aikae::config_keys()) std::cout << k.key << " = " << k.value << "    # " << k.help << '\n';
    return aikae::kExitOk;
  }
  std::string command;
  for (const auto& [name, sub] : commands)
    if (sub->parsed()) command = name;
  if (command.empty()) {
    std::cerr << app.help();
    return aikae::kExitUsage;
  }

  aikae::RunConfig cfg;
  try {
    if (!opt.config_file.empty()) cfg.merge_ini(opt.config_file);
    for (const auto& a : opt.assignments) cfg.set_assignment(a);
    for (const auto& [flag, keys] : kFlagKeys) {
      if (commands[command]->count(flag) == 0) continue;
      for (const auto& key : keys) cfg.set(key, opt.flags[flag]);
    }
  } catch (const aikae::IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return aikae::kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return aikae::kExitUsage;
  }
  return aikae::run_command(command, cfg);
}
