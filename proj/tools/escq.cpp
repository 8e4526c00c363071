#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "escq/cli.hpp"

namespace {

std::string dashed(std::string key) {
  for (char& c : key) {
    if (c == '_') c = '-';
  }
  return key;
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = escq::cli;
  CLI::App app{"Strategy-level Q-learning for emotional support conversation"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer("Environment: every key can also be set as " + cli::env_var_name("key") +
             " (upper case), e.g. ESCQ_LEARNING_RATE.\nPrecedence: defaults < --config file < environment < flags.");

  std::string config_file;
  app.add_option("--config", config_file, "key = value configuration file");

  std::map<std::string, std::string> values;
  std::map<std::string, bool> switches;
  std::map<std::string, CLI::Option*> options;
  for (const auto& key : cli::config_keys()) {
    const std::string name = "--" + dashed(key.name);
    if (key.flag) {
      options[key.name] = app.add_flag(name, switches[key.name], key.help);
    } else {
      options[key.name] = app.add_option(name, values[key.name], key.help);
    }
  }

  for (const auto& name : cli::command_names()) {
    app.add_subcommand(name, name == "train"          ? "fit a Q-network and evaluate it"
                             : name == "eval"         ? "evaluate a checkpoint"
                             : name == "sweep"        ? "train once per discount factor"
                             : name == "simulate"     ? "roll model, random and oracle policies in the staged env"
                                                      : "corpus statistics");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kExitConfig;
  }

  cli::RunConfig config;
  try {
    if (!config_file.empty()) cli::apply_config_file(config, config_file);
    cli::apply_process_environment(config);
    for (const auto& [key, option] : options) {
      if (option->count() == 0) continue;
      if (switches.count(key)) cli::set_value(config, key, switches[key] ? "true" : "false");
      else cli::set_value(config, key, values[key]);
    }
  } catch (const escq::Error& e) {
    std::cerr << cli::error_category(e.code()) << " error: " << e.what() << "\n";
    return cli::exit_code(e.code());
  }

  const std::string command = app.get_subcommands().front()->get_name();
  return cli::run(command, config, std::cout, std::cerr);
}
