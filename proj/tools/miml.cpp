// SPDX-License-Identifier: Apache-2.0
//
// miml <command> [--config FILE] [--key value ...]
#include <CLI11.hpp>

#include <iostream>

#include "miml/cli/commands.hpp"
#include "miml/cli/config.hpp"
#include "miml/core/errors.hpp"

namespace {

std::string key_help() {
  std::string s = "Configuration keys (config file lines 'key = value', or --key value):\n";
  for (const auto& [k, help] : miml::cli::config_keys()) s += "  " + k + std::string(k.size() < 20 ? 20 - k.size() : 1, ' ') + help + "\n";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task scene attribute learning with mutual-information regularization"};
  app.require_subcommand(1);
  app.footer(key_help());

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "generate a synthetic MTSC dataset"},
      {"train", "train and write checkpoint, logs and report"},
      {"eval", "evaluate a checkpoint on a dataset"},
      {"gradcheck", "finite-difference check of every primitive and the full loss"},
      {"export-embeddings", "write the 64-d shared latent of every sample as TSV"},
  };
  std::string config_file;
  bool print_config = false;
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->allow_extras();
    sub->add_option("--config", config_file, "key = value configuration file");
    sub->add_flag("--print-config", print_config, "print the resolved configuration first");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : miml::cli::kExitConfig;
  }

  auto* sub = app.get_subcommands().front();
  miml::cli::RunConfig cfg;
  try {
    miml::cli::KeyValues pairs;
    if (!config_file.empty()) pairs = miml::cli::read_config_file(config_file);
    const auto overrides = miml::cli::parse_overrides(sub->remaining());
    pairs.insert(pairs.end(), overrides.begin(), overrides.end());
    cfg = miml::cli::resolve_config(pairs);
  } catch (const miml::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return miml::cli::kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return miml::cli::kExitConfig;
  }
  if (print_config) std::cout << miml::cli::render_config(cfg);
  return miml::cli::run_command(sub->get_name(), cfg, std::cout, std::cerr);
}
