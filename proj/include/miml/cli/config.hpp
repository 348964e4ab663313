// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value run configuration. A config file holds one `key = value`
// per line ('#' starts a comment); command-line `--key value` or
// `--key=value` pairs override it. Unknown keys are rejected.
#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "miml/optim/train_config.hpp"
#include "miml/synth/scene.hpp"

namespace miml::cli {

struct RunConfig {
  synth::GeneratorConfig generator;
  optim::TrainConfig train;

  std::filesystem::path dataset_path;
  std::filesystem::path test_dataset_path;
  std::filesystem::path checkpoint_path;
  std::filesystem::path report_path;
  std::filesystem::path log_path;
  std::filesystem::path epoch_log_path;
  std::filesystem::path embeddings_path;

  bool resume = false;
  std::string gradcheck_fault;  // row name whose backward gets corrupted
  double gradcheck_step = 1e-5;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Throws ConfigError naming `source` and the line for malformed lines or a
/// key given twice.
KeyValues parse_config_text(std::string_view text, std::string_view source = "config");
/// Reads and parses a config file; a missing file is a FileNotFoundError.
KeyValues read_config_file(const std::filesystem::path& path);
/// "--key value" and "--key=value" pairs.
KeyValues parse_overrides(std::span<const std::string> args);

/// Applies the pairs in order on top of the defaults. Throws ConfigError for
/// unknown keys or unparsable values. Does not validate cross-field rules.
RunConfig resolve_config(const KeyValues& pairs);

/// Every key with its current value, one `key = value` line each.
std::string render_config(const RunConfig& cfg);
/// Key names with a one-line description, for --help.
std::vector<std::pair<std::string, std::string>> config_keys();

}  // namespace miml::cli
