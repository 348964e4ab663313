// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "miml/cli/config.hpp"
#include "miml/synth/dataset.hpp"

namespace miml::cli {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitNumerical = 2, kExitIo = 3 };

struct ClassFrequency {
  std::string task_id;
  std::size_t class_index = 0;
  std::size_t count = 0;
  double frequency = 0.0;
};

std::vector<ClassFrequency> class_frequencies(const synth::Dataset& dataset);

// Each command validates its whole configuration (and reads its inputs)
// before writing anything. They throw; run_command maps errors to exit codes.
void cmd_gen_data(const RunConfig& cfg, std::ostream& out);
/// Also writes the resolved configuration to <checkpoint_path>.run.txt.
void cmd_train(const RunConfig& cfg, std::ostream& out);
void cmd_eval(const RunConfig& cfg, std::ostream& out);
/// Returns false if any row failed.
bool cmd_gradcheck(const RunConfig& cfg, std::ostream& out);
void cmd_export_embeddings(const RunConfig& cfg, std::ostream& out);

std::vector<std::string> command_names();

/// Runs one command and returns its exit code: 0 success, 1 configuration or
/// validation error, 2 numerical failure (including a failed gradient check),
/// 3 I/O or file-format failure. Error messages go to `err`.
int run_command(const std::string& command, const RunConfig& cfg, std::ostream& out, std::ostream& err);

}  // namespace miml::cli
