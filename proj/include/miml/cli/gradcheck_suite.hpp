// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks over every differentiable primitive plus the
// end-to-end combined loss through the full model at batch size 2.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace miml::cli {

inline constexpr double kGradCheckTolerance = 1e-4;

struct GradCheckRow {
  std::string name;
  double max_error = 0.0;
  std::size_t compared = 0;
  std::size_t nonsmooth = 0;  // probes straddling a kink, set aside
  bool passed = false;
};

struct GradCheckSuiteOptions {
  double step = 1e-5;
  /// Coordinates sampled per parameter tensor in the end-to-end row.
  std::size_t end_to_end_coordinates = 20;
  /// Name of a row whose output is routed through an op with a wrong
  /// derivative; empty for none. Unknown names throw ConfigError.
  std::string fault;
  std::uint64_t seed = 17;
};

/// Row names in table order.
std::vector<std::string> gradcheck_row_names();

/// A row passes when max_error < 1e-4 and at most 5% of its probes were set
/// aside as non-smooth.
std::vector<GradCheckRow> run_gradcheck_suite(const GradCheckSuiteOptions& options);

std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows);

}  // namespace miml::cli
