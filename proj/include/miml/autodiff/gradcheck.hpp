// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "miml/autodiff/tensor.hpp"

namespace miml::ad {

using ScalarFunction = std::function<Tensor(const Tensor&)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Check at most this many coordinates, sampled without replacement
  /// (0 = every coordinate).
  std::size_t max_coordinates = 0;
  std::uint64_t sample_seed = 0;
  /// Also difference at step/4 and set aside coordinates where the two
  /// estimates disagree by more than 1e-6 (relative): f is not smooth inside
  /// [x-h, x+h] there (e.g. a leaky-ReLU input crosses zero), so central
  /// differences are not a valid reference.
  bool skip_nonsmooth = false;
};

struct GradCheckReport {
  double max_error = 0.0;  // over the coordinates actually compared
  std::size_t compared = 0;
  std::size_t nonsmooth = 0;
};

/// Compares the tape gradient of `f` at `point` with central differences.
/// Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
/// Throws ContractError if f is not scalar-valued or the step is outside
/// (1e-7, 1e-3).
double gradient_check(const ScalarFunction& f, const Tensor& point, const GradCheckOptions& options);
GradCheckReport gradient_check_report(const ScalarFunction& f, const Tensor& point, const GradCheckOptions& options);
double gradient_check(const ScalarFunction& f, const Tensor& point, double step = 1e-5);

}  // namespace miml::ad
