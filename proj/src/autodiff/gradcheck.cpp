// SPDX-License-Identifier: Apache-2.0
#include "miml/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "miml/core/errors.hpp"
#include "miml/core/random.hpp"

namespace miml::ad {
namespace {

double evaluate(const ScalarFunction& f, const Tensor& point) {
  const Tensor y = f(point);
  if (!y.defined() || y.numel() != 1) {
    throw ContractError("gradient_check: function must return a scalar, got shape " +
                        (y.defined() ? shape_string(y.shape()) : std::string("<undefined>")));
  }
  return y.item();
}

}  // namespace

GradCheckReport gradient_check_report(const ScalarFunction& f, const Tensor& point,
                                      const GradCheckOptions& options) {
  if (!(options.step > 1e-7 && options.step < 1e-3)) {
    throw ContractError("gradient_check: step must lie in (1e-7, 1e-3)");
  }
  Tensor x = point.detach(true);
  Tensor y = f(x);
  if (!y.defined() || y.numel() != 1) {
    throw ContractError("gradient_check: function must return a scalar, got shape " +
                        (y.defined() ? shape_string(y.shape()) : std::string("<undefined>")));
  }
  backward(y);
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  std::vector<std::size_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), 0);
  if (options.max_coordinates > 0 && options.max_coordinates < coords.size()) {
    Rng rng(options.sample_seed);
    for (std::size_t i = 0; i < options.max_coordinates; ++i) {
      std::swap(coords[i], coords[i + rng.uniform_index(coords.size() - i)]);
    }
    coords.resize(options.max_coordinates);
  }

  GradCheckReport report;
  auto central = [&](std::size_t i, double h) {
    Tensor probe = point.detach(false);
    auto v = probe.mutable_values();
    const double original = v[i];
    v[i] = original + h;
    const double up = evaluate(f, probe);
    v[i] = original - h;
    const double down = evaluate(f, probe);
    return (up - down) / (2.0 * h);
  };
  for (std::size_t i : coords) {
    const double numeric = central(i, options.step);
    if (options.skip_nonsmooth) {
      const double finer = central(i, options.step / 4.0);
      if (std::abs(finer - numeric) > 1e-6 * std::max(1.0, std::abs(numeric))) {
        ++report.nonsmooth;
        continue;
      }
    }
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    ++report.compared;
    if (!std::isfinite(err)) {
      report.max_error = std::numeric_limits<double>::infinity();
      return report;
    }
    report.max_error = std::max(report.max_error, err);
  }
  return report;
}

double gradient_check(const ScalarFunction& f, const Tensor& point, const GradCheckOptions& options) {
  return gradient_check_report(f, point, options).max_error;
}

double gradient_check(const ScalarFunction& f, const Tensor& point, double step) {
  GradCheckOptions options;
  options.step = step;
  return gradient_check(f, point, options);
}

}  // namespace miml::ad
