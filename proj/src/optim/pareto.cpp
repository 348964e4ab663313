// SPDX-License-Identifier: Apache-2.0
#include "miml/optim/pareto.hpp"

#include <algorithm>
#include <cmath>

#include "miml/core/errors.hpp"

namespace miml::optim {
namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

double min_norm_pair_weight(double g1g1, double g1g2, double g2g2) {
  const double denom = g1g1 - 2.0 * g1g2 + g2g2;
  if (denom <= 1e-300) return 0.5;  // g1 == g2: every convex combination is the same point
  return std::clamp((g2g2 - g1g2) / denom, 0.0, 1.0);
}

std::vector<double> min_norm_task_weights(std::span<const std::vector<double>> task_gradients,
                                          std::size_t max_iterations) {
  const std::size_t t_count = task_gradients.size();
  if (t_count == 0) throw ContractError("min_norm_task_weights: no task gradients");
  for (const auto& g : task_gradients) {
    if (g.size() != task_gradients[0].size()) throw DimensionError("min_norm_task_weights: gradient length mismatch");
  }
  if (t_count == 1) return {1.0};

  std::vector<double> gram(t_count * t_count);
  for (std::size_t i = 0; i < t_count; ++i)
    for (std::size_t j = i; j < t_count; ++j)
      gram[i * t_count + j] = gram[j * t_count + i] = dot(task_gradients[i], task_gradients[j]);

  const std::vector<double> uniform(t_count, 1.0 / static_cast<double>(t_count));
  bool all_zero = true;
  for (std::size_t i = 0; i < t_count; ++i) all_zero = all_zero && gram[i * t_count + i] == 0.0;
  if (all_zero) return uniform;

  if (t_count == 2) {
    const double a = min_norm_pair_weight(gram[0], gram[1], gram[3]);
    return {a, 1.0 - a};
  }

  // Start from the best edge of the simplex (closed form per pair), then run
  // pairwise Frank-Wolfe: shift weight from the worst vertex in the support
  // to the best vertex overall, with exact line search on the quadratic.
  auto quad = [&](const std::vector<double>& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < t_count; ++i)
      for (std::size_t j = 0; j < t_count; ++j) s += w[i] * gram[i * t_count + j] * w[j];
    return s;
  };
  std::vector<double> w = uniform;
  double best_value = quad(w);
  for (std::size_t i = 0; i < t_count; ++i)
    for (std::size_t j = i + 1; j < t_count; ++j) {
      std::vector<double> cand(t_count, 0.0);
      cand[i] = min_norm_pair_weight(gram[i * t_count + i], gram[i * t_count + j], gram[j * t_count + j]);
      cand[j] = 1.0 - cand[i];
      const double v = quad(cand);
      if (v < best_value) {
        best_value = v;
        w = std::move(cand);
      }
    }

  std::vector<double> mw(t_count);
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    for (std::size_t i = 0; i < t_count; ++i) {
      mw[i] = 0.0;
      for (std::size_t j = 0; j < t_count; ++j) mw[i] += gram[i * t_count + j] * w[j];
    }
    std::size_t toward = 0, away = t_count;
    for (std::size_t i = 0; i < t_count; ++i) {
      if (mw[i] < mw[toward]) toward = i;
      if (w[i] > 0.0 && (away == t_count || mw[i] > mw[away])) away = i;
    }
    if (away == toward) break;
    const double slope = mw[away] - mw[toward];  // descent rate along e_toward - e_away
    const double curvature = gram[toward * t_count + toward] - 2.0 * gram[toward * t_count + away] +
                             gram[away * t_count + away];
    if (slope <= 1e-15 * std::max(1.0, std::abs(mw[toward]))) break;
    const double step = curvature > 0.0 ? std::min(w[away], slope / curvature) : w[away];
    if (step <= 0.0) break;
    w[toward] += step;
    w[away] -= step;
    if (w[away] < 1e-300) w[away] = 0.0;
  }
  double total = 0.0;
  for (double x : w) total += x;
  for (double& x : w) x /= total;
  return w;
}

double combined_norm_squared(std::span<const std::vector<double>> task_gradients, std::span<const double> weights) {
  if (task_gradients.empty()) return 0.0;
  std::vector<double> sum(task_gradients[0].size(), 0.0);
  for (std::size_t t = 0; t < task_gradients.size(); ++t)
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += weights[t] * task_gradients[t][i];
  return dot(sum, sum);
}

}  // namespace miml::optim
