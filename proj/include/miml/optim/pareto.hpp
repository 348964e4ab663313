// SPDX-License-Identifier: Apache-2.0
//
// Min-norm point in the convex hull of task gradients: the convex weights w
// minimizing || sum_t w_t g_t ||^2. A zero minimum certifies a Pareto-
// stationary point; otherwise -sum_t w_t g_t is a descent direction for every
// task at once.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace miml::optim {

/// Weight on the first vector for the two-vector problem, from
/// ||g1||^2, g1.g2, ||g2||^2:  clamp((||g2||^2 - g1.g2) / ||g1 - g2||^2, 0, 1).
double min_norm_pair_weight(double g1g1, double g1g2, double g2g2);

/// Convex task weights (non-negative, summing to 1). T = 1 returns {1};
/// T = 2 uses the closed form; T >= 3 starts from the best pairwise solution
/// and runs pairwise (away-step) Frank-Wolfe with exact line search on the
/// Gram matrix. All-zero gradients give uniform weights.
std::vector<double> min_norm_task_weights(std::span<const std::vector<double>> task_gradients,
                                          std::size_t max_iterations = 200);

/// || sum_t w_t g_t ||^2.
double combined_norm_squared(std::span<const std::vector<double>> task_gradients, std::span<const double> weights);

}  // namespace miml::optim
