// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "miml/autodiff/tensor.hpp"
#include "miml/optim/train_config.hpp"

namespace miml::optim {

/// Batch mean of -log_softmax(logits)[label]. Labels must lie in [0, K).
ad::Tensor cross_entropy(const ad::Tensor& logits, std::span<const std::size_t> labels);

/// Unweighted mean of the per-task losses. Throws ContractError when empty.
ad::Tensor multi_task_loss(std::span<const ad::Tensor> per_task_losses);

/// Convex combination sum_t w_t L_t (used with min-norm task weights).
ad::Tensor weighted_task_loss(std::span<const ad::Tensor> per_task_losses, std::span<const double> weights);

/// mt_loss - lambda * sum_t mi_t (or + with MiSign::AsPrinted). With
/// lambda = 0 the result is mt_loss itself; the MI terms stay off the graph.
ad::Tensor combined_loss(const ad::Tensor& mt_loss, std::span<const ad::Tensor> per_task_mi, double lambda_l,
                         MiSign sign = MiSign::Maximize);

/// lr_initial before lr_switch_epoch, lr_after from then on.
double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg);

}  // namespace miml::optim
