// SPDX-License-Identifier: Apache-2.0
#include "miml/optim/objective.hpp"

#include "miml/autodiff/ops.hpp"
#include "miml/core/errors.hpp"

namespace miml::optim {

ad::Tensor cross_entropy(const ad::Tensor& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || labels.size() != logits.dim(0)) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         ad::shape_string(logits.shape()));
  }
  for (auto l : labels) {
    if (l >= logits.dim(1)) {
      throw ContractError("cross_entropy: label " + std::to_string(l) + " outside [0," +
                          std::to_string(logits.dim(1)) + ")");
    }
  }
  return ad::multiply_scalar(ad::mean(ad::gather_logit(ad::log_softmax(logits), labels)), -1.0);
}

ad::Tensor multi_task_loss(std::span<const ad::Tensor> per_task_losses) {
  if (per_task_losses.empty()) throw ContractError("multi_task_loss: no task losses");
  ad::Tensor sum = per_task_losses[0];
  for (std::size_t t = 1; t < per_task_losses.size(); ++t) sum = ad::add(sum, per_task_losses[t]);
  return ad::multiply_scalar(sum, 1.0 / static_cast<double>(per_task_losses.size()));
}

ad::Tensor weighted_task_loss(std::span<const ad::Tensor> per_task_losses, std::span<const double> weights) {
  if (per_task_losses.empty()) throw ContractError("weighted_task_loss: no task losses");
  if (weights.size() != per_task_losses.size()) throw ContractError("weighted_task_loss: weight count mismatch");
  ad::Tensor sum = ad::multiply_scalar(per_task_losses[0], weights[0]);
  for (std::size_t t = 1; t < per_task_losses.size(); ++t)
    sum = ad::add(sum, ad::multiply_scalar(per_task_losses[t], weights[t]));
  return sum;
}

ad::Tensor combined_loss(const ad::Tensor& mt_loss, std::span<const ad::Tensor> per_task_mi, double lambda_l,
                         MiSign sign) {
  if (!(lambda_l >= 0.0)) throw ContractError("combined_loss: lambda_l must be >= 0");
  if (per_task_mi.empty() || lambda_l == 0.0) return mt_loss;
  ad::Tensor mi_sum = per_task_mi[0];
  for (std::size_t t = 1; t < per_task_mi.size(); ++t) mi_sum = ad::add(mi_sum, per_task_mi[t]);
  const double coeff = sign == MiSign::Maximize ? -lambda_l : lambda_l;
  return ad::add(mt_loss, ad::multiply_scalar(mi_sum, coeff));
}

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
  return epoch < cfg.lr_switch_epoch ? cfg.lr_initial : cfg.lr_after;
}

}  // namespace miml::optim
