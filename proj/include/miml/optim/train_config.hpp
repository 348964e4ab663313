// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace miml::optim {

enum class Estimator { Jsd, Nce };

/// How per-task cross-entropies are combined: uniform mean, or convex weights
/// from the min-norm solver (see pareto.hpp).
enum class TaskWeighting { Uniform, MinNorm };

/// Maximize: loss = mt - lambda * sum(MI)   (drives the bound up)
/// AsPrinted: loss = mt + lambda * sum(MI)  (reproduces the literal '+' sign, for ablation)
enum class MiSign { Maximize, AsPrinted };

struct TrainConfig {
  double lambda_l = 0.1;
  double lr_initial = 1e-4;
  double lr_after = 1e-5;
  std::size_t lr_switch_epoch = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_epsilon = 1e-8;
  double weight_decay = 5e-4;
  double clip_norm = 5.0;
  std::size_t batch_size = 16;
  std::size_t epochs = 20;
  std::uint64_t seed = 1;
  Estimator estimator = Estimator::Jsd;
  TaskWeighting pareto_weighting = TaskWeighting::Uniform;
  MiSign mi_sign = MiSign::Maximize;
  double leaky_alpha = 0.01;
  /// Lower limit on I(z_t, x) from the constrained form of the objective.
  /// It disappears in the Lagrangian relaxation and is kept for the record only.
  double epsilon_m_doc = 0.0;

  /// Throws ConfigError on the first violated invariant.
  void validate() const;
};

std::string_view to_string(Estimator e);
std::string_view to_string(TaskWeighting w);
std::string_view to_string(MiSign s);
Estimator parse_estimator(std::string_view s);
TaskWeighting parse_task_weighting(std::string_view s);
MiSign parse_mi_sign(std::string_view s);

}  // namespace miml::optim
