// SPDX-License-Identifier: Apache-2.0
#include "miml/optim/train_config.hpp"

#include <cmath>

#include "miml/core/errors.hpp"

namespace miml::optim {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(lambda_l) || lambda_l < 0.0) fail("lambda_l must be >= 0");
  if (!finite(lr_initial) || lr_initial <= 0.0) fail("lr_initial must be positive");
  if (!finite(lr_after) || lr_after <= 0.0) fail("lr_after must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1 must lie in [0,1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2 must lie in [0,1)");
  if (!finite(adam_epsilon) || adam_epsilon <= 0.0) fail("adam_epsilon must be positive");
  if (!finite(weight_decay) || weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (!finite(clip_norm) || clip_norm <= 0.0) fail("clip_norm must be positive");
  if (batch_size < 2) fail("batch_size must be >= 2 (negative sampling needs two samples)");
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(leaky_alpha > 0.0 && leaky_alpha < 1.0)) fail("leaky_alpha must lie in (0,1)");
  if (!finite(epsilon_m_doc)) fail("epsilon_m must be finite");
}

std::string_view to_string(Estimator e) { return e == Estimator::Jsd ? "jsd" : "nce"; }
std::string_view to_string(TaskWeighting w) { return w == TaskWeighting::Uniform ? "off" : "min_norm"; }
std::string_view to_string(MiSign s) { return s == MiSign::Maximize ? "subtract" : "add"; }

Estimator parse_estimator(std::string_view s) {
  if (s == "jsd") return Estimator::Jsd;
  if (s == "nce") return Estimator::Nce;
  throw ConfigError("estimator must be 'jsd' or 'nce', got '" + std::string(s) + "'");
}

TaskWeighting parse_task_weighting(std::string_view s) {
  if (s == "off") return TaskWeighting::Uniform;
  if (s == "min_norm") return TaskWeighting::MinNorm;
  throw ConfigError("pareto_weighting must be 'off' or 'min_norm', got '" + std::string(s) + "'");
}

MiSign parse_mi_sign(std::string_view s) {
  if (s == "subtract") return MiSign::Maximize;
  if (s == "add") return MiSign::AsPrinted;
  throw ConfigError("mi_sign must be 'subtract' or 'add', got '" + std::string(s) + "'");
}

}  // namespace miml::optim
