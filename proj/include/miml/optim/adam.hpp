// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "miml/model/network.hpp"
#include "miml/optim/train_config.hpp"

namespace miml::optim {

/// Per-parameter gradient vectors keyed like NetworkParams::tensors.
using Gradients = std::map<std::string, std::vector<double>>;

struct OptimizerState {
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

/// Copies the accumulated gradient of every parameter (zeros where backward
/// never reached it).
Gradients collect_gradients(const model::NetworkParams& params);

/// Adam with bias correction. Weight decay is added to the gradient
/// (g + weight_decay * p) before the moment updates. All gradients are checked
/// before anything is modified; a non-finite entry throws NumericalError
/// naming the parameter and leaves params and state untouched.
void adam_step(model::NetworkParams& params, const Gradients& grads, OptimizerState& state, double lr,
               const TrainConfig& cfg);

/// Scales every gradient by max_norm / g when the global L2 norm g exceeds
/// max_norm. Returns g (the pre-clip norm).
double clip_global_norm(Gradients& grads, double max_norm);

}  // namespace miml::optim
