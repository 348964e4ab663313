// SPDX-License-Identifier: Apache-2.0
#include "miml/optim/adam.hpp"

#include <cmath>

#include "miml/core/errors.hpp"

namespace miml::optim {

Gradients collect_gradients(const model::NetworkParams& params) {
  Gradients g;
  for (const auto& [name, t] : params.tensors) {
    if (t.has_grad()) {
      g.emplace(name, std::vector<double>(t.grad().begin(), t.grad().end()));
    } else {
      g.emplace(name, std::vector<double>(t.numel(), 0.0));
    }
  }
  return g;
}

void adam_step(model::NetworkParams& params, const Gradients& grads, OptimizerState& state, double lr,
               const TrainConfig& cfg) {
  for (const auto& [name, t] : params.tensors) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ContractError("adam_step: no gradient for '" + name + "'");
    if (it->second.size() != t.numel()) throw DimensionError("adam_step: gradient size mismatch for '" + name + "'");
    for (double g : it->second) {
      if (!std::isfinite(g)) throw NumericalError("adam_step: non-finite gradient in '" + name + "'");
    }
  }

  ++state.step;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (auto& [name, t] : params.tensors) {
    const auto& g = grads.at(name);
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    if (m.empty()) m.assign(t.numel(), 0.0);
    if (v.empty()) v.assign(t.numel(), 0.0);
    auto p = t.mutable_values();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i] + cfg.weight_decay * p[i];
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
    }
  }
}

double clip_global_norm(Gradients& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_global_norm: max_norm must be positive");
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [name, g] : grads)
      for (double& x : g) x *= scale;
  }
  return norm;
}

}  // namespace miml::optim
