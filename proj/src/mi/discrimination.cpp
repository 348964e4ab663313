// SPDX-License-Identifier: Apache-2.0
#include "miml/mi/discrimination.hpp"

#include <vector>

#include "miml/autodiff/ops.hpp"
#include "miml/core/random.hpp"
#include "miml/mi/estimators.hpp"
#include "miml/model/network.hpp"
#include "miml/optim/adam.hpp"

namespace miml::mi {
namespace {

struct PairBatch {
  ad::Tensor z;  // [n,32]
  ad::Tensor x;  // [n,64]
};

PairBatch draw(std::size_t n, bool dependent, double noise_std, Rng& rng) {
  const std::size_t dz = model::arch::kSummaryWidth, dx = model::arch::kInputSummaryWidth;
  std::vector<double> z(n * dz), x(n * dx), source(dx);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dx; ++j) x[i * dx + j] = rng.normal();
    if (dependent) {
      for (std::size_t j = 0; j < dx; ++j) source[j] = x[i * dx + j];
    } else {
      for (std::size_t j = 0; j < dx; ++j) source[j] = rng.normal();
    }
    for (std::size_t j = 0; j < dz; ++j) z[i * dz + j] = source[j] + noise_std * rng.normal();
  }
  return {ad::Tensor({n, dz}, std::move(z)), ad::Tensor({n, dx}, std::move(x))};
}

double run_arm(const DiscriminationConfig& cfg, bool dependent) {
  const std::vector<model::TaskSpec> tasks{{"probe", 2, "probe"}};
  model::NetworkParams full = model::init_params(tasks, derive_seed(cfg.seed, 1));
  // Only the critic is trained here.
  model::NetworkParams params = full;
  std::erase_if(params.tensors, [](const auto& kv) { return !kv.first.starts_with("critic."); });
  const auto& task = params.tasks.front();
  const Critic critic = [&](const ad::Tensor& z, const ad::Tensor& x) {
    return model::critic_score(params, task, z, x);
  };

  optim::TrainConfig opt;
  opt.weight_decay = 0.0;
  optim::OptimizerState state;
  Rng data(derive_seed(cfg.seed, dependent ? 2 : 3));
  Rng negatives(derive_seed(cfg.seed, dependent ? 4 : 5));
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const PairBatch b = draw(cfg.batch_size, dependent, cfg.noise_std, data);
    const auto perm = derangement_shuffle(cfg.batch_size, negatives);
    params.zero_grad();
    const ad::Tensor bound = jsd_lower_bound(score_pairs(critic, b.z, b.x, perm));
    ad::backward(ad::multiply_scalar(bound, -1.0));
    optim::adam_step(params, optim::collect_gradients(params), state, cfg.learning_rate, opt);
  }

  Rng held_out(derive_seed(cfg.seed, dependent ? 6 : 7));
  const PairBatch eval = draw(cfg.eval_size, dependent, cfg.noise_std, held_out);
  const auto perm = derangement_shuffle(cfg.eval_size, held_out);
  return jsd_lower_bound(score_pairs(critic, eval.z, eval.x, perm)).item();
}

}  // namespace

DiscriminationResult run_discrimination(const DiscriminationConfig& cfg) {
  return {run_arm(cfg, true), run_arm(cfg, false)};
}

}  // namespace miml::mi
