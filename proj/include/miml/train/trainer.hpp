// SPDX-License-Identifier: Apache-2.0
//
// Training loop: per step, encode the batch, decode every task, score each
// task summary against the input with its critic, assemble the combined loss,
// backpropagate, clip and take an Adam step.
//
// Randomness per epoch e comes from two streams of the train seed: the batch
// order (batch_seed) and the critic negatives (negative_seed). Both restart at
// every epoch boundary, so resuming from an end-of-epoch checkpoint replays
// the uninterrupted run exactly.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "miml/core/random.hpp"
#include "miml/eval/metrics.hpp"
#include "miml/model/network.hpp"
#include "miml/optim/adam.hpp"
#include "miml/optim/train_config.hpp"
#include "miml/synth/dataset.hpp"

namespace miml::train {

std::uint64_t batch_seed(std::uint64_t train_seed, std::size_t epoch);
std::uint64_t negative_seed(std::uint64_t train_seed, std::size_t epoch);

struct StepStats {
  double mt_loss = 0.0;
  std::vector<double> mi;        // per-task bound value
  double combined = 0.0;
  double grad_norm = 0.0;        // before clipping
  std::vector<std::size_t> correct;  // per-task train-mode hits in the batch
  std::vector<double> task_weights;  // min-norm weights, empty when uniform
};

struct Objective {
  std::vector<ad::Tensor> ce;  // per task
  std::vector<ad::Tensor> mi;  // per task
  ad::Tensor mt;               // mean of ce
  ad::Tensor combined;
  std::vector<std::size_t> correct;
};

/// Train-mode forward pass with uniform task weights: cross-entropy and MI
/// bound per task, their mean and the combined loss. Draws one derangement
/// per task from `negatives` (JSD only).
Objective uniform_objective(model::NetworkParams& params, const synth::Batch& batch, const optim::TrainConfig& cfg,
                            Rng& negatives);

/// Forward and backward pass for one batch; leaves the gradients on params.
/// grad_norm is not filled in.
StepStats accumulate_gradients(model::NetworkParams& params, const synth::Batch& batch, const optim::TrainConfig& cfg,
                               Rng& negatives);

/// accumulate_gradients, then clip and take an Adam step. Throws
/// NumericalError, before touching params or state, if the loss or any
/// gradient is non-finite.
StepStats train_step(model::NetworkParams& params, optim::OptimizerState& state, const synth::Batch& batch,
                     const optim::TrainConfig& cfg, double lr, Rng& negatives);

/// Columns: step,epoch,lr,mt_loss,mi,combined_loss,grad_norm_preclip with the
/// per-task MI values joined by ';'.
std::string step_log_header();
std::string step_log_line(std::uint64_t step, std::size_t epoch, double lr, const StepStats& stats);

std::string epoch_log_header(const std::vector<model::TaskSpec>& tasks);
std::string epoch_log_line(const eval::EpochTrace& trace, double lr);
/// Parses rows written by epoch_log_line.
std::vector<eval::EpochTrace> parse_epoch_log(const std::string& text, std::size_t task_count);

struct TrainOptions {
  optim::TrainConfig config;
  std::filesystem::path checkpoint_path;  // written after every epoch if set
  std::filesystem::path log_path;         // per-step CSV if set
  std::filesystem::path epoch_log_path;   // per-epoch CSV if set
  /// Per-epoch accuracy is measured on this set in eval mode if given, and on
  /// the training batches otherwise.
  const synth::Dataset* test = nullptr;
  /// Continue from checkpoint_path; the logs are cut back to its epoch.
  bool resume = false;
  /// Stop after this many completed epochs (0 runs cfg.epochs).
  std::size_t stop_after_epoch = 0;
  std::function<void(const eval::EpochTrace&)> on_epoch;
};

struct TrainResult {
  model::NetworkParams params;
  optim::OptimizerState optimizer;
  std::vector<eval::EpochTrace> trace;  // all epochs, including resumed ones
};

TrainResult train(const synth::Dataset& dataset, const TrainOptions& options);

}  // namespace miml::train
