// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "miml/model/network.hpp"
#include "miml/synth/dataset.hpp"

namespace miml::eval {

/// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  std::string task_id;
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;  // classes * classes, row-major

  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * classes + predicted]; }
  std::uint64_t total() const;
  double accuracy() const;
  /// Elementwise sum; shapes and task ids must agree.
  void merge(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;
};

/// Throws ContractError on length mismatch or an entry outside [0, K).
ConfusionMatrix confusion_matrix(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                 std::size_t classes, std::string task_id = {});

struct ClassF {
  std::vector<double> f1;
  /// Classes that were neither predicted nor present; their F1 is 0.
  std::vector<std::size_t> zero_division;
  double macro = 0.0;
};

/// Per-class F1 = 2PR/(P+R), 0 when P+R = 0 (an undefined P or R counts as 0).
ClassF class_f_scores(const ConfusionMatrix& cm);
double macro_f_score(const ConfusionMatrix& cm);

struct TaskMetrics {
  model::TaskSpec task;
  ConfusionMatrix confusion;
  double macro_f = 0.0;
  double accuracy = 0.0;
  std::vector<std::size_t> zero_division;
};

struct EpochTrace {
  std::size_t epoch = 0;
  double mt_loss = 0.0;
  std::vector<double> mi;        // per task, mean over the epoch's steps
  std::vector<double> accuracy;  // per task
};

struct MetricsReport {
  std::vector<TaskMetrics> tasks;
  std::vector<EpochTrace> trace;
};

TaskMetrics task_metrics(const model::TaskSpec& task, ConfusionMatrix cm);

/// Unweighted mean of task macro F per category, in order of first
/// appearance. Throws ContractError for a task missing from the map.
std::vector<std::pair<std::string, double>> category_mean_f(const MetricsReport& report,
                                                            const std::map<std::string, std::string>& category_map);

/// task_id -> category from the task specs.
std::map<std::string, std::string> category_map_of(const std::vector<model::TaskSpec>& tasks);

/// For each task: max over epochs e of (best accuracy up to e) - (accuracy at e).
/// Input is [epoch][task]; needs at least 2 epochs.
std::vector<double> forgetting_probe(const std::vector<std::vector<double>>& per_epoch_accuracy);

/// task_id,class_count,macro_f,accuracy rows, then a category-mean footer,
/// the forgetting probe when the trace spans 2+ epochs, and any zero-division
/// classes.
std::string metrics_csv(const MetricsReport& report, const std::map<std::string, std::string>& category_map);

/// Throws CompatibilityError listing both task sets if they differ in ids,
/// order or class counts.
void require_compatible(const std::vector<model::TaskSpec>& model_tasks,
                        const std::vector<model::TaskSpec>& data_tasks);

/// Copy of the parameters with gradient tracking off, for inference.
model::NetworkParams frozen(const model::NetworkParams& params);

/// Eval-mode predictions over the whole dataset.
MetricsReport evaluate(const model::NetworkParams& params, const synth::Dataset& dataset, std::size_t chunk = 100);

/// One row per sample: index, task labels, the 64 channel means of the
/// shared latent. Header row first, tab-separated.
std::string embeddings_tsv(const model::NetworkParams& params, const synth::Dataset& dataset, std::size_t chunk = 100);
void export_embeddings(const model::NetworkParams& params, const synth::Dataset& dataset,
                       const std::filesystem::path& path);

/// Eval-mode 64-d GAP latents, [sample][channel].
std::vector<std::vector<double>> latent_embeddings(const model::NetworkParams& params, const synth::Dataset& dataset,
                                                   std::size_t chunk = 100);

/// Mean pairwise Euclidean distance between same-label and different-label
/// rows.
std::pair<double, double> intra_inter_distance(const std::vector<std::vector<double>>& rows,
                                               std::span<const std::size_t> labels);

}  // namespace miml::eval
