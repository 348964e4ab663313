// SPDX-License-Identifier: Apache-2.0
#include "miml/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "miml/autodiff/ops.hpp"
#include "miml/core/binary_io.hpp"
#include "miml/core/errors.hpp"

namespace miml::eval {
namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string describe(const std::vector<model::TaskSpec>& tasks) {
  std::string s = "[";
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (i) s += ", ";
    s += tasks[i].task_id + "/" + std::to_string(tasks[i].class_count);
  }
  return s + "]";
}

std::vector<std::size_t> chunk_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  for (std::size_t i = begin; i < end; ++i) idx[i - begin] = i;
  return idx;
}

}  // namespace

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts) t += c;
  return t;
}

double ConfusionMatrix::accuracy() const {
  const auto t = total();
  if (t == 0) return 0.0;
  std::uint64_t diag = 0;
  for (std::size_t k = 0; k < classes; ++k) diag += at(k, k);
  return static_cast<double>(diag) / static_cast<double>(t);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes != classes || other.task_id != task_id) {
    throw ContractError("ConfusionMatrix::merge: incompatible matrices for '" + task_id + "' and '" + other.task_id +
                        "'");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                                 std::size_t classes, std::string task_id) {
  if (predictions.size() != labels.size()) {
    throw ContractError("confusion_matrix: " + std::to_string(predictions.size()) + " predictions for " +
                        std::to_string(labels.size()) + " labels");
  }
  if (classes == 0) throw ContractError("confusion_matrix: zero classes");
  ConfusionMatrix cm{std::move(task_id), classes, std::vector<std::uint64_t>(classes * classes, 0)};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes || predictions[i] >= classes) {
      throw ContractError("confusion_matrix: entry " + std::to_string(i) + " outside [0," + std::to_string(classes) +
                          ")");
    }
    ++cm.counts[labels[i] * classes + predictions[i]];
  }
  return cm;
}

ClassF class_f_scores(const ConfusionMatrix& cm) {
  if (cm.classes == 0) throw ContractError("macro_f_score: empty matrix");
  ClassF out;
  out.f1.assign(cm.classes, 0.0);
  for (std::size_t k = 0; k < cm.classes; ++k) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < cm.classes; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const double tp = static_cast<double>(cm.at(k, k));
    if (row == 0 && col == 0) out.zero_division.push_back(k);
    const double p = col ? tp / static_cast<double>(col) : 0.0;
    const double r = row ? tp / static_cast<double>(row) : 0.0;
    out.f1[k] = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
  double sum = 0.0;
  for (double f : out.f1) sum += f;
  out.macro = sum / static_cast<double>(cm.classes);
  return out;
}

double macro_f_score(const ConfusionMatrix& cm) { return class_f_scores(cm).macro; }

TaskMetrics task_metrics(const model::TaskSpec& task, ConfusionMatrix cm) {
  TaskMetrics m;
  m.task = task;
  const auto f = class_f_scores(cm);
  m.macro_f = f.macro;
  m.zero_division = f.zero_division;
  m.accuracy = cm.accuracy();
  m.confusion = std::move(cm);
  return m;
}

std::map<std::string, std::string> category_map_of(const std::vector<model::TaskSpec>& tasks) {
  std::map<std::string, std::string> m;
  for (const auto& t : tasks) m[t.task_id] = t.category;
  return m;
}

std::vector<std::pair<std::string, double>> category_mean_f(const MetricsReport& report,
                                                            const std::map<std::string, std::string>& category_map) {
  std::vector<std::pair<std::string, double>> out;
  std::vector<std::size_t> counts;
  for (const auto& t : report.tasks) {
    auto it = category_map.find(t.task.task_id);
    if (it == category_map.end()) throw ContractError("category_mean_f: task '" + t.task.task_id + "' has no category");
    auto pos = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == it->second; });
    if (pos == out.end()) {
      out.emplace_back(it->second, 0.0);
      counts.push_back(0);
      pos = out.end() - 1;
    }
    pos->second += t.macro_f;
    ++counts[static_cast<std::size_t>(pos - out.begin())];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].second /= static_cast<double>(counts[i]);
  return out;
}

std::vector<double> forgetting_probe(const std::vector<std::vector<double>>& per_epoch_accuracy) {
  if (per_epoch_accuracy.size() < 2) throw ContractError("forgetting_probe: need at least 2 epochs");
  const std::size_t tasks = per_epoch_accuracy.front().size();
  std::vector<double> drop(tasks, 0.0), best(tasks, -1.0);
  for (const auto& row : per_epoch_accuracy) {
    if (row.size() != tasks) throw ContractError("forgetting_probe: ragged accuracy matrix");
    for (std::size_t t = 0; t < tasks; ++t) {
      best[t] = std::max(best[t], row[t]);
      drop[t] = std::max(drop[t], best[t] - row[t]);
    }
  }
  return drop;
}

std::string metrics_csv(const MetricsReport& report, const std::map<std::string, std::string>& category_map) {
  std::string s = "task_id,class_count,macro_f,accuracy\n";
  for (const auto& t : report.tasks) {
    s += t.task.task_id + "," + std::to_string(t.task.class_count) + "," + fmt("%.6f", t.macro_f) + "," +
         fmt("%.6f", t.accuracy) + "\n";
  }
  s += "\n# category means\ncategory,mean_f\n";
  for (const auto& [cat, f] : category_mean_f(report, category_map)) s += cat + "," + fmt("%.6f", f) + "\n";
  if (report.trace.size() >= 2) {
    std::vector<std::vector<double>> acc;
    for (const auto& e : report.trace) acc.push_back(e.accuracy);
    const auto drop = forgetting_probe(acc);
    s += "\n# forgetting (largest accuracy drop below the running best)\ntask_id,max_drop\n";
    for (std::size_t t = 0; t < report.tasks.size() && t < drop.size(); ++t) {
      s += report.tasks[t].task.task_id + "," + fmt("%.6f", drop[t]) + "\n";
    }
  }
  bool any = false;
  for (const auto& t : report.tasks) any = any || !t.zero_division.empty();
  if (any) {
    s += "\n# zero-division classes (F1 reported as 0)\ntask_id,class\n";
    for (const auto& t : report.tasks)
      for (auto k : t.zero_division) s += t.task.task_id + "," + std::to_string(k) + "\n";
  }
  return s;
}

void require_compatible(const std::vector<model::TaskSpec>& model_tasks,
                        const std::vector<model::TaskSpec>& data_tasks) {
  bool same = model_tasks.size() == data_tasks.size();
  for (std::size_t i = 0; same && i < model_tasks.size(); ++i) {
    same = model_tasks[i].task_id == data_tasks[i].task_id && model_tasks[i].class_count == data_tasks[i].class_count;
  }
  if (!same) {
    throw CompatibilityError("checkpoint tasks " + describe(model_tasks) + " do not match dataset tasks " +
                             describe(data_tasks));
  }
}

model::NetworkParams frozen(const model::NetworkParams& params) {
  model::NetworkParams p = params;
  for (auto& [name, t] : p.tensors) t = t.detach(false);
  return p;
}

MetricsReport evaluate(const model::NetworkParams& params, const synth::Dataset& dataset, std::size_t chunk) {
  require_compatible(params.tasks, dataset.manifest.tasks);
  const model::NetworkParams p = frozen(params);
  const std::size_t n = dataset.size();
  std::vector<std::vector<std::size_t>> predictions(p.tasks.size()), labels(p.tasks.size());
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const auto idx = chunk_indices(begin, std::min(n, begin + chunk));
    const auto batch = synth::make_batch(dataset, idx);
    const ad::Tensor latent = model::encode(p, batch.images);
    for (std::size_t t = 0; t < p.tasks.size(); ++t) {
      const ad::Tensor logits = model::decode(p, p.tasks[t], latent).logits;
      const std::size_t k = logits.dim(1);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
          if (logits.at(i * k + j) > logits.at(i * k + best)) best = j;
        predictions[t].push_back(best);
        labels[t].push_back(batch.labels[t][i]);
      }
    }
  }
  MetricsReport report;
  for (std::size_t t = 0; t < p.tasks.size(); ++t) {
    report.tasks.push_back(task_metrics(
        p.tasks[t], confusion_matrix(predictions[t], labels[t], p.tasks[t].class_count, p.tasks[t].task_id)));
  }
  return report;
}

std::vector<std::vector<double>> latent_embeddings(const model::NetworkParams& params, const synth::Dataset& dataset,
                                                   std::size_t chunk) {
  require_compatible(params.tasks, dataset.manifest.tasks);
  const model::NetworkParams p = frozen(params);
  const std::size_t n = dataset.size();
  std::vector<std::vector<double>> rows;
  rows.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const auto idx = chunk_indices(begin, std::min(n, begin + chunk));
    const ad::Tensor pooled = ad::global_average_pool(model::encode(p, synth::image_tensor(dataset, idx)));
    const std::size_t c = pooled.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      rows.emplace_back(pooled.values().begin() + static_cast<std::ptrdiff_t>(i * c),
                        pooled.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
    }
  }
  return rows;
}

std::string embeddings_tsv(const model::NetworkParams& params, const synth::Dataset& dataset, std::size_t chunk) {
  const auto rows = latent_embeddings(params, dataset, chunk);
  std::string s = "index";
  for (const auto& t : dataset.manifest.tasks) s += "\t" + t.task_id;
  const std::size_t width = rows.empty() ? model::arch::kLatentChannels : rows.front().size();
  for (std::size_t j = 0; j < width; ++j) s += "\tz" + std::to_string(j);
  s += "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    s += std::to_string(i);
    for (auto l : dataset.manifest.records[i].labels) s += "\t" + std::to_string(l);
    for (double v : rows[i]) s += "\t" + fmt("%.9g", v);
    s += "\n";
  }
  return s;
}

void export_embeddings(const model::NetworkParams& params, const synth::Dataset& dataset,
                       const std::filesystem::path& path) {
  if (path.empty()) throw IoError("export_embeddings: empty output path");
  io::write_text_atomic(path, embeddings_tsv(params, dataset));
}

std::pair<double, double> intra_inter_distance(const std::vector<std::vector<double>>& rows,
                                               std::span<const std::size_t> labels) {
  if (rows.size() != labels.size()) throw ContractError("intra_inter_distance: row/label count mismatch");
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < rows[i].size(); ++k) d += (rows[i][k] - rows[j][k]) * (rows[i][k] - rows[j][k]);
      d = std::sqrt(d);
      if (labels[i] == labels[j]) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  return {n_intra ? intra / double(n_intra) : 0.0, n_inter ? inter / double(n_inter) : 0.0};
}

}  // namespace miml::eval
