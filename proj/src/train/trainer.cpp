// SPDX-License-Identifier: Apache-2.0
#include "miml/train/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "miml/core/binary_io.hpp"
#include "miml/core/errors.hpp"
#include "miml/mi/estimators.hpp"
#include "miml/model/checkpoint.hpp"
#include "miml/optim/objective.hpp"
#include "miml/optim/pareto.hpp"

namespace miml::train {
namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t count_correct(const ad::Tensor& logits, std::span<const std::size_t> labels) {
  const std::size_t k = logits.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (logits.at(i * k + j) > logits.at(i * k + best)) best = j;
    hits += best == labels[i];
  }
  return hits;
}

struct TaskTerms {
  std::vector<ad::Tensor> ce;
  std::vector<ad::Tensor> mi;
  std::vector<std::size_t> correct;
};

// CE and MI bound for every task on top of a shared latent.
TaskTerms task_terms(const model::NetworkParams& p, const ad::Tensor& latent, const ad::Tensor& x_summary,
                     const synth::Batch& batch, const optim::TrainConfig& cfg, Rng& negatives) {
  TaskTerms out;
  const std::size_t n = batch.indices.size();
  for (std::size_t t = 0; t < p.tasks.size(); ++t) {
    const auto& task = p.tasks[t];
    const auto dec = model::decode(p, task, latent);
    out.ce.push_back(optim::cross_entropy(dec.logits, batch.labels[t]));
    out.correct.push_back(count_correct(dec.logits, batch.labels[t]));
    const mi::Critic critic = [&p, &task](const ad::Tensor& z, const ad::Tensor& x) {
      return model::critic_score(p, task, z, x);
    };
    if (cfg.estimator == optim::Estimator::Jsd) {
      const auto perm = mi::derangement_shuffle(n, negatives);
      out.mi.push_back(mi::jsd_lower_bound(mi::score_pairs(critic, dec.summary, x_summary, perm)));
    } else {
      out.mi.push_back(mi::nce_lower_bound(mi::score_matrix(critic, dec.summary, x_summary)));
    }
  }
  return out;
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string("non-finite ") + what + " (" + num(v) + ")");
}

std::string read_text_or_empty(const std::filesystem::path& path) {
  if (path.empty() || !std::filesystem::exists(path)) return {};
  const auto bytes = io::read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

// First `lines` lines of text (each with its newline).
std::string first_lines(const std::string& text, std::size_t lines) {
  std::size_t pos = 0;
  for (std::size_t i = 0; i < lines; ++i) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) throw FormatError("log", "log has fewer lines than the checkpoint records");
    pos = nl + 1;
  }
  return text.substr(0, pos);
}

class LineLog {
 public:
  LineLog() = default;
  // Starts the file with `prefix`, replacing anything already there.
  void open(const std::filesystem::path& path, const std::string& prefix) {
    if (path.empty()) return;
    io::write_text_atomic(path, prefix);
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw IoError("cannot open log '" + path.string() + "' for appending");
    path_ = path;
  }
  void write(const std::string& line) {
    if (!out_.is_open()) return;
    out_ << line << std::flush;
    if (!out_) throw IoError("write to '" + path_.string() + "' failed");
  }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

}  // namespace

std::uint64_t batch_seed(std::uint64_t train_seed, std::size_t epoch) {
  return derive_seed(derive_seed(train_seed, stream_id("batches")), epoch);
}

std::uint64_t negative_seed(std::uint64_t train_seed, std::size_t epoch) {
  return derive_seed(derive_seed(train_seed, stream_id("negatives")), epoch);
}

Objective uniform_objective(model::NetworkParams& params, const synth::Batch& batch, const optim::TrainConfig& cfg,
                            Rng& negatives) {
  const ad::Tensor latent = model::encode(params, batch.images, ad::BatchNormMode::Train);
  TaskTerms terms = task_terms(params, latent, model::input_summary(batch.images), batch, cfg, negatives);
  Objective obj;
  obj.mt = optim::multi_task_loss(terms.ce);
  obj.combined = optim::combined_loss(obj.mt, terms.mi, cfg.lambda_l, cfg.mi_sign);
  obj.ce = std::move(terms.ce);
  obj.mi = std::move(terms.mi);
  obj.correct = std::move(terms.correct);
  return obj;
}

StepStats accumulate_gradients(model::NetworkParams& params, const synth::Batch& batch, const optim::TrainConfig& cfg,
                               Rng& negatives) {
  params.zero_grad();
  StepStats stats;
  if (cfg.pareto_weighting == optim::TaskWeighting::Uniform) {
    const Objective obj = uniform_objective(params, batch, cfg, negatives);
    stats.mt_loss = obj.mt.item();
    for (const auto& m : obj.mi) stats.mi.push_back(m.item());
    stats.combined = obj.combined.item();
    stats.correct = obj.correct;
    require_finite(stats.combined, "combined loss");
    ad::backward(obj.combined);
  } else {
    // Per-task gradients with respect to the shared latent pick the weights;
    // the weighted loss is then pushed back through the encoder once.
    const ad::Tensor latent = model::encode(params, batch.images, ad::BatchNormMode::Train);
    const ad::Tensor x_summary = model::input_summary(batch.images);
    ad::Tensor z = latent.detach(true);
    const TaskTerms terms = task_terms(params, z, x_summary, batch, cfg, negatives);
    const double coeff = cfg.mi_sign == optim::MiSign::Maximize ? -cfg.lambda_l : cfg.lambda_l;
    std::vector<ad::Tensor> task_loss;
    std::vector<std::vector<double>> task_grad;
    for (std::size_t t = 0; t < terms.ce.size(); ++t) {
      task_loss.push_back(cfg.lambda_l == 0.0 ? terms.ce[t]
                                              : ad::add(terms.ce[t], ad::multiply_scalar(terms.mi[t], coeff)));
      require_finite(task_loss.back().item(), "task loss");
      z.zero_grad();
      ad::backward(task_loss.back());
      task_grad.emplace_back(z.grad().begin(), z.grad().end());
    }
    params.zero_grad();
    z.zero_grad();
    stats.task_weights = optim::min_norm_task_weights(task_grad);
    const ad::Tensor total = optim::weighted_task_loss(task_loss, stats.task_weights);
    stats.mt_loss = optim::multi_task_loss(terms.ce).item();
    for (const auto& m : terms.mi) stats.mi.push_back(m.item());
    stats.combined = total.item();
    stats.correct = terms.correct;
    require_finite(stats.combined, "combined loss");
    ad::backward(total);
    ad::backward(latent, z.grad());
  }
  return stats;
}

StepStats train_step(model::NetworkParams& params, optim::OptimizerState& state, const synth::Batch& batch,
                     const optim::TrainConfig& cfg, double lr, Rng& negatives) {
  StepStats stats = accumulate_gradients(params, batch, cfg, negatives);
  // Only tensors the loss reached take part in the update. With lambda_l = 0
  // the critics are outside the objective and must not drift under weight
  // decay: shrinking them raises the logged bound toward -2 ln 2 by itself.
  model::NetworkParams reached;
  for (const auto& [name, t] : params.tensors)
    if (t.has_grad()) reached.tensors.emplace(name, t);  // shares storage with params
  optim::Gradients grads = optim::collect_gradients(reached);
  stats.grad_norm = optim::clip_global_norm(grads, cfg.clip_norm);
  require_finite(stats.grad_norm, "gradient norm");
  optim::adam_step(reached, grads, state, lr, cfg);
  return stats;
}

std::string step_log_header() { return "step,epoch,lr,mt_loss,mi,combined_loss,grad_norm_preclip\n"; }

std::string step_log_line(std::uint64_t step, std::size_t epoch, double lr, const StepStats& stats) {
  std::string mi;
  for (std::size_t t = 0; t < stats.mi.size(); ++t) mi += (t ? ";" : "") + num(stats.mi[t]);
  return std::to_string(step) + "," + std::to_string(epoch) + "," + num(lr) + "," + num(stats.mt_loss) + "," + mi +
         "," + num(stats.combined) + "," + num(stats.grad_norm) + "\n";
}

std::string epoch_log_header(const std::vector<model::TaskSpec>& tasks) {
  std::string s = "epoch,lr,mt_loss";
  for (const auto& t : tasks) s += ",mi_" + t.task_id;
  for (const auto& t : tasks) s += ",acc_" + t.task_id;
  return s + "\n";
}

std::string epoch_log_line(const eval::EpochTrace& trace, double lr) {
  std::string s = std::to_string(trace.epoch) + "," + num(lr) + "," + num(trace.mt_loss);
  for (double v : trace.mi) s += "," + num(v);
  for (double v : trace.accuracy) s += "," + num(v);
  return s + "\n";
}

std::vector<eval::EpochTrace> parse_epoch_log(const std::string& text, std::size_t task_count) {
  std::vector<eval::EpochTrace> out;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != 3 + 2 * task_count) throw FormatError("epoch_log", "malformed row '" + line + "'");
    eval::EpochTrace e;
    try {
      e.epoch = std::stoul(cells[0]);
      e.mt_loss = std::stod(cells[2]);
      for (std::size_t t = 0; t < task_count; ++t) {
        e.mi.push_back(std::stod(cells[3 + t]));
        e.accuracy.push_back(std::stod(cells[3 + task_count + t]));
      }
    } catch (const std::logic_error&) {
      throw FormatError("epoch_log", "unparsable row '" + line + "'");
    }
    out.push_back(std::move(e));
  }
  return out;
}

TrainResult train(const synth::Dataset& dataset, const TrainOptions& options) {
  const optim::TrainConfig& cfg = options.config;
  cfg.validate();
  if (dataset.size() < cfg.batch_size) {
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) + " exceeds the dataset size " +
                      std::to_string(dataset.size()));
  }
  const auto& tasks = dataset.manifest.tasks;
  if (options.test) eval::require_compatible(tasks, options.test->manifest.tasks);

  TrainResult result;
  std::size_t first_epoch = 0;
  std::string step_prefix = step_log_header();
  std::string epoch_prefix = epoch_log_header(tasks);
  if (options.resume) {
    if (options.checkpoint_path.empty()) throw ConfigError("resume requested without a checkpoint path");
    model::Checkpoint ck = model::load_checkpoint(options.checkpoint_path);
    if (!ck.training) throw FormatError("training_state", "checkpoint holds no training state to resume from");
    eval::require_compatible(ck.params.tasks, tasks);
    result.params = std::move(ck.params);
    result.optimizer.step = ck.training->optimizer_step;
    result.optimizer.first_moment = std::move(ck.training->first_moment);
    result.optimizer.second_moment = std::move(ck.training->second_moment);
    first_epoch = ck.training->epochs_completed;
    if (!options.log_path.empty()) {
      step_prefix = first_lines(read_text_or_empty(options.log_path), 1 + result.optimizer.step);
    }
    if (!options.epoch_log_path.empty()) {
      epoch_prefix = first_lines(read_text_or_empty(options.epoch_log_path), 1 + first_epoch);
      result.trace = parse_epoch_log(epoch_prefix, tasks.size());
    }
  } else {
    result.params = model::init_params(tasks, cfg.seed, dataset.manifest.height, cfg.leaky_alpha);
    // Explicit zero moments (what Adam starts from anyway), so tensors that
    // never receive a gradient still have state to checkpoint.
    for (const auto& [name, t] : result.params.tensors) {
      result.optimizer.first_moment[name].assign(t.numel(), 0.0);
      result.optimizer.second_moment[name].assign(t.numel(), 0.0);
    }
  }

  LineLog step_log, epoch_log;
  step_log.open(options.log_path, step_prefix);
  epoch_log.open(options.epoch_log_path, epoch_prefix);

  const std::size_t last_epoch =
      options.stop_after_epoch ? std::min(options.stop_after_epoch, cfg.epochs) : cfg.epochs;
  for (std::size_t epoch = first_epoch; epoch < last_epoch; ++epoch) {
    const double lr = optim::lr_at_epoch(epoch, cfg);
    synth::BatchIterator batches(dataset, cfg.batch_size, batch_seed(cfg.seed, epoch));
    Rng negatives(negative_seed(cfg.seed, epoch));
    eval::EpochTrace trace;
    trace.epoch = epoch + 1;
    trace.mi.assign(tasks.size(), 0.0);
    std::vector<std::size_t> hits(tasks.size(), 0);
    std::size_t seen = 0, steps = 0;
    synth::Batch batch;
    while (batches.next(batch)) {
      const StepStats s = train_step(result.params, result.optimizer, batch, cfg, lr, negatives);
      step_log.write(step_log_line(result.optimizer.step, epoch + 1, lr, s));
      trace.mt_loss += s.mt_loss;
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        trace.mi[t] += s.mi[t];
        hits[t] += s.correct[t];
      }
      seen += batch.indices.size();
      ++steps;
    }
    trace.mt_loss /= static_cast<double>(steps);
    for (auto& m : trace.mi) m /= static_cast<double>(steps);
    if (options.test) {
      for (const auto& tm : eval::evaluate(result.params, *options.test).tasks) trace.accuracy.push_back(tm.accuracy);
    } else {
      for (auto h : hits) trace.accuracy.push_back(static_cast<double>(h) / static_cast<double>(seen));
    }

    // Log before checkpointing: a resume trims log rows the checkpoint lacks.
    epoch_log.write(epoch_log_line(trace, lr));
    if (!options.checkpoint_path.empty()) {
      model::TrainingState ts{static_cast<std::uint32_t>(epoch + 1), result.optimizer.step,
                              result.optimizer.first_moment, result.optimizer.second_moment};
      model::save_checkpoint(options.checkpoint_path, model::Checkpoint{result.params, ts});
    }
    if (options.on_epoch) options.on_epoch(trace);
    result.trace.push_back(std::move(trace));
  }
  return result;
}

}  // namespace miml::train
