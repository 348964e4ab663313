// SPDX-License-Identifier: Apache-2.0
#include "miml/cli/commands.hpp"

#include <cstdio>

#include "miml/cli/gradcheck_suite.hpp"
#include "miml/core/binary_io.hpp"
#include "miml/core/errors.hpp"
#include "miml/eval/metrics.hpp"
#include "miml/model/checkpoint.hpp"
#include "miml/optim/objective.hpp"
#include "miml/train/trainer.hpp"

namespace miml::cli {
namespace {

std::string fixed(double v, int digits = 4) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void require_path(const std::filesystem::path& p, const char* key) {
  if (p.empty()) throw ConfigError(std::string(key) + " is required for this command");
}

// Output files go into an existing directory; nothing creates directories.
void require_output_dir(const std::filesystem::path& p) {
  if (p.empty()) return;
  const auto parent = p.parent_path().empty() ? std::filesystem::path(".") : p.parent_path();
  std::error_code ec;
  if (!std::filesystem::is_directory(parent, ec)) {
    throw IoError("cannot write '" + p.string() + "': directory '" + parent.string() + "' does not exist");
  }
}

std::string join(const std::vector<double>& v, int digits) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fixed(v[i], digits);
  return s;
}

}  // namespace

std::vector<ClassFrequency> class_frequencies(const synth::Dataset& dataset) {
  std::vector<ClassFrequency> out;
  const auto& m = dataset.manifest;
  for (std::size_t t = 0; t < m.tasks.size(); ++t) {
    std::vector<std::size_t> counts(m.tasks[t].class_count, 0);
    for (const auto& r : m.records) ++counts[r.labels[t]];
    for (std::size_t k = 0; k < counts.size(); ++k) {
      out.push_back({m.tasks[t].task_id, k, counts[k],
                     static_cast<double>(counts[k]) / static_cast<double>(m.records.size())});
    }
  }
  return out;
}

void cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  cfg.generator.validate();
  require_path(cfg.dataset_path, "dataset_path");
  require_output_dir(cfg.dataset_path);
  const auto data = synth::generate_dataset(cfg.generator);
  synth::write_dataset(data, cfg.dataset_path);
  out << "wrote " << cfg.dataset_path.string() << " (" << data.size() << " samples, "
      << std::filesystem::file_size(cfg.dataset_path) << " bytes) and " << synth::sidecar_path(cfg.dataset_path).string()
      << "\n";
  out << "task,class,count,frequency\n";
  for (const auto& f : class_frequencies(data)) {
    out << f.task_id << "," << f.class_index << "," << f.count << "," << fixed(f.frequency, 6) << "\n";
  }
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
  cfg.train.validate();
  require_path(cfg.dataset_path, "dataset_path");
  require_path(cfg.checkpoint_path, "checkpoint_path");
  for (const auto* p : {&cfg.checkpoint_path, &cfg.log_path, &cfg.epoch_log_path, &cfg.report_path}) {
    require_output_dir(*p);
  }
  const auto data = synth::read_dataset(cfg.dataset_path);
  std::optional<synth::Dataset> test;
  if (!cfg.test_dataset_path.empty()) {
    test = synth::read_dataset(cfg.test_dataset_path);
    eval::require_compatible(data.manifest.tasks, test->manifest.tasks);
  }
  if (data.size() < cfg.train.batch_size) {
    throw ConfigError("batch_size " + std::to_string(cfg.train.batch_size) + " exceeds the dataset size " +
                      std::to_string(data.size()));
  }
  if (cfg.resume && !std::filesystem::exists(cfg.checkpoint_path)) {
    throw FileNotFoundError("resume: checkpoint '" + cfg.checkpoint_path.string() + "' not found");
  }

  std::filesystem::path run_record = cfg.checkpoint_path;
  run_record += ".run.txt";
  io::write_text_atomic(run_record, render_config(cfg));

  train::TrainOptions opts;
  opts.config = cfg.train;
  opts.checkpoint_path = cfg.checkpoint_path;
  opts.log_path = cfg.log_path;
  opts.epoch_log_path = cfg.epoch_log_path;
  opts.test = test ? &*test : nullptr;
  opts.resume = cfg.resume;
  opts.on_epoch = [&](const eval::EpochTrace& e) {
    out << "epoch " << e.epoch << "/" << cfg.train.epochs << " lr " << optim::lr_at_epoch(e.epoch - 1, cfg.train)
        << " mt_loss " << fixed(e.mt_loss) << " mi [" << join(e.mi, 4) << "] "
        << (test ? "test_acc [" : "train_acc [") << join(e.accuracy, 3) << "]" << std::endl;
  };
  const auto result = train::train(data, opts);
  out << "checkpoint " << cfg.checkpoint_path.string() << " (configuration in " << run_record.string() << ")\n";

  eval::MetricsReport report = eval::evaluate(result.params, test ? *test : data);
  report.trace = result.trace;
  const std::string csv = eval::metrics_csv(report, eval::category_map_of(result.params.tasks));
  if (!cfg.report_path.empty()) {
    io::write_text_atomic(cfg.report_path, csv);
    out << "report " << cfg.report_path.string() << "\n";
  } else {
    out << csv;
  }
}

void cmd_eval(const RunConfig& cfg, std::ostream& out) {
  require_path(cfg.checkpoint_path, "checkpoint_path");
  require_path(cfg.dataset_path, "dataset_path");
  require_output_dir(cfg.report_path);
  const auto ck = model::load_checkpoint(cfg.checkpoint_path);
  const auto data = synth::read_dataset(cfg.dataset_path);
  const auto report = eval::evaluate(ck.params, data);
  const std::string csv = eval::metrics_csv(report, eval::category_map_of(ck.params.tasks));
  if (cfg.report_path.empty()) {
    out << csv;
  } else {
    io::write_text_atomic(cfg.report_path, csv);
    out << "report " << cfg.report_path.string() << "\n";
  }
}

bool cmd_gradcheck(const RunConfig& cfg, std::ostream& out) {
  GradCheckSuiteOptions opt;
  opt.step = cfg.gradcheck_step;
  opt.fault = cfg.gradcheck_fault;
  if (!(opt.step > 1e-7 && opt.step < 1e-3)) throw ConfigError("gradcheck_step must lie in (1e-7, 1e-3)");
  const auto rows = run_gradcheck_suite(opt);
  out << format_gradcheck_table(rows);
  bool ok = true;
  for (const auto& r : rows) ok = ok && r.passed;
  out << (ok ? "all checks passed" : "gradient check FAILED") << " (tolerance " << kGradCheckTolerance << ")\n";
  return ok;
}

void cmd_export_embeddings(const RunConfig& cfg, std::ostream& out) {
  require_path(cfg.checkpoint_path, "checkpoint_path");
  require_path(cfg.dataset_path, "dataset_path");
  require_path(cfg.embeddings_path, "embeddings_path");
  require_output_dir(cfg.embeddings_path);
  const auto ck = model::load_checkpoint(cfg.checkpoint_path);
  const auto data = synth::read_dataset(cfg.dataset_path);
  eval::export_embeddings(ck.params, data, cfg.embeddings_path);
  out << "wrote " << data.size() << " embeddings to " << cfg.embeddings_path.string() << "\n";
}

std::vector<std::string> command_names() { return {"gen-data", "train", "eval", "gradcheck", "export-embeddings"}; }

int run_command(const std::string& command, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    if (command == "gen-data") {
      cmd_gen_data(cfg, out);
    } else if (command == "train") {
      cmd_train(cfg, out);
    } else if (command == "eval") {
      cmd_eval(cfg, out);
    } else if (command == "gradcheck") {
      if (!cmd_gradcheck(cfg, out)) return kExitNumerical;
    } else if (command == "export-embeddings") {
      cmd_export_embeddings(cfg, out);
    } else {
      throw ConfigError("unknown command '" + command + "'");
    }
    return kExitOk;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace miml::cli
