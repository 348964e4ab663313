// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <limits>
#include <numeric>
#include <sstream>

#include "miml/cli/commands.hpp"
#include "miml/cli/config.hpp"
#include "miml/cli/gradcheck_suite.hpp"
#include "miml/core/binary_io.hpp"
#include "miml/core/errors.hpp"
#include "miml/model/checkpoint.hpp"

using namespace miml;
using namespace miml::cli;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("miml_test_cli_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

std::string slurp(const std::filesystem::path& p) {
  const auto b = io::read_file(p);
  return std::string(b.begin(), b.end());
}

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(const std::string& command, const RunConfig& cfg) {
  std::ostringstream out, err;
  Run r;
  r.code = run_command(command, cfg, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

RunConfig tiny_config(const std::filesystem::path& dir) {
  RunConfig cfg = resolve_config({{"sample_count", "24"},
                                  {"image_size", "16"},
                                  {"data_seed", "7"},
                                  {"batch_size", "8"},
                                  {"epochs", "1"},
                                  {"train_seed", "3"}});
  cfg.dataset_path = dir / "data.mtsc";
  cfg.checkpoint_path = dir / "model.miml";
  return cfg;
}

std::size_t entries(const std::filesystem::path& dir) {
  return static_cast<std::size_t>(
      std::distance(std::filesystem::directory_iterator(dir), std::filesystem::directory_iterator()));
}

}  // namespace

TEST_CASE("config text parsing") {
  const auto kv = parse_config_text("# header\n\nlambda_l = 0.25  # trailing\n  estimator=nce\n", "run.cfg");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"lambda_l", "0.25"});
  CHECK(kv[1] == std::pair<std::string, std::string>{"estimator", "nce"});

  try {
    parse_config_text("epochs = 3\nno equals sign\n", "run.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config_text("epochs = 3\nepochs = 4\n"), ConfigError);
  CHECK_THROWS_AS(read_config_file("/nonexistent/miml.cfg"), FileNotFoundError);
}

TEST_CASE("overrides and key resolution") {
  const std::vector<std::string> args{"--lambda_l", "0.5", "--estimator=nce"};
  const auto kv = parse_overrides(args);
  const auto cfg = resolve_config(kv);
  CHECK(cfg.train.lambda_l == 0.5);
  CHECK(cfg.train.estimator == optim::Estimator::Nce);

  const std::vector<std::string> dangling{"--epochs"};
  CHECK_THROWS_AS(parse_overrides(dangling), ConfigError);
  CHECK_THROWS_AS(resolve_config({{"lamda_l", "0.1"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({{"epochs", "three"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({{"epochs", "3x"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({{"estimator", "mine"}}), ConfigError);
  CHECK_THROWS_AS(resolve_config({{"resume", "maybe"}}), ConfigError);

  // Later pairs win, so a file followed by overrides behaves as expected.
  CHECK(resolve_config({{"epochs", "3"}, {"epochs", "5"}}).train.epochs == 5);
}

TEST_CASE("rendered config resolves back to itself") {
  RunConfig cfg = resolve_config({{"lambda_l", "0.1234567890123"}, {"correlation_rho", "0.7"}, {"mi_sign", "add"}});
  cfg.dataset_path = "a b/data.mtsc";
  const std::string text = render_config(cfg);
  const auto again = resolve_config(parse_config_text(text));
  CHECK(render_config(again) == text);
  CHECK(again.train.lambda_l == cfg.train.lambda_l);
  CHECK(again.dataset_path == cfg.dataset_path);
  for (const auto& [key, help] : config_keys()) {
    CHECK_MESSAGE(text.find(key + " = ") != std::string::npos, key);
    CHECK(!help.empty());
  }
}

TEST_CASE("gen-data is deterministic and reports class frequencies") {
  const auto dir = temp_dir("gen");
  RunConfig cfg = tiny_config(dir);
  cfg.generator.sample_count = 60;
  const auto first = run("gen-data", cfg);
  REQUIRE(first.code == kExitOk);
  const std::string bytes = slurp(cfg.dataset_path);
  const std::string sidecar = slurp(synth::sidecar_path(cfg.dataset_path));
  const auto second = run("gen-data", cfg);
  REQUIRE(second.code == kExitOk);
  CHECK(slurp(cfg.dataset_path) == bytes);
  CHECK(slurp(synth::sidecar_path(cfg.dataset_path)) == sidecar);
  CHECK(first.out == second.out);

  const auto freqs = class_frequencies(synth::read_dataset(cfg.dataset_path));
  std::map<std::string, double> sums;
  std::map<std::string, std::size_t> counts;
  for (const auto& f : freqs) {
    sums[f.task_id] += f.frequency;
    counts[f.task_id] += f.count;
  }
  CHECK(sums.size() == 4);
  for (const auto& [task, s] : sums) {
    CHECK_MESSAGE(s == doctest::Approx(1.0).epsilon(1e-12), task);
    CHECK(counts[task] == 60);
  }
  CHECK(first.out.find("task,class,count,frequency\n") != std::string::npos);
}

TEST_CASE("gen-data rejects an invalid config before writing") {
  const auto dir = temp_dir("gen_bad");
  RunConfig cfg = tiny_config(dir);
  cfg.generator.sample_count = 0;
  const auto r = run("gen-data", cfg);
  CHECK(r.code == kExitConfig);
  CHECK(!r.err.empty());
  CHECK(entries(dir) == 0);

  cfg = tiny_config(dir);
  cfg.dataset_path = dir / "missing_dir" / "data.mtsc";
  CHECK(run("gen-data", cfg).code == kExitIo);
  CHECK(entries(dir) == 0);
}

TEST_CASE("train, eval and export-embeddings end to end") {
  const auto dir = temp_dir("pipeline");
  RunConfig cfg = tiny_config(dir);
  REQUIRE(run("gen-data", cfg).code == kExitOk);
  cfg.log_path = dir / "steps.csv";
  cfg.epoch_log_path = dir / "epochs.csv";
  cfg.report_path = dir / "train_report.csv";
  const auto trained = run("train", cfg);
  REQUIRE_MESSAGE(trained.code == kExitOk, trained.err);
  CHECK(trained.out.find("epoch 1/1") != std::string::npos);
  CHECK(std::filesystem::exists(cfg.checkpoint_path));
  const auto record = slurp(std::filesystem::path(cfg.checkpoint_path.string() + ".run.txt"));
  CHECK(record == render_config(cfg));

  RunConfig ev = cfg;
  ev.report_path.clear();
  const auto a = run("eval", ev);
  const auto b = run("eval", ev);
  REQUIRE(a.code == kExitOk);
  CHECK(a.out == b.out);
  CHECK(a.out.rfind("task_id,class_count,macro_f,accuracy\n", 0) == 0);
  CHECK(a.out.find("\nplace,4,") != std::string::npos);

  ev.report_path = dir / "eval_report.csv";
  REQUIRE(run("eval", ev).code == kExitOk);
  CHECK(slurp(ev.report_path) == a.out);

  RunConfig ex = cfg;
  ex.embeddings_path = dir / "emb.tsv";
  const auto e = run("export-embeddings", ex);
  REQUIRE_MESSAGE(e.code == kExitOk, e.err);
  const std::string tsv = slurp(ex.embeddings_path);
  CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 25);
}

TEST_CASE("eval refuses a dataset whose tasks differ from the checkpoint") {
  const auto dir = temp_dir("compat");
  RunConfig cfg = tiny_config(dir);
  REQUIRE(run("gen-data", cfg).code == kExitOk);
  REQUIRE(run("train", cfg).code == kExitOk);

  auto other = synth::read_dataset(cfg.dataset_path);
  other.manifest.tasks[1].task_id = "sky";
  synth::write_dataset(other, dir / "other.mtsc");
  RunConfig ev = cfg;
  ev.dataset_path = dir / "other.mtsc";
  const auto r = run("eval", ev);
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("do not match") != std::string::npos);
}

TEST_CASE("missing inputs are I/O errors that name the path") {
  const auto dir = temp_dir("missing");
  RunConfig cfg = tiny_config(dir);
  REQUIRE(run("gen-data", cfg).code == kExitOk);
  cfg.checkpoint_path = dir / "nope.miml";
  const auto r = run("eval", cfg);
  CHECK(r.code == kExitIo);
  CHECK(r.err.find("nope.miml") != std::string::npos);

  cfg.embeddings_path = dir / "emb.tsv";
  CHECK(run("export-embeddings", cfg).code == kExitIo);
  CHECK(!std::filesystem::exists(cfg.embeddings_path));

  RunConfig tr = tiny_config(dir);
  tr.dataset_path = dir / "absent.mtsc";
  CHECK(run("train", tr).code == kExitIo);
  CHECK(!std::filesystem::exists(tr.checkpoint_path));
}

TEST_CASE("train validates before writing anything") {
  const auto dir = temp_dir("train_bad");
  RunConfig cfg = tiny_config(dir);
  REQUIRE(run("gen-data", cfg).code == kExitOk);
  const std::size_t before = entries(dir);

  cfg.train.batch_size = 100;  // larger than the 24-sample dataset
  CHECK(run("train", cfg).code == kExitConfig);
  cfg.train.batch_size = 8;
  cfg.train.lr_initial = -1.0;
  CHECK(run("train", cfg).code == kExitConfig);
  cfg.train.lr_initial = 1e-4;
  cfg.checkpoint_path.clear();
  CHECK(run("train", cfg).code == kExitConfig);
  CHECK(entries(dir) == before);
}

TEST_CASE("a non-finite step during train maps to the numerical exit code") {
  const auto dir = temp_dir("train_nan");
  RunConfig cfg = tiny_config(dir);
  REQUIRE(run("gen-data", cfg).code == kExitOk);
  REQUIRE(run("train", cfg).code == kExitOk);
  auto ck = model::load_checkpoint(cfg.checkpoint_path);
  ck.params.tensors.at("encoder.conv1.kernel").mutable_values()[0] = std::numeric_limits<double>::infinity();
  model::save_checkpoint(cfg.checkpoint_path, ck);
  const std::string bad = slurp(cfg.checkpoint_path);

  cfg.resume = true;
  cfg.train.epochs = 2;
  const auto r = run("train", cfg);
  CHECK(r.code == kExitNumerical);
  CHECK(r.err.find("numerical") != std::string::npos);
  CHECK(slurp(cfg.checkpoint_path) == bad);
}

TEST_CASE("gradcheck reports a corrupted backward rule") {
  CHECK_THROWS_AS(run_gradcheck_suite({.fault = "no_such_op"}), ConfigError);

  RunConfig cfg;
  cfg.gradcheck_fault = "softplus";
  const auto r = run("gradcheck", cfg);
  CHECK(r.code == kExitNumerical);
  CHECK(r.out.find("gradient check FAILED") != std::string::npos);

  // One table row per check, and only the corrupted one fails.
  const auto names = gradcheck_row_names();
  for (const auto& name : names) {
    const auto at = r.out.find("\n" + name + " ");
    REQUIRE_MESSAGE(at != std::string::npos, name);
    const auto line = r.out.substr(at + 1, r.out.find('\n', at + 1) - at - 1);
    const bool failed = line.find("FAIL") != std::string::npos;
    CHECK_MESSAGE(failed == (name == "softplus"), line);
  }

  cfg.gradcheck_step = 0.5;
  CHECK(run("gradcheck", cfg).code == kExitConfig);
}
