// SPDX-License-Identifier: Apache-2.0
#include "miml/cli/config.hpp"

#include <charconv>
#include <cstdio>
#include <functional>

#include "miml/core/binary_io.hpp"
#include "miml/core/errors.hpp"

namespace miml::cli {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("'" + std::string(key) + "': expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError("'" + std::string(key) + "': expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("'" + std::string(key) + "': expected true or false, got '" + std::string(v) + "'");
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Key {
  const char* name;
  const char* help;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define MIML_DOUBLE(name, field, help)                                                   \
  Key {                                                                                  \
    name, help, [](RunConfig& c, std::string_view v) { c.field = to_double(name, v); }, \
        [](const RunConfig& c) { return num(c.field); }                                  \
  }
#define MIML_UINT(name, field, help)                                                  \
  Key {                                                                               \
    name, help, [](RunConfig& c, std::string_view v) { c.field = to_u64(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                    \
  }
#define MIML_PATH(name, field, help)                                          \
  Key {                                                                       \
    name, help, [](RunConfig& c, std::string_view v) { c.field = v; },       \
        [](const RunConfig& c) { return c.field.string(); }                   \
  }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      MIML_UINT("sample_count", generator.sample_count, "samples to generate"),
      MIML_UINT("image_size", generator.image_size, "image side in pixels (multiple of 4, >= 16)"),
      MIML_UINT("data_seed", generator.seed, "dataset seed"),
      MIML_DOUBLE("correlation_rho", generator.correlation_rho, "P(wet | rainy)"),
      MIML_DOUBLE("imbalance_gamma", generator.imbalance_gamma, "place frequency exponent"),
      MIML_DOUBLE("noise_sigma", generator.noise_sigma, "pixel noise std"),
      MIML_DOUBLE("lambda_l", train.lambda_l, "MI weight"),
      MIML_DOUBLE("lr_initial", train.lr_initial, "learning rate before lr_switch_epoch"),
      MIML_DOUBLE("lr_after", train.lr_after, "learning rate from lr_switch_epoch on"),
      MIML_UINT("lr_switch_epoch", train.lr_switch_epoch, "0-based epoch of the learning-rate drop"),
      MIML_DOUBLE("adam_beta1", train.adam_beta1, "Adam first-moment decay"),
      MIML_DOUBLE("adam_beta2", train.adam_beta2, "Adam second-moment decay"),
      MIML_DOUBLE("adam_epsilon", train.adam_epsilon, "Adam denominator epsilon"),
      MIML_DOUBLE("weight_decay", train.weight_decay, "L2 term added to gradients"),
      MIML_DOUBLE("clip_norm", train.clip_norm, "global gradient norm limit"),
      MIML_UINT("batch_size", train.batch_size, "mini-batch size (>= 2)"),
      MIML_UINT("epochs", train.epochs, "training epochs"),
      MIML_UINT("train_seed", train.seed, "initialization, batch order and negative sampling seed"),
      Key{"estimator", "jsd or nce",
          [](RunConfig& c, std::string_view v) { c.train.estimator = optim::parse_estimator(v); },
          [](const RunConfig& c) { return std::string(optim::to_string(c.train.estimator)); }},
      Key{"pareto_weighting", "off or min_norm",
          [](RunConfig& c, std::string_view v) { c.train.pareto_weighting = optim::parse_task_weighting(v); },
          [](const RunConfig& c) { return std::string(optim::to_string(c.train.pareto_weighting)); }},
      Key{"mi_sign", "subtract (maximize the bound) or add",
          [](RunConfig& c, std::string_view v) { c.train.mi_sign = optim::parse_mi_sign(v); },
          [](const RunConfig& c) { return std::string(optim::to_string(c.train.mi_sign)); }},
      MIML_DOUBLE("leaky_alpha", train.leaky_alpha, "leaky ReLU negative slope"),
      MIML_DOUBLE("epsilon_m", train.epsilon_m_doc, "MI floor, recorded but unused"),
      MIML_PATH("dataset_path", dataset_path, "MTSC dataset (written by gen-data, read otherwise)"),
      MIML_PATH("test_dataset_path", test_dataset_path, "held-out MTSC dataset for per-epoch accuracy and the report"),
      MIML_PATH("checkpoint_path", checkpoint_path, "MIML checkpoint"),
      MIML_PATH("report_path", report_path, "metrics CSV"),
      MIML_PATH("log_path", log_path, "per-step training log CSV"),
      MIML_PATH("epoch_log_path", epoch_log_path, "per-epoch training summary CSV"),
      MIML_PATH("embeddings_path", embeddings_path, "embedding TSV"),
      Key{"resume", "continue training from checkpoint_path",
          [](RunConfig& c, std::string_view v) { c.resume = to_bool("resume", v); },
          [](const RunConfig& c) { return std::string(c.resume ? "true" : "false"); }},
      Key{"gradcheck_fault", "gradcheck row to corrupt (checker self-test)",
          [](RunConfig& c, std::string_view v) { c.gradcheck_fault = v; },
          [](const RunConfig& c) { return c.gradcheck_fault; }},
      MIML_DOUBLE("gradcheck_step", gradcheck_step, "finite-difference step"),
  };
  return table;
}

#undef MIML_DOUBLE
#undef MIML_UINT
#undef MIML_PATH

}  // namespace

KeyValues parse_config_text(std::string_view text, std::string_view source) {
  KeyValues out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(source) + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    for (const auto& [k, v] : out)
      if (k == key) throw ConfigError(where + ": '" + key + "' given twice");
    out.emplace_back(key, std::string(trim(line.substr(eq + 1))));
  }
  return out;
}

KeyValues read_config_file(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return parse_config_text(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                           path.string());
}

KeyValues parse_overrides(std::span<const std::string> args) {
  KeyValues out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.size() == 2) throw ConfigError("unexpected argument '" + a + "'");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= args.size()) throw ConfigError("option '" + a + "' needs a value");
      out.emplace_back(a.substr(2), args[++i]);
    }
  }
  return out;
}

RunConfig resolve_config(const KeyValues& pairs) {
  RunConfig cfg;
  for (const auto& [key, value] : pairs) {
    const Key* match = nullptr;
    for (const auto& k : keys())
      if (key == k.name) match = &k;
    if (!match) throw ConfigError("unknown configuration key '" + key + "'");
    match->set(cfg, value);
  }
  return cfg;
}

std::string render_config(const RunConfig& cfg) {
  std::string s;
  for (const auto& k : keys()) s += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return s;
}

std::vector<std::pair<std::string, std::string>> config_keys() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.help);
  return out;
}

}  // namespace miml::cli
