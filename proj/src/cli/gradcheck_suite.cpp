// SPDX-License-Identifier: Apache-2.0
#include "miml/cli/gradcheck_suite.hpp"

#include <cmath>
#include <cstdio>
#include <functional>

#include "miml/autodiff/gradcheck.hpp"
#include "miml/autodiff/ops.hpp"
#include "miml/core/errors.hpp"
#include "miml/core/random.hpp"
#include "miml/mi/estimators.hpp"
#include "miml/model/network.hpp"
#include "miml/optim/objective.hpp"
#include "miml/synth/dataset.hpp"
#include "miml/train/trainer.hpp"

namespace miml::cli {
namespace {

using ad::Tensor;

Tensor random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Magnitudes in [0.2, 2.5] with random sign: clear of kinks at 0 and +-1.
Tensor off_kink_tensor(ad::Shape shape, Rng& rng) {
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) {
    double m = rng.uniform(0.2, 2.5);
    if (std::abs(m - 1.0) < 0.2) m += 0.5;
    x = rng.bernoulli(0.5) ? m : -m;
  }
  return Tensor(std::move(shape), std::move(v));
}

// Fixed random linear functional: turns any tensor into a scalar.
Tensor project(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(t.numel());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return ad::reshape(ad::matmul(ad::reshape(t, {1, t.numel()}), Tensor({t.numel(), 1}, std::move(w))), {});
}

// An identity whose backward rule is deliberately wrong.
Tensor corrupt(const Tensor& t) {
  return ad::map_elementwise(t, [](double v) { return v; }, [](double) { return 1.5; }, "corrupted_identity");
}

struct Check {
  ad::ScalarFunction f;
  Tensor point;
  std::size_t coordinates = 0;
};

struct RowSpec {
  std::string name;
  // Builds the checks; `out` wraps each row output (identity or corrupted).
  std::function<std::vector<Check>(const std::function<Tensor(const Tensor&)>& out)> build;
};

std::vector<RowSpec> row_specs(const GradCheckSuiteOptions& opt) {
  std::vector<RowSpec> rows;
  const std::uint64_t s = opt.seed;
  auto unary = [&](std::string name, ad::Shape shape, bool off_kink, std::function<Tensor(const Tensor&)> op) {
    rows.push_back({name, [=](const auto& out) {
                      Rng rng(derive_seed(s, stream_id(name)));
                      Tensor x = off_kink ? off_kink_tensor(shape, rng) : random_tensor(shape, rng);
                      return std::vector<Check>{{[=](const Tensor& p) { return project(out(op(p)), s); }, x}};
                    }});
  };

  rows.push_back({"conv2d", [=](const auto& out) {
                    Rng rng(derive_seed(s, stream_id("conv2d")));
                    const Tensor x = random_tensor({2, 2, 5, 5}, rng), k = random_tensor({3, 2, 3, 3}, rng),
                                 b = random_tensor({3}, rng);
                    auto f = [=](const Tensor& xx, const Tensor& kk, const Tensor& bb) {
                      return project(out(ad::conv2d(xx, kk, bb, 2, 1)), s);
                    };
                    return std::vector<Check>{{[=](const Tensor& p) { return f(p, k, b); }, x},
                                              {[=](const Tensor& p) { return f(x, p, b); }, k},
                                              {[=](const Tensor& p) { return f(x, k, p); }, b}};
                  }});
  unary("leaky_relu", {3, 5}, true, [](const Tensor& p) { return ad::leaky_relu(p, 0.01); });
  unary("softplus", {3, 5}, false, [](const Tensor& p) { return ad::softplus(ad::multiply_scalar(p, 4.0)); });
  unary("clamp", {3, 5}, true, [](const Tensor& p) { return ad::clamp(p, -1.0, 1.0); });
  for (const auto mode : {ad::BatchNormMode::Train, ad::BatchNormMode::Eval}) {
    const std::string name = mode == ad::BatchNormMode::Train ? "batch_norm_train" : "batch_norm_eval";
    rows.push_back({name, [=](const auto& out) {
                      Rng rng(derive_seed(s, stream_id(name)));
                      const Tensor x = random_tensor({3, 2, 2, 2}, rng, -2.0, 2.0);
                      const Tensor g = random_tensor({2}, rng, 0.5, 1.5), b = random_tensor({2}, rng);
                      ad::BatchNormState init{{0.1, -0.2}, {0.8, 1.3}};
                      auto f = [=](const Tensor& xx, const Tensor& gg, const Tensor& bb) {
                        ad::BatchNormState st = init;
                        return project(out(ad::batch_norm(xx, gg, bb, mode, st)), s);
                      };
                      return std::vector<Check>{{[=](const Tensor& p) { return f(p, g, b); }, x},
                                                {[=](const Tensor& p) { return f(x, p, b); }, g},
                                                {[=](const Tensor& p) { return f(x, g, p); }, b}};
                    }});
  }
  rows.push_back({"matmul", [=](const auto& out) {
                    Rng rng(derive_seed(s, stream_id("matmul")));
                    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
                    return std::vector<Check>{
                        {[=](const Tensor& p) { return project(out(ad::matmul(p, b)), s); }, a},
                        {[=](const Tensor& p) { return project(out(ad::matmul(a, p)), s); }, b}};
                  }});
  rows.push_back({"add", [=](const auto& out) {
                    Rng rng(derive_seed(s, stream_id("add")));
                    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng),
                                 bias = random_tensor({4}, rng);
                    return std::vector<Check>{
                        {[=](const Tensor& p) { return project(out(ad::add(p, b)), s); }, a},
                        {[=](const Tensor& p) { return project(out(ad::add(a, p)), s); }, b},
                        {[=](const Tensor& p) { return project(out(ad::add(a, p)), s); }, bias}};
                  }});
  unary("multiply_scalar", {3, 4}, false, [](const Tensor& p) { return ad::multiply_scalar(p, -2.5); });
  rows.push_back({"subtract", [=](const auto& out) {
                    Rng rng(derive_seed(s, stream_id("subtract")));
                    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
                    return std::vector<Check>{
                        {[=](const Tensor& p) { return project(out(ad::subtract(p, b)), s); }, a},
                        {[=](const Tensor& p) { return project(out(ad::subtract(a, p)), s); }, b}};
                  }});
  rows.push_back({"concat", [=](const auto& out) {
                    Rng rng(derive_seed(s, stream_id("concat")));
                    const Tensor a = random_tensor({3, 2}, rng), b = random_tensor({3, 4}, rng);
                    auto f = [=](const Tensor& x, const Tensor& y) {
                      const std::vector<Tensor> parts{x, y};
                      return project(out(ad::concat(parts)), s);
                    };
                    return std::vector<Check>{{[=](const Tensor& p) { return f(p, b); }, a},
                                              {[=](const Tensor& p) { return f(a, p); }, b}};
                  }});
  unary("reshape", {2, 6}, false, [](const Tensor& p) { return ad::reshape(p, {3, 4}); });
  unary("flatten", {2, 2, 2, 3}, false, [](const Tensor& p) { return ad::flatten(p); });
  unary("global_average_pool", {2, 3, 2, 2}, false, [](const Tensor& p) { return ad::global_average_pool(p); });
  unary("mean", {3, 4}, false, [](const Tensor& p) { return ad::mean(p); });
  unary("log_softmax", {3, 4}, false, [](const Tensor& p) { return ad::log_softmax(ad::multiply_scalar(p, 3.0)); });
  unary("gather_logit", {3, 4}, false, [](const Tensor& p) {
    const std::vector<std::size_t> idx{3, 0, 2};
    return ad::gather_logit(p, idx);
  });
  unary("gather_rows", {3, 4}, false, [](const Tensor& p) {
    const std::vector<std::size_t> rows_idx{2, 0, 2, 1};
    return ad::gather_rows(p, rows_idx);
  });
  unary("cross_entropy", {4, 3}, false, [](const Tensor& p) {
    const std::vector<std::size_t> labels{0, 2, 1, 2};
    return optim::cross_entropy(ad::multiply_scalar(p, 3.0), labels);
  });
  rows.push_back({"jsd_lower_bound", [=](const auto& out) {
                    Rng rng(derive_seed(s, stream_id("jsd_lower_bound")));
                    const Tensor pos = random_tensor({6}, rng, -4, 4), neg = random_tensor({6}, rng, -4, 4);
                    return std::vector<Check>{
                        {[=](const Tensor& p) { return out(mi::jsd_lower_bound({p, neg})); }, pos},
                        {[=](const Tensor& p) { return out(mi::jsd_lower_bound({pos, p})); }, neg}};
                  }});
  unary("nce_lower_bound", {5, 5}, false,
        [](const Tensor& p) { return mi::nce_lower_bound(ad::multiply_scalar(p, 3.0)); });
  rows.push_back({"critic_score", [=](const auto& out) {
                    const auto params = model::init_params({{"probe", 2, "probe"}}, s);
                    const auto& task = params.tasks[0];
                    Rng rng(derive_seed(s, stream_id("critic_score")));
                    const Tensor z = random_tensor({3, model::arch::kSummaryWidth}, rng);
                    const Tensor x = random_tensor({3, model::arch::kInputSummaryWidth}, rng);
                    std::vector<Check> checks{
                        {[=](const Tensor& p) { return project(out(model::critic_score(params, task, p, x)), s); }, z}};
                    for (const auto& [name, t] : params.tensors) {
                      if (name.rfind("critic.", 0) != 0) continue;
                      checks.push_back({[=, name = name](const Tensor& p) {
                                          auto q = params;
                                          q.tensors.at(name) = p;
                                          return project(out(model::critic_score(q, task, z, x)), s);
                                        },
                                        t, 40});
                    }
                    return checks;
                  }});
  rows.push_back({"combined_loss_end_to_end", [=](const auto& out) {
                    synth::GeneratorConfig g;
                    g.sample_count = 2;
                    g.seed = s;
                    const auto data = synth::generate_dataset(g);
                    const std::vector<std::size_t> idx{0, 1};
                    const auto batch = synth::make_batch(data, idx);
                    const auto params = model::init_params(data.manifest.tasks, s, g.image_size);
                    optim::TrainConfig cfg;
                    std::vector<Check> checks;
                    for (const auto& [name, t] : params.tensors) {
                      checks.push_back({[=, name = name](const Tensor& p) {
                                          auto q = params;
                                          q.tensors.at(name) = p;
                                          Rng negatives(1);
                                          return out(train::uniform_objective(q, batch, cfg, negatives).combined);
                                        },
                                        t, opt.end_to_end_coordinates});
                    }
                    return checks;
                  }});
  return rows;
}

}  // namespace

std::vector<std::string> gradcheck_row_names() {
  std::vector<std::string> names;
  for (const auto& r : row_specs(GradCheckSuiteOptions{})) names.push_back(r.name);
  return names;
}

std::vector<GradCheckRow> run_gradcheck_suite(const GradCheckSuiteOptions& options) {
  const auto specs = row_specs(options);
  if (!options.fault.empty()) {
    bool known = false;
    for (const auto& r : specs) known = known || r.name == options.fault;
    if (!known) throw ConfigError("gradcheck_fault: no row named '" + options.fault + "'");
  }
  std::vector<GradCheckRow> rows;
  for (const auto& spec : specs) {
    const bool faulty = spec.name == options.fault;
    const std::function<Tensor(const Tensor&)> out = [faulty](const Tensor& t) { return faulty ? corrupt(t) : t; };
    GradCheckRow row;
    row.name = spec.name;
    std::uint64_t sample_seed = 0;
    for (const auto& check : spec.build(out)) {
      ad::GradCheckOptions go;
      go.step = options.step;
      go.skip_nonsmooth = true;
      go.max_coordinates = check.coordinates;
      go.sample_seed = derive_seed(options.seed, sample_seed++);
      const auto rep = ad::gradient_check_report(check.f, check.point, go);
      row.max_error = std::max(row.max_error, rep.max_error);
      row.compared += rep.compared;
      row.nonsmooth += rep.nonsmooth;
    }
    const std::size_t probes = row.compared + row.nonsmooth;
    row.passed = row.compared > 0 && row.max_error < kGradCheckTolerance && row.nonsmooth * 20 <= probes;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows) {
  std::string s;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-26s %14s %9s %10s  %s\n", "check", "max_rel_error", "compared", "nonsmooth",
                "result");
  s += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-26s %14.3e %9zu %10zu  %s\n", r.name.c_str(), r.max_error, r.compared,
                  r.nonsmooth, r.passed ? "PASS" : "FAIL");
    s += buf;
  }
  return s;
}

}  // namespace miml::cli
