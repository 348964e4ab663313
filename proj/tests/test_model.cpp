// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "miml/autodiff/gradcheck.hpp"
#include "miml/autodiff/ops.hpp"
#include "miml/core/binary_io.hpp"
#include "miml/core/errors.hpp"
#include "miml/model/checkpoint.hpp"
#include "miml/model/network.hpp"
#include "miml/optim/objective.hpp"
#include "support/oracles.hpp"

using namespace miml;
using namespace miml::model;
using ad::Shape;
using ad::Tensor;
using miml::testing::random_tensor;

namespace {

std::vector<TaskSpec> two_tasks() { return {{"weather", 3, "weather"}, {"surface", 2, "surface"}}; }

Tensor random_images(std::size_t n, Rng& rng, std::size_t size = 32) {
  return random_tensor({n, 3, size, size}, rng, 0.0, 1.0);
}

using ParamLoss = std::function<Tensor(NetworkParams&)>;

// Finite-difference check of one named parameter, holding the rest fixed.
ad::GradCheckReport check_param_report(const NetworkParams& base, const std::string& name, const ParamLoss& loss,
                                       std::size_t coords, bool skip_nonsmooth) {
  ad::ScalarFunction f = [&](const Tensor& point) {
    NetworkParams q = base;
    q.tensors[name] = point;
    return loss(q);
  };
  ad::GradCheckOptions opt;
  opt.max_coordinates = coords;
  opt.sample_seed = 7;
  opt.skip_nonsmooth = skip_nonsmooth;
  return ad::gradient_check_report(f, base.at(name), opt);
}

double check_param(const NetworkParams& base, const std::string& name, const ParamLoss& loss,
                   std::size_t coords = 0) {
  return check_param_report(base, name, loss, coords, false).max_error;
}

void randomize_biases(NetworkParams& p, Rng& rng) {
  for (auto& [name, t] : p.tensors) {
    if (name.ends_with(".bias") || name.ends_with(".beta")) {
      for (double& v : t.mutable_values()) v = rng.uniform(-0.1, 0.1);
    }
  }
}

}  // namespace

TEST_CASE("task set validation") {
  CHECK_NOTHROW(validate_task_set(two_tasks()));
  CHECK_THROWS_AS(validate_task_set({}), ContractError);
  CHECK_THROWS_AS(validate_task_set({{"a", 1, "x"}}), ContractError);
  CHECK_THROWS_AS(validate_task_set({{"a", 2, "x"}, {"a", 3, "y"}}), ContractError);
}

TEST_CASE("parameter namespaces and shapes") {
  auto p = init_params(two_tasks(), 3);
  CHECK(p.at("encoder.conv1.kernel").shape() == Shape{16, 3, 3, 3});
  CHECK(p.at("encoder.conv2.kernel").shape() == Shape{32, 16, 3, 3});
  CHECK(p.at("encoder.conv3.kernel").shape() == Shape{64, 32, 3, 3});
  CHECK(p.at("decoder.weather.conv1.kernel").shape() == Shape{32, 64, 3, 3});
  CHECK(p.at("decoder.weather.conv2.kernel").shape() == Shape{3, 32, 1, 1});
  CHECK(p.at("decoder.surface.conv2.bias").shape() == Shape{2});
  CHECK(p.at("critic.surface.layer1.weight").shape() == Shape{96, 128});
  CHECK(p.at("critic.surface.layer2.weight").shape() == Shape{128, 1});
  CHECK(p.batch_norm.size() == 3);
  for (const auto& [name, t] : p.tensors) {
    const int spaces = int(name.starts_with("encoder.")) + int(name.starts_with("decoder.")) +
                       int(name.starts_with("critic."));
    CHECK_MESSAGE(spaces == 1, name);
    CHECK(t.requires_grad());
  }
  CHECK_THROWS_AS(p.at("encoder.conv9.kernel"), LookupError);
}

TEST_CASE("encode and decode shapes") {
  Rng rng(1);
  auto p = init_params(two_tasks(), 3);
  auto z = encode(p, random_images(16, rng), ad::BatchNormMode::Train);
  CHECK(z.shape() == Shape{16, 64, 8, 8});
  auto out = decode(p, p.task("weather"), z);
  CHECK(out.logits.shape() == Shape{16, 3});
  CHECK(out.summary.shape() == Shape{16, 32});

  auto four = init_params({{"place", 4, "place"}}, 3);
  CHECK(decode(four, four.task("place"), encode(four, random_images(5, rng))).logits.shape() == Shape{5, 4});

  for (std::size_t n : {1u, 2u, 7u}) {
    CHECK(encode(p, random_images(n, rng)).shape() == Shape{n, 64, 8, 8});
  }
  CHECK_THROWS_AS(encode(p, random_images(2, rng, 16)), DimensionError);
  CHECK_THROWS_AS(p.task("missing"), LookupError);
  CHECK_THROWS_AS(decode(p, TaskSpec{"missing", 3, "x"}, z), LookupError);
}

TEST_CASE("zero inputs propagate to zeros") {
  auto p = init_params(two_tasks(), 9);
  auto z = encode(p, Tensor::zeros({2, 3, 32, 32}), ad::BatchNormMode::Train);
  for (double v : z.values()) CHECK(v == 0.0);
  auto logits = decode(p, p.task("surface"), Tensor::zeros({2, 64, 8, 8})).logits;
  for (double v : logits.values()) CHECK(v == 0.0);
}

TEST_CASE("identical images give identical latent rows") {
  Rng rng(4);
  auto p = init_params(two_tasks(), 5);
  auto one = random_images(1, rng);
  auto other = random_images(1, rng);
  std::vector<double> vals(one.values().begin(), one.values().end());
  vals.insert(vals.end(), other.values().begin(), other.values().end());
  vals.insert(vals.end(), one.values().begin(), one.values().end());
  auto z = encode(p, Tensor({3, 3, 32, 32}, vals), ad::BatchNormMode::Train);
  const std::size_t row = 64 * 8 * 8;
  for (std::size_t i = 0; i < row; ++i) CHECK(z.at(i) == z.at(2 * row + i));
}

TEST_CASE("eval mode is a pure function") {
  Rng rng(6);
  auto p = init_params(two_tasks(), 8);
  auto x = random_images(4, rng);
  encode(p, x, ad::BatchNormMode::Train);  // move running stats off their initial values
  const auto stats = p.batch_norm;
  auto a = encode(static_cast<const NetworkParams&>(p), x);
  auto b = encode(static_cast<const NetworkParams&>(p), x);
  CHECK(p.batch_norm == stats);
  for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(a.at(i) == b.at(i));
}

TEST_CASE("critic scores") {
  Rng rng(10);
  auto p = init_params(two_tasks(), 2);
  const auto& task = p.task("weather");
  auto z = random_tensor({6, 32}, rng);
  auto x = random_tensor({6, 64}, rng);

  SUBCASE("zero weights give zero scores") {
    auto q = p.clone();
    for (auto& [name, t] : q.tensors)
      if (name.starts_with("critic.")) std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
    auto s = critic_score(q, task, z, x);
    CHECK(s.shape() == Shape{6});
    for (double v : s.values()) CHECK(v == 0.0);
  }
  SUBCASE("row permutation permutes scores") {
    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    auto s = critic_score(p, task, z, x);
    auto sp = critic_score(p, task, ad::gather_rows(z, perm), ad::gather_rows(x, perm));
    for (std::size_t i = 0; i < perm.size(); ++i) CHECK(sp.at(i) == doctest::Approx(s.at(perm[i])).epsilon(1e-12));
  }
  SUBCASE("row mismatch") {
    CHECK_THROWS_AS(critic_score(p, task, z, random_tensor({5, 64}, rng)), DimensionError);
  }
}

TEST_CASE("input summary pools grayscale onto 8x8") {
  std::vector<double> v(2 * 3 * 32 * 32);
  // Sample 1: channel c holds constant c, so the gray mean is 1 everywhere.
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 1024; ++i) v[(3 + c) * 1024 + i] = double(c);
  // Sample 0: a single bright pixel at (5, 9) lands in cell (1, 2).
  v[5 * 32 + 9] = 48.0;
  auto s = input_summary(Tensor({2, 3, 32, 32}, v));
  CHECK(s.shape() == Shape{2, 64});
  CHECK(s.at(1 * 8 + 2) == doctest::Approx(48.0 / 3.0 / 16.0));
  CHECK(s.at(0) == 0.0);
  for (std::size_t i = 0; i < 64; ++i) CHECK(s.at(64 + i) == doctest::Approx(1.0));
}

TEST_CASE("init is deterministic and scaled") {
  auto a = init_params(two_tasks(), 42);
  auto b = init_params(two_tasks(), 42);
  auto c = init_params(two_tasks(), 43);
  CHECK(identical(a, b));
  CHECK_FALSE(identical(a, c));

  const auto& k = a.at("encoder.conv1.kernel");
  double mean = 0.0, sq = 0.0;
  for (double v : k.values()) mean += v;
  mean /= double(k.numel());
  for (double v : k.values()) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / double(k.numel() - 1));
  const double expected = 1.0 / std::sqrt(27.0) / std::sqrt(3.0);
  CHECK(std::abs(sd - expected) / expected < 0.2);
  for (double v : k.values()) CHECK(std::abs(v) <= 1.0 / std::sqrt(27.0));

  for (const auto& [name, t] : a.tensors) {
    if (name.ends_with(".bias") || name.ends_with(".beta")) {
      for (double v : t.values()) CHECK(v == 0.0);
    }
    if (name.ends_with(".gamma")) {
      for (double v : t.values()) CHECK(v == 1.0);
    }
  }
}

TEST_CASE("decoder gradient check through both layers") {
  Rng rng(21);
  auto p = init_params(two_tasks(), 12);
  randomize_biases(p, rng);
  auto latent = random_tensor({3, 64, 8, 8}, rng);
  const std::vector<std::size_t> labels{0, 2, 1};
  ParamLoss loss = [&](NetworkParams& q) {
    return optim::cross_entropy(decode(q, q.task("weather"), latent).logits, labels);
  };
  for (const char* name : {"decoder.weather.conv1.kernel", "decoder.weather.conv1.bias",
                           "decoder.weather.conv2.kernel", "decoder.weather.conv2.bias"}) {
    CHECK_MESSAGE(check_param(p, name, loss, 60) < 1e-4, name);
  }
  ad::ScalarFunction wrt_latent = [&](const Tensor& z) {
    return optim::cross_entropy(decode(p, p.task("weather"), z).logits, labels);
  };
  ad::GradCheckOptions opt;
  opt.max_coordinates = 60;
  CHECK(ad::gradient_check(wrt_latent, latent, opt) < 1e-4);
}

TEST_CASE("critic gradient check") {
  Rng rng(22);
  auto p = init_params(two_tasks(), 13);
  randomize_biases(p, rng);
  auto z = random_tensor({4, 32}, rng);
  auto x = random_tensor({4, 64}, rng);
  const auto w = miml::testing::random_values(4, rng);
  ParamLoss loss = [&](NetworkParams& q) {
    return miml::testing::weighted_sum(critic_score(q, q.task("surface"), z, x), w);
  };
  for (const char* name : {"critic.surface.layer1.weight", "critic.surface.layer1.bias",
                           "critic.surface.layer2.weight", "critic.surface.layer2.bias"}) {
    CHECK_MESSAGE(check_param(p, name, loss, 80) < 1e-4, name);
  }
}

TEST_CASE("end-to-end cross-entropy gradient on a 2-sample batch") {
  Rng rng(23);
  auto p = init_params(two_tasks(), 14);
  randomize_biases(p, rng);
  auto images = random_images(2, rng);
  const std::vector<std::size_t> weather{1, 2}, surface{0, 1};
  ParamLoss loss = [&](NetworkParams& q) {
    auto z = encode(q, images, ad::BatchNormMode::Train);
    std::vector<Tensor> terms{optim::cross_entropy(decode(q, q.task("weather"), z).logits, weather),
                              optim::cross_entropy(decode(q, q.task("surface"), z).logits, surface)};
    return optim::multi_task_loss(terms);
  };
  // Shifting an early bias moves thousands of leaky-ReLU inputs at once, so
  // a few probes straddle a kink; those are counted, not compared.
  std::size_t compared = 0, nonsmooth = 0;
  for (const auto& [name, t] : p.tensors) {
    if (name.starts_with("critic.")) continue;
    const auto r = check_param_report(p, name, loss, 20, true);
    CHECK_MESSAGE(r.max_error < 1e-4, name);
    compared += r.compared;
    nonsmooth += r.nonsmooth;
  }
  MESSAGE("compared ", compared, ", non-smooth ", nonsmooth);
  CHECK(nonsmooth * 20 <= compared + nonsmooth);
}

TEST_CASE("per-task decoders are independent") {
  Rng rng(24);
  auto p = init_params(two_tasks(), 15);
  auto images = random_images(4, rng);
  const std::vector<std::size_t> weather{0, 1, 2, 1}, surface{1, 0, 0, 1};

  auto grads = [&](bool include_weather) {
    auto q = p.clone();
    auto z = encode(q, images, ad::BatchNormMode::Train);
    Tensor loss = optim::cross_entropy(decode(q, q.task("surface"), z).logits, surface);
    if (include_weather) loss = ad::add(loss, optim::cross_entropy(decode(q, q.task("weather"), z).logits, weather));
    ad::backward(loss);
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, t] : q.tensors)
      out[name] = t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                               : std::vector<double>(t.numel(), 0.0);
    return out;
  };
  auto both = grads(true);
  auto surface_only = grads(false);
  for (const auto& [name, g] : both) {
    if (!name.starts_with("decoder.surface.")) continue;
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(surface_only[name][i]).epsilon(1e-12));
  }
  for (double v : surface_only["decoder.weather.conv1.kernel"]) CHECK(v == 0.0);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(30);
  auto p = init_params(two_tasks(), 16, 32, 0.05);
  encode(p, random_images(3, rng), ad::BatchNormMode::Train);
  TrainingState ts;
  ts.epochs_completed = 4;
  ts.optimizer_step = 625;
  for (const auto& [name, t] : p.tensors) {
    ts.first_moment[name] = miml::testing::random_values(t.numel(), rng);
    ts.second_moment[name] = miml::testing::random_values(t.numel(), rng, 0.0, 1.0);
  }
  const auto bytes = encode_checkpoint({p, ts});

  auto back = decode_checkpoint(bytes);
  CHECK(identical(back.params, p));
  CHECK(back.params.leaky_alpha == 0.05);
  CHECK(back.params.tasks == p.tasks);
  REQUIRE(back.training.has_value());
  CHECK(*back.training == ts);

  auto bare = decode_checkpoint(encode_checkpoint({p, std::nullopt}));
  CHECK_FALSE(bare.training.has_value());

  const auto dir = std::filesystem::temp_directory_path() / "miml_test_model";
  std::filesystem::create_directories(dir);
  save_checkpoint(dir / "a.ckpt", {p, ts});
  CHECK(identical(load_checkpoint(dir / "a.ckpt").params, p));
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), FileNotFoundError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoint corruption is detected") {
  auto p = init_params(two_tasks(), 17);
  const auto good = encode_checkpoint({p, std::nullopt});

  auto bad_magic = good;
  bad_magic[0] = 'X';
  try {
    decode_checkpoint(bad_magic);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.field() == "magic");
  }

  auto bad_version = good;
  bad_version[4] = 99;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), FormatError);

  for (std::size_t cut : {std::size_t{3}, std::size_t{40}, good.size() / 2, good.size() - 1}) {
    std::vector<std::uint8_t> truncated(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
  }

  auto trailing = good;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);
}
