// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "miml/autodiff/gradcheck.hpp"
#include "miml/autodiff/ops.hpp"
#include "miml/core/errors.hpp"
#include "support/oracles.hpp"

using namespace miml;
using namespace miml::ad;
using miml::testing::random_tensor;
using miml::testing::random_values;
using miml::testing::weighted_sum;

TEST_CASE("tensor rejects inconsistent shape") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 3}, {}), DimensionError);
  CHECK(Tensor::scalar(2.0).item() == 2.0);
}

TEST_CASE("conv2d forward") {
  SUBCASE("all ones 3x3") {
    auto y = conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0), Tensor::zeros({1}), 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 9.0);
  }
  SUBCASE("stride arithmetic") {
    auto y = conv2d(Tensor::zeros({1, 3, 32, 32}), Tensor::zeros({16, 3, 3, 3}), Tensor::zeros({16}), 2, 1);
    CHECK(y.shape() == Shape{1, 16, 16, 16});
  }
  SUBCASE("matches direct convolution") {
    Rng rng(11);
    for (auto [stride, pad] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 1}, {2, 0}, {3, 2}}) {
      auto x = random_tensor({2, 3, 7, 6}, rng);
      auto k = random_tensor({4, 3, 3, 2}, rng);
      auto b = random_tensor({4}, rng);
      auto y = conv2d(x, k, b, stride, pad);
      auto ref = miml::testing::direct_conv2d({x.values().begin(), x.values().end()}, 2, 3, 7, 6,
                                              {k.values().begin(), k.values().end()}, 4, 3, 2,
                                              {b.values().begin(), b.values().end()}, stride, pad);
      REQUIRE(y.numel() == ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.at(i) == doctest::Approx(ref[i]).epsilon(1e-12));
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 5, 5}), Tensor::zeros({1, 3, 3, 3}), Tensor::zeros({1}), 1, 0),
                    DimensionError);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 5, 5}), Tensor::zeros({1}), 1, 1),
                    DimensionError);
  }
}

TEST_CASE("conv2d kernel gradient matches independent finite differences") {
  Rng rng(5);
  auto x = random_tensor({1, 2, 5, 5}, rng);
  auto k0 = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  auto k = k0.detach(true);
  backward(mean(conv2d(x, k, b, 1, 1)));
  std::vector<double> analytic(k.grad().begin(), k.grad().end());
  // sum(output) = mean * numel; compare the sum as the example states
  const double scale = 3.0 * 25.0;
  for (auto& g : analytic) g *= scale;
  auto numeric = miml::testing::numeric_gradient(
      [&](const std::vector<double>& kv) {
        auto y = miml::testing::direct_conv2d({x.values().begin(), x.values().end()}, 1, 2, 5, 5, kv, 3, 3, 3,
                                              {b.values().begin(), b.values().end()}, 1, 1);
        double s = 0.0;
        for (double v : y) s += v;
        return s;
      },
      {k0.values().begin(), k0.values().end()});
  CHECK(miml::testing::max_relative_error(analytic, numeric) < 1e-5);
}

TEST_CASE("leaky_relu") {
  auto x = Tensor({3}, {-1.0, 2.5, 0.5}, true);
  auto y = leaky_relu(x, 0.01);
  CHECK(y.at(0) == doctest::Approx(-0.01).epsilon(1e-15));
  CHECK(y.at(1) == 2.5);
  backward(weighted_sum(y, {1.0, 1.0, 1.0}));
  CHECK(x.grad()[0] == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(x.grad()[1] == 1.0);
  CHECK_THROWS_AS(leaky_relu(x, 1.5), ContractError);
}

TEST_CASE("softplus values and bounds") {
  CHECK(softplus(0.0) == doctest::Approx(std::numbers::ln2).epsilon(1e-15));
  CHECK(std::abs(softplus(100.0) - 100.0) < 1e-12);
  CHECK(softplus(-std::log(3.0)) == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-14));
  CHECK(std::abs(softplus(-std::log(3.0)) - 0.287682) < 1e-6);
  for (double v = -50.0; v <= 50.0; v += 0.01) {
    const double gap = softplus(v) - std::max(0.0, v);
    CHECK(gap >= 0.0);
    CHECK(gap <= std::numbers::ln2 + 1e-15);
  }
  auto t = softplus(Tensor({2}, {0.0, 800.0}));
  CHECK(std::isfinite(t.at(1)));
  CHECK(t.at(1) == 800.0);
}

TEST_CASE("batch_norm") {
  SUBCASE("constant channel normalizes to zero") {
    BatchNormState st = BatchNormState::fresh(2);
    std::vector<double> v(2 * 2 * 3 * 3);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = ((i / 9) % 2 == 0) ? 4.0 : -7.0;
    auto y = batch_norm(Tensor({2, 2, 3, 3}, v), Tensor::full({2}, 1.0), Tensor::zeros({2}), BatchNormMode::Train, st);
    for (double o : y.values()) CHECK(o == 0.0);
  }
  SUBCASE("beta shifts the channel mean") {
    Rng rng(3);
    BatchNormState st = BatchNormState::fresh(3);
    auto y = batch_norm(random_tensor({4, 3, 2, 2}, rng, -3, 9), Tensor::full({3}, 1.0), Tensor::full({3}, 5.0),
                        BatchNormMode::Train, st);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      double s = 0.0;
      for (std::size_t n = 0; n < 4; ++n)
        for (std::size_t q = 0; q < 4; ++q) s += y.at((n * 3 + ch) * 4 + q);
      CHECK(s / 16.0 == doctest::Approx(5.0).epsilon(1e-12));
    }
  }
  SUBCASE("running statistics and eval mode") {
    BatchNormState st = BatchNormState::fresh(1);
    auto x = Tensor({2, 1, 1, 2}, {1.0, 2.0, 3.0, 4.0});
    batch_norm(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), BatchNormMode::Train, st);
    CHECK(st.running_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 2.5));
    CHECK(st.running_var[0] == doctest::Approx(0.9 * 1.0 + 0.1 * (5.0 / 3.0)));
    const auto before = st;
    auto y = batch_norm(x, Tensor::full({1}, 2.0), Tensor::full({1}, 1.0), BatchNormMode::Eval, st);
    CHECK(st == before);
    CHECK(y.at(0) == doctest::Approx(2.0 * (1.0 - st.running_mean[0]) / std::sqrt(st.running_var[0] + 1e-5) + 1.0));
  }
  SUBCASE("degenerate batch") {
    BatchNormState st = BatchNormState::fresh(1);
    CHECK_THROWS_AS(batch_norm(Tensor::zeros({1, 1, 1, 1}), Tensor::full({1}, 1.0), Tensor::zeros({1}),
                               BatchNormMode::Train, st),
                    DegenerateStatisticsError);
    CHECK_NOTHROW(batch_norm(Tensor::zeros({1, 1, 1, 1}), Tensor::full({1}, 1.0), Tensor::zeros({1}),
                             BatchNormMode::Eval, st));
  }
  SUBCASE("gradient check on 2x3x4x4") {
    Rng rng(17);
    auto x = random_tensor({2, 3, 4, 4}, rng, -2, 2);
    auto gamma = random_tensor({3}, rng, 0.5, 1.5);
    auto beta = random_tensor({3}, rng);
    auto w = random_values(x.numel(), rng);
    BatchNormState st = BatchNormState::fresh(3);
    CHECK(gradient_check([&](const Tensor& p) { return weighted_sum(batch_norm(p, gamma, beta, BatchNormMode::Train, st), w); }, x) < 1e-4);
    CHECK(gradient_check([&](const Tensor& p) { return weighted_sum(batch_norm(x, p, beta, BatchNormMode::Train, st), w); }, gamma) < 1e-4);
    CHECK(gradient_check([&](const Tensor& p) { return weighted_sum(batch_norm(x, gamma, p, BatchNormMode::Train, st), w); }, beta) < 1e-4);
    CHECK(gradient_check([&](const Tensor& p) { return weighted_sum(batch_norm(p, gamma, beta, BatchNormMode::Eval, st), w); }, x) < 1e-4);
  }
}

TEST_CASE("primitive suite forward values") {
  SUBCASE("global average pool") {
    std::vector<double> v(64 * 64);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    auto y = global_average_pool(Tensor({1, 64, 8, 8}, v));
    CHECK(y.shape() == Shape{1, 64});
    for (std::size_t c = 0; c < 64; ++c) CHECK(y.at(c) == doctest::Approx(c * 64.0 + 31.5));
  }
  SUBCASE("log_softmax of zeros") {
    auto y = log_softmax(Tensor::zeros({2, 7}));
    for (double v : y.values()) CHECK(v == doctest::Approx(-std::log(7.0)).epsilon(1e-15));
  }
  SUBCASE("log_softmax is stable for large logits") {
    auto y = log_softmax(Tensor({1, 2}, {1000.0, 0.0}));
    CHECK(y.at(0) == doctest::Approx(0.0));
    CHECK(y.at(1) == doctest::Approx(-1000.0));
  }
  SUBCASE("concat / flatten / gather") {
    auto a = Tensor({2, 1}, {1, 2});
    auto b = Tensor({2, 2}, {3, 4, 5, 6});
    std::vector<Tensor> parts{a, b};
    auto c = concat(parts);
    CHECK(std::vector<double>(c.values().begin(), c.values().end()) == std::vector<double>{1, 3, 4, 2, 5, 6});
    CHECK(flatten(Tensor::zeros({2, 3, 4, 5})).shape() == Shape{2, 60});
    std::vector<std::size_t> idx{2, 0};
    auto g = gather_logit(c, idx);
    CHECK(g.at(0) == 4);
    CHECK(g.at(1) == 2);
    std::vector<std::size_t> rows{1, 1, 0};
    auto r = gather_rows(b, rows);
    CHECK(r.shape() == Shape{3, 2});
    CHECK(r.at(0) == 5);
    CHECK(r.at(5) == 4);
  }
  SUBCASE("broadcast add") {
    auto y = add(Tensor({2, 2}, {1, 2, 3, 4}), Tensor({2}, {10, 20}));
    CHECK(y.at(3) == 24);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
    CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
    std::vector<std::size_t> bad{3};
    CHECK_THROWS_AS(gather_logit(Tensor::zeros({1, 3}), bad), ContractError);
    std::vector<Tensor> parts{Tensor::zeros({2, 1}), Tensor::zeros({3, 1})};
    CHECK_THROWS_AS(concat(parts), DimensionError);
  }
}

TEST_CASE("matmul gradient check 3x4 by 4x2") {
  Rng rng(2);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto w = random_values(6, rng);
  CHECK(gradient_check([&](const Tensor& p) { return weighted_sum(matmul(p, b), w); }, a) < 1e-6);
  CHECK(gradient_check([&](const Tensor& p) { return weighted_sum(matmul(a, p), w); }, b) < 1e-6);
}

TEST_CASE("gradient_check contract") {
  auto sum_sq = [](const Tensor& p) {
    auto row = reshape(p, {1, p.numel()});
    auto col = reshape(p, {p.numel(), 1});
    return reshape(matmul(row, col), {});
  };
  auto point = Tensor({3}, {1.0, 2.0, 3.0});
  CHECK(gradient_check(sum_sq, point, 1e-5) < 1e-8);
  auto x = point.detach(true);
  backward(sum_sq(x));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});

  Rng rng(8);
  auto r = random_tensor({20}, rng, -4, 4);
  CHECK(gradient_check([](const Tensor& p) { return multiply_scalar(mean(softplus(p)), 20.0); }, r) < 1e-6);

  CHECK_THROWS_AS(gradient_check([](const Tensor& p) { return softplus(p); }, r), ContractError);
  CHECK_THROWS_AS(gradient_check(sum_sq, point, 1e-2), ContractError);
  CHECK_THROWS_AS(gradient_check(sum_sq, point, 1e-9), ContractError);
  CHECK_THROWS_AS(backward(softplus(r.detach(true))), ContractError);
}

TEST_CASE("gradient_check flags a wrong backward rule") {
  Rng rng(4);
  auto r = random_tensor({6}, rng);
  auto wrong = [](const Tensor& p) {
    return mean(map_elementwise(p, [](double v) { return v * v; }, [](double v) { return v; }, "bad_square"));
  };
  auto right = [](const Tensor& p) {
    return mean(map_elementwise(p, [](double v) { return v * v; }, [](double v) { return 2 * v; }, "square"));
  };
  CHECK(gradient_check(right, r) < 1e-8);
  CHECK(gradient_check(wrong, r) > 1e-3);

  // The non-smooth filter must not hide a wrong rule on a smooth function.
  GradCheckOptions opt;
  opt.skip_nonsmooth = true;
  auto report = gradient_check_report(wrong, r, opt);
  CHECK(report.nonsmooth == 0);
  CHECK(report.compared == 6);
  CHECK(report.max_error > 1e-3);
}

TEST_CASE("gradient_check sets aside probes that straddle a kink") {
  // Coordinate 0 sits 3e-6 from the leaky-ReLU kink, inside [x-h, x+h].
  Tensor x({3}, {3e-6, 0.4, -0.7});
  auto f = [](const Tensor& p) { return mean(leaky_relu(p, 0.01)); };
  GradCheckOptions opt;
  opt.skip_nonsmooth = true;
  auto report = gradient_check_report(f, x, opt);
  CHECK(report.nonsmooth == 1);
  CHECK(report.compared == 2);
  CHECK(report.max_error < 1e-8);
  CHECK(gradient_check(f, x) > 1e-3);
}

// Every primitive, 100 random points each.
TEST_CASE("property: primitives agree with finite differences at random points") {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::uint64_t s = 1000 + trial;
    Rng r(s);
    auto x4 = random_tensor({2, 2, 4, 4}, r);
    auto k = random_tensor({3, 2, 3, 3}, r);
    auto b = random_tensor({3}, r);
    auto w_conv = random_values(2 * 3 * 2 * 2, r);
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(conv2d(p, k, b, 2, 1), w_conv); }, x4));
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(conv2d(x4, p, b, 2, 1), w_conv); }, k));
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(conv2d(x4, k, p, 2, 1), w_conv); }, b));

    auto v = random_tensor({12}, r, -3, 3);
    auto w12 = random_values(12, r);
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(leaky_relu(p, 0.01), w12); }, v));
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(softplus(p), w12); }, v));
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(clamp(p, -1.0, 1.0), w12); }, v));
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(multiply_scalar(p, -2.5), w12); }, v));
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return mean(p); }, v));

    auto a = random_tensor({3, 4}, r);
    auto c = random_tensor({4, 2}, r);
    auto w6 = random_values(6, r);
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(matmul(p, c), w6); }, a));
    auto bias4 = random_tensor({4}, r);
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(add(a, p), w12); }, bias4));
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(add(p, a), w12); }, a));

    auto a2 = random_tensor({3, 2}, r);
    auto w18 = random_values(18, r);
    worst = std::max(worst, gradient_check([&](const Tensor& p) { std::vector<Tensor> parts{a, p}; return weighted_sum(concat(parts), w18); }, a2));
    auto w_flat = random_values(x4.numel(), r);
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(flatten(p), w_flat); }, x4));
    auto w4 = random_values(4, r);
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(global_average_pool(p), w4); }, x4));
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(log_softmax(p), w12); }, a));
    std::vector<std::size_t> labels{3, 0, 2};
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(gather_logit(p, labels), {0.3, -1.2, 0.7}); }, a));
    std::vector<std::size_t> rows{2, 0, 2, 1};
    auto w16 = random_values(16, r);
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(gather_rows(p, rows), w16); }, a));

    auto x_bn = random_tensor({2, 3, 2, 2}, r, -2, 2);
    auto gamma = random_tensor({3}, r, 0.5, 1.5);
    auto beta = random_tensor({3}, r);
    auto w_bn = random_values(24, r);
    BatchNormState st = BatchNormState::fresh(3);
    worst = std::max(worst, gradient_check([&](const Tensor& p) { return weighted_sum(batch_norm(p, gamma, beta, BatchNormMode::Train, st), w_bn); }, x_bn));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("forward evaluation is deterministic") {
  Rng rng(1);
  auto x = random_tensor({2, 3, 8, 8}, rng);
  auto k = random_tensor({4, 3, 3, 3}, rng);
  auto b = random_tensor({4}, rng);
  auto y1 = log_softmax(flatten(global_average_pool(leaky_relu(conv2d(x, k, b, 1, 1), 0.01))));
  auto y2 = log_softmax(flatten(global_average_pool(leaky_relu(conv2d(x, k, b, 1, 1), 0.01))));
  for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(std::bit_cast<std::uint64_t>(y1.at(i)) == std::bit_cast<std::uint64_t>(y2.at(i)));
}

TEST_CASE("tape: topological, each op visited once, gradients are linear") {
  Rng rng(9);
  auto x = random_tensor({4, 5}, rng).detach(true);
  auto w = random_tensor({5, 3}, rng).detach(true);
  auto h = leaky_relu(matmul(x, w), 0.1);
  auto f = mean(softplus(h));
  auto g = mean(log_softmax(h));
  auto total = add(f, g);

  auto tape = Tape::record(total);
  CHECK(tape.is_topological());
  const std::size_t ops = tape.op_count();
  CHECK(ops == 7);  // matmul, leaky_relu, softplus, mean, log_softmax, mean, add
  const double one = 1.0;
  CHECK(tape.run_backward(std::span(&one, 1)) == ops);

  std::vector<double> g_total(w.grad().begin(), w.grad().end());
  w.zero_grad();
  backward(f);
  std::vector<double> g_f(w.grad().begin(), w.grad().end());
  w.zero_grad();
  backward(g);
  std::vector<double> g_g(w.grad().begin(), w.grad().end());
  for (std::size_t i = 0; i < g_total.size(); ++i) CHECK(std::abs(g_total[i] - (g_f[i] + g_g[i])) <= 1e-12);
}

TEST_CASE("backward twice on one graph does not double count intermediates") {
  auto x = Tensor({2}, {0.3, -0.4}, true);
  auto y = mean(softplus(multiply_scalar(x, 3.0)));
  backward(y);
  std::vector<double> first(x.grad().begin(), x.grad().end());
  x.zero_grad();
  backward(y);
  for (std::size_t i = 0; i < 2; ++i) CHECK(x.grad()[i] == first[i]);
}
