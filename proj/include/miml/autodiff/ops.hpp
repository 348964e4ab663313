// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "miml/autodiff/tensor.hpp"

namespace miml::ad {

/// 2-D convolution lowered to matrix products (im2col).
/// input [N,C,H,W], kernel [F,C,kH,kW], bias [F] -> [N,F,H',W'] with
/// H' = (H + 2*padding - kH) / stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t stride,
              std::size_t padding);

/// max(v, alpha * v) elementwise; alpha in (0, 1).
Tensor leaky_relu(const Tensor& input, double alpha);

/// log(1 + exp(v)), overflow-safe for large |v|.
Tensor softplus(const Tensor& input);
double softplus(double v);

/// Clamps into [lo, hi]; the gradient is zero outside the interval.
Tensor clamp(const Tensor& input, double lo, double hi);

enum class BatchNormMode { Train, Eval };

inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kBatchNormEpsilon = 1e-5;

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  static BatchNormState fresh(std::size_t channels) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }
  bool operator==(const BatchNormState&) const = default;
};

/// Per-channel batch normalization over [N,C,H,W]. Train mode normalizes with
/// the (biased) batch statistics and folds them into `state` with the given
/// momentum (unbiased variance); eval mode reads `state` only.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, BatchNormMode mode,
                  BatchNormState& state, double momentum = kBatchNormMomentum, double epsilon = kBatchNormEpsilon);

/// [M,K] x [K,N] -> [M,N].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise sum. `b` may also be a 1-D tensor matching the last dimension
/// of `a` (row broadcast, e.g. a bias), or both may hold a single element.
Tensor add(const Tensor& a, const Tensor& b);

Tensor multiply_scalar(const Tensor& a, double s);

/// a - b, built from add and multiply_scalar.
Tensor subtract(const Tensor& a, const Tensor& b);

/// Concatenates 2-D tensors with equal row counts along the column axis.
Tensor concat(std::span<const Tensor> parts);

Tensor reshape(const Tensor& input, Shape shape);

/// [N, d1, d2, ...] -> [N, d1*d2*...].
Tensor flatten(const Tensor& input);

/// [N,C,H,W] -> [N,C], mean over the spatial positions.
Tensor global_average_pool(const Tensor& input);

/// Mean of all entries, as a scalar.
Tensor mean(const Tensor& input);

/// Row-wise log-softmax of [N,K].
Tensor log_softmax(const Tensor& logits);

/// out[i] = logits[i, index[i]] for [N,K] logits.
Tensor gather_logit(const Tensor& logits, std::span<const std::size_t> index);

/// out[r, :] = input[rows[r], :] for a 2-D input.
Tensor gather_rows(const Tensor& input, std::span<const std::size_t> rows);

/// Generic elementwise map with a caller-provided derivative. Used for
/// experimental operations and for fault-injection tests of the checker.
Tensor map_elementwise(const Tensor& input, std::function<double(double)> f, std::function<double(double)> df,
                       const char* op_name);

}  // namespace miml::ad
