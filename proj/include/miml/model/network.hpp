// SPDX-License-Identifier: Apache-2.0
//
// Shared encoder, per-task decoder heads and per-task mutual-information
// critics, written as pure functions of a NetworkParams value.
//
//   images [N,3,S,S]
//     encode:  3x(conv3x3 -> leaky_relu -> batch_norm), widths 16/32/64,
//              strides 1/2/2                                 -> latent [N,64,S/4,S/4]
//     decode:  conv3x3(64->32) -> leaky_relu                 -> GAP = summary z_t [N,32]
//              conv1x1(32->K) -> GAP                         -> logits [N,K]
//     critic:  concat(z_t, x8x8 gray) [N,96] -> affine 128 -> leaky_relu -> affine 1

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "miml/autodiff/ops.hpp"
#include "miml/autodiff/tensor.hpp"

namespace miml::model {

namespace arch {
inline constexpr std::size_t kInputChannels = 3;
inline constexpr std::size_t kEncoderWidths[3] = {16, 32, 64};
inline constexpr std::size_t kEncoderStrides[3] = {1, 2, 2};
inline constexpr std::size_t kLatentChannels = 64;
inline constexpr std::size_t kSummaryWidth = 32;
inline constexpr std::size_t kInputSummaryGrid = 8;
inline constexpr std::size_t kInputSummaryWidth = kInputSummaryGrid * kInputSummaryGrid;
inline constexpr std::size_t kCriticHidden = 128;
inline constexpr std::size_t kDefaultImageSize = 32;
inline constexpr double kDefaultLeakyAlpha = 0.01;
}  // namespace arch

struct TaskSpec {
  std::string task_id;
  std::size_t class_count = 0;
  std::string category;

  bool operator==(const TaskSpec&) const = default;
};

/// Throws ContractError unless the set is non-empty, ids are unique and every
/// class_count is at least 2.
void validate_task_set(const std::vector<TaskSpec>& tasks);

/// All learnable tensors by dotted path, plus batch-norm running statistics.
/// Paths live in exactly one of the encoder., decoder.<task>., critic.<task>.
/// namespaces.
struct NetworkParams {
  std::vector<TaskSpec> tasks;
  std::size_t image_size = arch::kDefaultImageSize;
  double leaky_alpha = arch::kDefaultLeakyAlpha;
  std::map<std::string, ad::Tensor> tensors;
  std::map<std::string, ad::BatchNormState> batch_norm;

  const ad::Tensor& at(const std::string& name) const;
  const TaskSpec& task(const std::string& task_id) const;

  /// Deep copy: new leaf tensors, same values.
  NetworkParams clone() const;
  void zero_grad();
  std::size_t scalar_count() const;
};

/// Bitwise equality of structure, values and running statistics.
bool identical(const NetworkParams& a, const NetworkParams& b);

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) kernels and weights, zero biases,
/// unit gamma, zero beta. Each tensor draws from its own stream derived from
/// (seed, name), so the result depends only on the seed and the task set.
NetworkParams init_params(const std::vector<TaskSpec>& tasks, std::uint64_t seed,
                          std::size_t image_size = arch::kDefaultImageSize,
                          double leaky_alpha = arch::kDefaultLeakyAlpha);

/// Shared latent [N,64,S/4,S/4]. Train mode updates the running statistics.
ad::Tensor encode(NetworkParams& params, const ad::Tensor& images, ad::BatchNormMode mode);
/// Eval-mode encode on read-only parameters.
ad::Tensor encode(const NetworkParams& params, const ad::Tensor& images);

struct DecoderOutput {
  ad::Tensor logits;   // [N, class_count]
  ad::Tensor summary;  // z_t, [N, 32]
};

DecoderOutput decode(const NetworkParams& params, const TaskSpec& task, const ad::Tensor& latent);

/// One critic score per row pair (z_t[i], x[i]).
ad::Tensor critic_score(const NetworkParams& params, const TaskSpec& task, const ad::Tensor& z_summary,
                        const ad::Tensor& input_summary);

/// Fixed view of the raw image seen by the critics: channel-mean grayscale,
/// mean-pooled onto an 8x8 grid and flattened to [N,64]. Not differentiable.
ad::Tensor input_summary(const ad::Tensor& images);

}  // namespace miml::model
