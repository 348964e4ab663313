// SPDX-License-Identifier: Apache-2.0
//
// Mutual-information lower bounds between a representation z and the input x,
// estimated from critic scores on matched pairs (z_i, x_i) and mismatched
// pairs built by shuffling x inside the batch.
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "miml/autodiff/tensor.hpp"
#include "miml/core/random.hpp"

namespace miml::mi {

/// Scores are clamped to [-30, 30] before softplus / log-sum-exp.
inline constexpr double kScoreClamp = 30.0;

struct PairScores {
  ad::Tensor positive;  // [N] critic(z_i, x_i)
  ad::Tensor negative;  // [N] critic(z_i, x_perm(i))
};

/// Uniform permutation of {0..n-1} without fixed points, drawn by rejection
/// (shuffle, retry while any pi(i) == i). Throws ContractError for n < 2.
std::vector<std::size_t> derangement_shuffle(std::size_t n, Rng& rng);

/// mean(-softplus(-positive)) - mean(softplus(negative)). Always <= 0; tends
/// to 0 as positives -> +inf and negatives -> -inf.
ad::Tensor jsd_lower_bound(const PairScores& scores);

/// Noise-contrastive bound from an [N,N] matrix whose (i,j) entry is
/// critic(z_i, x_j): mean_i [ s_ii - log sum_j exp(s_ij) ]. Bounded below by
/// -ln N when every diagonal entry is the maximum of its row.
ad::Tensor nce_lower_bound(const ad::Tensor& score_matrix);

using Critic = std::function<ad::Tensor(const ad::Tensor& z, const ad::Tensor& x)>;

/// Positive scores on (z_i, x_i) and negative scores on (z_i, x_{negatives[i]}).
PairScores score_pairs(const Critic& critic, const ad::Tensor& z, const ad::Tensor& x,
                       std::span<const std::size_t> negatives);

/// All N*N pairings, reshaped to [N,N].
ad::Tensor score_matrix(const Critic& critic, const ad::Tensor& z, const ad::Tensor& x);

}  // namespace miml::mi
