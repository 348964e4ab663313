// SPDX-License-Identifier: Apache-2.0
#include "miml/mi/estimators.hpp"

#include <numeric>

#include "miml/autodiff/ops.hpp"
#include "miml/core/errors.hpp"

namespace miml::mi {

std::vector<std::size_t> derangement_shuffle(std::size_t n, Rng& rng) {
  if (n < 2) throw ContractError("derangement_shuffle: need n >= 2, got " + std::to_string(n));
  std::vector<std::size_t> perm(n);
  for (;;) {
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
    bool fixed_point = false;
    for (std::size_t i = 0; i < n && !fixed_point; ++i) fixed_point = perm[i] == i;
    if (!fixed_point) return perm;
  }
}

ad::Tensor jsd_lower_bound(const PairScores& scores) {
  const auto& pos = scores.positive;
  const auto& neg = scores.negative;
  if (pos.rank() != 1 || pos.shape() != neg.shape()) {
    throw DimensionError("jsd_lower_bound: positive " + ad::shape_string(pos.shape()) + " and negative " +
                         ad::shape_string(neg.shape()) + " must be equal-length vectors");
  }
  auto p = ad::clamp(pos, -kScoreClamp, kScoreClamp);
  auto n = ad::clamp(neg, -kScoreClamp, kScoreClamp);
  auto matched = ad::multiply_scalar(ad::mean(ad::softplus(ad::multiply_scalar(p, -1.0))), -1.0);
  auto mismatched = ad::mean(ad::softplus(n));
  return ad::subtract(matched, mismatched);
}

ad::Tensor nce_lower_bound(const ad::Tensor& score_matrix) {
  if (score_matrix.rank() != 2 || score_matrix.dim(0) != score_matrix.dim(1)) {
    throw DimensionError("nce_lower_bound: expected a square score matrix, got " +
                         ad::shape_string(score_matrix.shape()));
  }
  std::vector<std::size_t> diag(score_matrix.dim(0));
  std::iota(diag.begin(), diag.end(), 0);
  auto logp = ad::log_softmax(ad::clamp(score_matrix, -kScoreClamp, kScoreClamp));
  return ad::mean(ad::gather_logit(logp, diag));
}

PairScores score_pairs(const Critic& critic, const ad::Tensor& z, const ad::Tensor& x,
                       std::span<const std::size_t> negatives) {
  if (z.rank() != 2 || x.rank() != 2 || z.dim(0) != x.dim(0) || negatives.size() != z.dim(0)) {
    throw DimensionError("score_pairs: z " + ad::shape_string(z.shape()) + ", x " + ad::shape_string(x.shape()) +
                         " and " + std::to_string(negatives.size()) + " negatives do not line up");
  }
  return {critic(z, x), critic(z, ad::gather_rows(x, negatives))};
}

ad::Tensor score_matrix(const Critic& critic, const ad::Tensor& z, const ad::Tensor& x) {
  if (z.rank() != 2 || x.rank() != 2 || z.dim(0) != x.dim(0)) {
    throw DimensionError("score_matrix: row-count mismatch between " + ad::shape_string(z.shape()) + " and " +
                         ad::shape_string(x.shape()));
  }
  const std::size_t n = z.dim(0);
  std::vector<std::size_t> zi(n * n), xj(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      zi[i * n + j] = i;
      xj[i * n + j] = j;
    }
  return ad::reshape(critic(ad::gather_rows(z, zi), ad::gather_rows(x, xj)), {n, n});
}

}  // namespace miml::mi
