// Temporal pooling strategies compared against the Gaussian experts module.
//
// The Gaussian family is a build-up toward the full module: plain summed
// curves with free centers, routed ("weighted") curves, routed curves with
// disjoint-center anchoring, and finally the expert mixture itself. Identity
// experts collapse the first three to a single weighted frame sum, so they
// pool the fused streams directly; only the full module applies the v_q
// residual and per-expert maps.
#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "qatiger/experts.hpp"

namespace qatiger {

enum class PoolingStrategy {
  kUniform,
  kTopK,
  kGaussian,
  kWeightedGaussian,
  kWeightedGaussianDisjoint,
  kGaussianExperts,
};

inline const char* to_string(PoolingStrategy s) {
  switch (s) {
    case PoolingStrategy::kUniform: return "uniform";
    case PoolingStrategy::kTopK: return "top_k";
    case PoolingStrategy::kGaussian: return "gaussian";
    case PoolingStrategy::kWeightedGaussian: return "weighted_gaussian";
    case PoolingStrategy::kWeightedGaussianDisjoint: return "weighted_gaussian_disjoint";
    case PoolingStrategy::kGaussianExperts: return "gaussian_experts";
  }
  return "?";
}

inline PoolingStrategy parse_pooling_strategy(const std::string& s) {
  if (s == "uniform") return PoolingStrategy::kUniform;
  if (s == "top_k") return PoolingStrategy::kTopK;
  if (s == "gaussian") return PoolingStrategy::kGaussian;
  if (s == "weighted_gaussian") return PoolingStrategy::kWeightedGaussian;
  if (s == "weighted_gaussian_disjoint") return PoolingStrategy::kWeightedGaussianDisjoint;
  if (s == "gaussian_experts") return PoolingStrategy::kGaussianExperts;
  throw ContractError("unknown pooling strategy: " + s);
}

inline bool uses_gaussian_machinery(PoolingStrategy s) {
  return s == PoolingStrategy::kGaussian || s == PoolingStrategy::kWeightedGaussian ||
         s == PoolingStrategy::kWeightedGaussianDisjoint ||
         s == PoolingStrategy::kGaussianExperts;
}

// Mean over frames; the ordered column sums make the result exactly invariant
// to frame permutations.
template <typename Scalar>
Var<Scalar> uniform_pool(Var<Scalar> x) {
  return mean_rows(x);
}

// Mean of the K frames whose cosine similarity to the question vector is
// highest. The selection is a hard, non-differentiable choice; gradients flow
// through the mean of the chosen frames.
template <typename Scalar>
Var<Scalar> top_k_pool(Var<Scalar> x, Var<Scalar> qs, Index k) {
  Graph<Scalar>& g = *x.graph;
  const Tensor<Scalar>& tx = g.value(x);
  const Tensor<Scalar>& tq = g.value(qs);
  const Index t = tx.dim(0);
  if (k < 1 || k > t) {
    throw ContractError("top_k: K=" + std::to_string(k) + " out of range for T=" +
                        std::to_string(t));
  }
  const double qnorm = std::sqrt(static_cast<double>(tq.array().square().sum()));
  std::vector<std::pair<double, Index>> scored(static_cast<std::size_t>(t));
  for (Index r = 0; r < t; ++r) {
    double dot = 0.0, norm = 0.0;
    for (Index c = 0; c < tx.dim(1); ++c) {
      dot += static_cast<double>(tx(r, c)) * static_cast<double>(tq(c));
      norm += static_cast<double>(tx(r, c)) * static_cast<double>(tx(r, c));
    }
    const double denom = std::sqrt(norm) * qnorm;
    scored[static_cast<std::size_t>(r)] = {denom > 0.0 ? dot / denom : 0.0, r};
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  Tensor<Scalar> selection({Index(1), t});
  for (Index i = 0; i < k; ++i) {
    selection(0, scored[static_cast<std::size_t>(i)].second) =
        Scalar(1) / static_cast<Scalar>(k);
  }
  return matmul(g.constant(selection), x);
}

// Free-center variant of the generator: centers are sigmoid(center logit)
// anywhere in (0,1) instead of margin-bounded offsets around the anchors.
template <typename Scalar>
GaussianCurves<Scalar> generate_gaussians_free(const GaussianGeneratorVars<Scalar>& gen,
                                               Var<Scalar> pooled, Index t_count) {
  if (t_count < 1) throw ContractError("generate_gaussians_free: need T ≥ 1");
  Graph<Scalar>& g = *pooled.graph;
  const Index e = gen.experts;

  Var<Scalar> logits = linear(gen.map, pooled);
  Var<Scalar> mu = sigmoid(slice_cols(logits, 0, e));
  Var<Scalar> sigma = clamp_min(sigmoid(slice_cols(logits, e, e)),
                                static_cast<Scalar>(kSigmaFloor));

  Tensor<Scalar> positions({e, t_count});
  for (Index i = 0; i < e; ++i) {
    for (Index t = 0; t < t_count; ++t) {
      positions(i, t) = (static_cast<Scalar>(t) + Scalar(0.5)) / static_cast<Scalar>(t_count);
    }
  }
  Var<Scalar> diff = sub(g.constant(positions), broadcast_col(reshape(mu, {e, Index(1)}), t_count));
  Var<Scalar> two_var = scale(mul(reshape(sigma, {e, Index(1)}), reshape(sigma, {e, Index(1)})),
                              Scalar(2));
  Var<Scalar> exponent = scale(div_by_col(mul(diff, diff), two_var), Scalar(-1));
  Var<Scalar> curves = exp(sub(exponent, broadcast_col(row_max(exponent), t_count)));
  return {mu, sigma, curves};
}

// Collapse curves to one frame-weight row: Σ_i g_i (plain) or Σ_i r_i g_i
// (routed), then pool the sequence with it.
template <typename Scalar>
Var<Scalar> gaussian_sum_pool(Var<Scalar> x, Var<Scalar> curves) {
  Graph<Scalar>& g = *x.graph;
  const Index e = g.value(curves).dim(0);
  Tensor<Scalar> ones({Index(1), e});
  ones.array() = Scalar(1);
  return matmul(matmul(g.constant(ones), curves), x);
}

template <typename Scalar>
Var<Scalar> gaussian_routed_pool(Var<Scalar> x, Var<Scalar> curves, Var<Scalar> routing) {
  return matmul(matmul(routing, curves), x);
}

}  // namespace qatiger
