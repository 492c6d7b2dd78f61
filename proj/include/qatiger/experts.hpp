// Temporal integration through a mixture of Gaussian experts.
//
// A question-pooled vector drives (a) a router over E experts and (b) a
// generator emitting one (center offset, width) pair per expert. Centers live
// in disjoint margin windows around fixed anchors, widths go through a
// sigmoid, and each expert samples a peak-normalized Gaussian curve over the
// T segment midpoints. Streams are integrated as
//
//   Σ_i r_i · Σ_t g[i,t] · E_i(x[t])
//
// with no normalization over t; a `time_normalize` switch (default off)
// divides each expert's sum by Σ_t g[i,t] instead.
#pragma once

#include <vector>

#include "qatiger/attention.hpp"
#include "qatiger/linear.hpp"

namespace qatiger {

inline constexpr double kSigmaFloor = 1e-4;

template <typename Scalar>
struct FixedCenters {
  Scalar margin = Scalar(0);   // 1/(2E)
  Tensor<Scalar> centers;      // E anchors, strictly increasing in (0,1)
};

// Anchors at the midpoints of E equal segments of [0,1]; the margin is half a
// segment, so adjacent offset windows meet only at their open endpoints. A
// single expert sits at 0.5.
template <typename Scalar>
FixedCenters<Scalar> init_fixed_centers(Index experts) {
  if (experts < 1) throw ContractError("expert count must be at least 1");
  FixedCenters<Scalar> fc;
  fc.margin = Scalar(1) / static_cast<Scalar>(2 * experts);
  fc.centers = Tensor<Scalar>::zeros({experts});
  for (Index i = 0; i < experts; ++i) {
    fc.centers(i) = static_cast<Scalar>(2 * i + 1) / static_cast<Scalar>(2 * experts);
  }
  return fc;
}

template <typename Scalar>
struct GaussianGeneratorParams {
  LinearParams<Scalar> map;  // D → 2E; first E outputs are offset logits, last E width logits
  FixedCenters<Scalar> fixed;

  Index experts() const { return fixed.centers.dim(0); }
};

template <typename Scalar>
GaussianGeneratorParams<Scalar> init_gaussian_generator(Index d, Index experts,
                                                        std::uint64_t seed) {
  return {init_linear<Scalar>(d, 2 * experts, seed), init_fixed_centers<Scalar>(experts)};
}

// One affine map per expert; visual and audio pathways own separate banks.
template <typename Scalar>
struct ExpertBank {
  std::vector<LinearParams<Scalar>> experts;  // E maps D→D
};

template <typename Scalar>
ExpertBank<Scalar> init_expert_bank(Index d, Index experts, std::uint64_t seed) {
  ExpertBank<Scalar> bank;
  for (Index i = 0; i < experts; ++i) {
    bank.experts.push_back(init_linear<Scalar>(d, d, derive_seed(seed, "expert", i)));
  }
  return bank;
}

template <typename Scalar>
struct GaussianGeneratorVars {
  LinearVars<Scalar> map;
  Var<Scalar> anchors;  // constant 1×E
  Scalar margin;
  Index experts;
};

template <typename Scalar>
GaussianGeneratorVars<Scalar> bind(Graph<Scalar>& g, const GaussianGeneratorParams<Scalar>& p,
                                   bool requires_grad) {
  Tensor<Scalar> row({Index(1), p.experts()});
  row.array() = p.fixed.centers.array();
  return {bind(g, p.map, requires_grad), g.constant(row), p.fixed.margin, p.experts()};
}

template <typename Scalar>
struct ExpertBankVars {
  std::vector<LinearVars<Scalar>> experts;
};

template <typename Scalar>
ExpertBankVars<Scalar> bind(Graph<Scalar>& g, const ExpertBank<Scalar>& p, bool requires_grad) {
  ExpertBankVars<Scalar> out;
  for (const auto& e : p.experts) out.experts.push_back(bind(g, e, requires_grad));
  return out;
}

// Condensed question-focused pooling: cross-attention with the 1×D sentence
// feature as query over the fused sequence rows.
template <typename Scalar>
Var<Scalar> pool_by_question(AttentionVars<Scalar> attn, Var<Scalar> qs, Var<Scalar> xq) {
  const Tensor<Scalar>& t = qs.graph->value(xq);
  if (t.rank() != 2 || t.dim(0) < 1) throw ContractError("pool_by_question: need T ≥ 1 rows");
  return multi_head_attention(attn, qs, xq, xq);
}

template <typename Scalar>
struct GaussianCurves {
  Var<Scalar> mu;      // 1×E centers
  Var<Scalar> sigma;   // 1×E widths in [kSigmaFloor, 1)
  Var<Scalar> curves;  // E×T, every row peak exactly 1
};

// μ_i = anchor_i + tanh(offset_i)·margin, σ_i = sigmoid(width logit_i),
// g[i,t] = exp(−(x_t − μ_i)² / 2σ_i²) at segment midpoints x_t = (t+0.5)/T,
// each row divided by its max.
template <typename Scalar>
GaussianCurves<Scalar> generate_gaussians(const GaussianGeneratorVars<Scalar>& gen,
                                          Var<Scalar> pooled, Index t_count) {
  if (t_count < 1) throw ContractError("generate_gaussians: need T ≥ 1");
  Graph<Scalar>& g = *pooled.graph;
  const Index e = gen.experts;

  Var<Scalar> logits = linear(gen.map, pooled);  // 1×2E
  Var<Scalar> offsets = slice_cols(logits, 0, e);
  Var<Scalar> width_logits = slice_cols(logits, e, e);

  Var<Scalar> mu = gen.anchors + scale(tanh(offsets), gen.margin);
  Var<Scalar> sigma = clamp_min(sigmoid(width_logits), static_cast<Scalar>(kSigmaFloor));

  Tensor<Scalar> positions({e, t_count});
  for (Index i = 0; i < e; ++i) {
    for (Index t = 0; t < t_count; ++t) {
      positions(i, t) = (static_cast<Scalar>(t) + Scalar(0.5)) / static_cast<Scalar>(t_count);
    }
  }
  Var<Scalar> mu_cols = broadcast_col(reshape(mu, {e, Index(1)}), t_count);
  Var<Scalar> diff = sub(g.constant(positions), mu_cols);
  Var<Scalar> sigma_col = reshape(sigma, {e, Index(1)});
  Var<Scalar> two_var = scale(mul(sigma_col, sigma_col), Scalar(2));
  Var<Scalar> exponent = scale(div_by_col(mul(diff, diff), two_var), Scalar(-1));
  // Max-normalize in log space: exp(e − max e) is exp(e)/max exp(e) with the
  // peak exactly 1, and survives σ small enough that exp(e) underflows.
  Var<Scalar> curves = exp(sub(exponent, broadcast_col(row_max(exponent), t_count)));
  return {mu, sigma, curves};
}

// r = softmax(pooled · W), a strictly positive simplex over experts.
template <typename Scalar>
Var<Scalar> route(Var<Scalar> pooled, Var<Scalar> router_w) {
  return softmax_lastdim(matmul(pooled, router_w));
}

// Σ_i r_i · Σ_t g[i,t] · E_i(x[t]) → 1×D.
template <typename Scalar>
Var<Scalar> integrate(Var<Scalar> x, Var<Scalar> curves, Var<Scalar> routing,
                      const ExpertBankVars<Scalar>& bank, bool time_normalize = false) {
  Graph<Scalar>& g = *x.graph;
  const Index e = g.value(curves).dim(0);
  if (g.value(x).dim(0) != g.value(curves).dim(1)) {
    throw ShapeError("integrate: curve length does not match sequence length");
  }
  if (static_cast<Index>(bank.experts.size()) != e || g.value(routing).size() != e) {
    throw ShapeError("integrate: expert count mismatch");
  }
  Var<Scalar> acc;
  for (Index i = 0; i < e; ++i) {
    Var<Scalar> weights = slice_rows(curves, i, 1);  // 1×T
    Var<Scalar> pooled = matmul(weights, linear(bank.experts[static_cast<std::size_t>(i)], x));
    if (time_normalize) pooled = div(pooled, row_sum(weights));
    Var<Scalar> term = mul(slice_cols(routing, i, 1), pooled);
    acc = i == 0 ? term : add(acc, term);
  }
  return acc;
}

template <typename Scalar>
struct TemporalIntegrationParams {
  AttentionParams<Scalar> pool_v, pool_a;
  GaussianGeneratorParams<Scalar> generator;  // one generator serves both pathways
  Tensor<Scalar> router_w;                    // D×E, also shared
  ExpertBank<Scalar> bank_v, bank_a;          // banks are per-pathway
};

template <typename Scalar>
struct TemporalIntegrationVars {
  AttentionVars<Scalar> pool_v, pool_a;
  GaussianGeneratorVars<Scalar> generator;
  Var<Scalar> router_w;
  ExpertBankVars<Scalar> bank_v, bank_a;
};

template <typename Scalar>
TemporalIntegrationVars<Scalar> bind(Graph<Scalar>& g, const TemporalIntegrationParams<Scalar>& p,
                                     bool requires_grad) {
  return {bind(g, p.pool_v, requires_grad),    bind(g, p.pool_a, requires_grad),
          bind(g, p.generator, requires_grad), g.leaf(p.router_w, requires_grad),
          bind(g, p.bank_v, requires_grad),    bind(g, p.bank_a, requires_grad)};
}

// Snapshot of one forward pass, exportable for inspection.
template <typename Scalar>
struct GaussianMixtureState {
  struct Pathway {
    Tensor<Scalar> mu;       // E
    Tensor<Scalar> sigma;    // E
    Tensor<Scalar> curves;   // E×T
    Tensor<Scalar> routing;  // E
  };
  Pathway visual, audio;
};

template <typename Scalar>
struct TemporalIntegrationResult {
  Var<Scalar> v_pv;  // 1×D, visual-refined patches through the visual pathway
  Var<Scalar> v_pa;  // 1×D, audio-refined patches through the same visual pathway
  Var<Scalar> a;     // 1×D, fused audio through the audio pathway
  Var<Scalar> pooled_v, pooled_a;
  GaussianCurves<Scalar> gauss_v, gauss_a;
  Var<Scalar> routing_v, routing_a;

  GaussianMixtureState<Scalar> state() const {
    auto snap = [](const GaussianCurves<Scalar>& c, Var<Scalar> r) ->
        typename GaussianMixtureState<Scalar>::Pathway {
      Graph<Scalar>& g = *r.graph;
      const Index e = g.value(c.curves).dim(0);
      typename GaussianMixtureState<Scalar>::Pathway p;
      p.mu = Tensor<Scalar>({e});
      p.mu.array() = g.value(c.mu).array();
      p.sigma = Tensor<Scalar>({e});
      p.sigma.array() = g.value(c.sigma).array();
      p.curves = g.value(c.curves);
      p.routing = Tensor<Scalar>({e});
      p.routing.array() = g.value(r).array();
      return p;
    };
    return {snap(gauss_v, routing_v), snap(gauss_a, routing_a)};
  }
};

// The full pathway: pool each fused stream by the question, generate curves
// and routing from the pooled vectors, add the v_q residual to both patch
// streams, then integrate. The visual pathway's curves and routing weight both
// patch streams; the audio pathway handles a_q with its own bank.
template <typename Scalar>
TemporalIntegrationResult<Scalar> temporal_integration(
    const TemporalIntegrationVars<Scalar>& p, Var<Scalar> vq, Var<Scalar> aq, Var<Scalar> pv,
    Var<Scalar> pa, Var<Scalar> qs, bool time_normalize = false) {
  Graph<Scalar>& g = *vq.graph;
  const Index t = g.value(vq).dim(0);

  TemporalIntegrationResult<Scalar> r;
  r.pooled_v = pool_by_question(p.pool_v, qs, vq);
  r.pooled_a = pool_by_question(p.pool_a, qs, aq);
  r.gauss_v = generate_gaussians(p.generator, r.pooled_v, t);
  r.gauss_a = generate_gaussians(p.generator, r.pooled_a, t);
  r.routing_v = route(r.pooled_v, p.router_w);
  r.routing_a = route(r.pooled_a, p.router_w);

  Var<Scalar> pv_res = add(vq, pv);
  Var<Scalar> pa_res = add(vq, pa);
  r.v_pv = integrate(pv_res, r.gauss_v.curves, r.routing_v, p.bank_v, time_normalize);
  r.v_pa = integrate(pa_res, r.gauss_v.curves, r.routing_v, p.bank_v, time_normalize);
  r.a = integrate(aq, r.gauss_a.curves, r.routing_a, p.bank_a, time_normalize);
  return r;
}

}  // namespace qatiger
