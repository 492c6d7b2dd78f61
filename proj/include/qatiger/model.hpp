// Full pipeline assembly: projection → question-aware fusion → temporal
// pooling → question-guided reasoning, with switches for the ablation arms.
#pragma once

#include <functional>
#include <string>

#include "qatiger/baselines.hpp"
#include "qatiger/fusion.hpp"
#include "qatiger/reasoning.hpp"

namespace qatiger {

struct ModelConfig {
  Index d = 64;        // shared embedding width
  Index dv = 48;       // raw visual width
  Index da = 24;       // raw audio width
  Index dq = 32;       // raw question width
  Index m_prime = 4;   // merged patch tokens per segment
  Index classes = 5;
  Index experts = 7;
  Index heads = 8;
  double dropout = 0.1;
};

// Run-mode switches; parameters are identical across arms so checkpoints stay
// interchangeable.
struct PipelineMode {
  PoolingStrategy strategy = PoolingStrategy::kGaussianExperts;
  bool fusion_on = true;       // off → question context enters only at the end
  bool time_normalize = false;
  Index top_k = 10;
};

template <typename Scalar>
struct ModelParams {
  ModelConfig cfg;
  InputProjections<Scalar> input;
  FusionParams<Scalar> fusion;
  TemporalIntegrationParams<Scalar> temporal;
  ReasoningParams<Scalar> reasoning;
};

template <typename Scalar>
ModelParams<Scalar> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.d % cfg.heads != 0) {
    throw ContractError("embedding width must be divisible by head count");
  }
  const auto drop = static_cast<Scalar>(cfg.dropout);
  auto attn = [&](const char* tag) {
    return init_attention_params<Scalar>(cfg.d, cfg.heads, derive_seed(seed, tag), drop);
  };
  ModelParams<Scalar> p;
  p.cfg = cfg;
  p.input.visual = init_linear<Scalar>(cfg.dv, cfg.d, derive_seed(seed, "in.visual"));
  p.input.audio = init_linear<Scalar>(cfg.da, cfg.d, derive_seed(seed, "in.audio"));
  p.input.patch = init_linear<Scalar>(cfg.dv, cfg.d, derive_seed(seed, "in.patch"));
  p.input.sentence = init_linear<Scalar>(cfg.dq, cfg.d, derive_seed(seed, "in.sentence"));
  p.input.words = init_linear<Scalar>(cfg.dq, cfg.d, derive_seed(seed, "in.words"));

  p.fusion.sa_v = attn("fusion.sa_v");
  p.fusion.ca_va = attn("fusion.ca_va");
  p.fusion.ca_vq = attn("fusion.ca_vq");
  p.fusion.sa_a = attn("fusion.sa_a");
  p.fusion.ca_av = attn("fusion.ca_av");
  p.fusion.ca_aq = attn("fusion.ca_aq");
  p.fusion.sa_pv = attn("fusion.sa_pv");
  p.fusion.ca_pv = attn("fusion.ca_pv");
  p.fusion.sa_pa = attn("fusion.sa_pa");
  p.fusion.ca_pa = attn("fusion.ca_pa");

  p.temporal.pool_v = attn("temporal.pool_v");
  p.temporal.pool_a = attn("temporal.pool_a");
  p.temporal.generator =
      init_gaussian_generator<Scalar>(cfg.d, cfg.experts, derive_seed(seed, "temporal.generator"));
  {
    Rng rng(derive_seed(seed, "temporal.router"));
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.d));
    p.temporal.router_w = rng.uniform_tensor<Scalar>({cfg.d, cfg.experts}, -bound, bound);
  }
  p.temporal.bank_v = init_expert_bank<Scalar>(cfg.d, cfg.experts, derive_seed(seed, "bank_v"));
  p.temporal.bank_a = init_expert_bank<Scalar>(cfg.d, cfg.experts, derive_seed(seed, "bank_a"));

  p.reasoning.fuse_v = attn("reasoning.fuse_v");
  p.reasoning.fuse_av = attn("reasoning.fuse_av");
  p.reasoning.classifier =
      init_linear<Scalar>(cfg.d, cfg.classes, derive_seed(seed, "reasoning.classifier"));
  return p;
}

namespace detail {

template <typename MP, typename Fn>
void visit_params_impl(MP& p, Fn&& fn) {
  auto lin = [&](const std::string& name, auto& l) {
    fn(name + ".w", l.w);
    fn(name + ".b", l.b);
  };
  auto att = [&](const std::string& name, auto& a) {
    fn(name + ".wq", a.wq);
    fn(name + ".wk", a.wk);
    fn(name + ".wv", a.wv);
    fn(name + ".wo", a.wo);
  };
  lin("input.visual", p.input.visual);
  lin("input.audio", p.input.audio);
  lin("input.patch", p.input.patch);
  lin("input.sentence", p.input.sentence);
  lin("input.words", p.input.words);
  att("fusion.sa_v", p.fusion.sa_v);
  att("fusion.ca_va", p.fusion.ca_va);
  att("fusion.ca_vq", p.fusion.ca_vq);
  att("fusion.sa_a", p.fusion.sa_a);
  att("fusion.ca_av", p.fusion.ca_av);
  att("fusion.ca_aq", p.fusion.ca_aq);
  att("fusion.sa_pv", p.fusion.sa_pv);
  att("fusion.ca_pv", p.fusion.ca_pv);
  att("fusion.sa_pa", p.fusion.sa_pa);
  att("fusion.ca_pa", p.fusion.ca_pa);
  att("temporal.pool_v", p.temporal.pool_v);
  att("temporal.pool_a", p.temporal.pool_a);
  lin("temporal.generator", p.temporal.generator.map);
  fn("temporal.router_w", p.temporal.router_w);
  for (std::size_t i = 0; i < p.temporal.bank_v.experts.size(); ++i) {
    lin("temporal.bank_v." + std::to_string(i), p.temporal.bank_v.experts[i]);
  }
  for (std::size_t i = 0; i < p.temporal.bank_a.experts.size(); ++i) {
    lin("temporal.bank_a." + std::to_string(i), p.temporal.bank_a.experts[i]);
  }
  att("reasoning.fuse_v", p.reasoning.fuse_v);
  att("reasoning.fuse_av", p.reasoning.fuse_av);
  lin("reasoning.classifier", p.reasoning.classifier);
}

}  // namespace detail

// Fixed-order enumeration of every learnable tensor; the order defines the
// checkpoint layout and the optimizer slot assignment.
template <typename Scalar, typename Fn>
void visit_params(ModelParams<Scalar>& p, Fn&& fn) {
  detail::visit_params_impl(p, std::forward<Fn>(fn));
}
template <typename Scalar, typename Fn>
void visit_params(const ModelParams<Scalar>& p, Fn&& fn) {
  detail::visit_params_impl(p, std::forward<Fn>(fn));
}

template <typename Scalar>
std::vector<Tensor<Scalar>*> param_pointers(ModelParams<Scalar>& p) {
  std::vector<Tensor<Scalar>*> out;
  visit_params(p, [&](const std::string&, Tensor<Scalar>& t) { out.push_back(&t); });
  return out;
}

// Raw per-sample features as ingested (widths before projection).
template <typename Scalar>
struct SampleFeatures {
  Tensor<Scalar> visual;    // T×Dv
  Tensor<Scalar> audio;     // T×Da
  Tensor<Scalar> patches;   // T×M′×Dv
  Tensor<Scalar> sentence;  // Dq
  Tensor<Scalar> words;     // N×Dq
};

template <typename Scalar>
struct ModelVars {
  InputProjectionVars<Scalar> input;
  FusionVars<Scalar> fusion;
  TemporalIntegrationVars<Scalar> temporal;
  ReasoningVars<Scalar> reasoning;
};

template <typename Scalar>
ModelVars<Scalar> bind(Graph<Scalar>& g, const ModelParams<Scalar>& p, bool requires_grad) {
  return {bind(g, p.input, requires_grad), bind(g, p.fusion, requires_grad),
          bind(g, p.temporal, requires_grad), bind(g, p.reasoning, requires_grad)};
}

// Same walk as visit_params over the bound graph leaves, in the identical
// order; keeps gradients aligned with parameters without node-id arithmetic.
template <typename Scalar, typename Fn>
void visit_vars(ModelVars<Scalar>& m, Fn&& fn) {
  auto lin = [&](const std::string& name, LinearVars<Scalar>& l) {
    fn(name + ".w", l.w);
    fn(name + ".b", l.b);
  };
  auto att = [&](const std::string& name, AttentionVars<Scalar>& a) {
    fn(name + ".wq", a.wq);
    fn(name + ".wk", a.wk);
    fn(name + ".wv", a.wv);
    fn(name + ".wo", a.wo);
  };
  lin("input.visual", m.input.visual);
  lin("input.audio", m.input.audio);
  lin("input.patch", m.input.patch);
  lin("input.sentence", m.input.sentence);
  lin("input.words", m.input.words);
  att("fusion.sa_v", m.fusion.sa_v);
  att("fusion.ca_va", m.fusion.ca_va);
  att("fusion.ca_vq", m.fusion.ca_vq);
  att("fusion.sa_a", m.fusion.sa_a);
  att("fusion.ca_av", m.fusion.ca_av);
  att("fusion.ca_aq", m.fusion.ca_aq);
  att("fusion.sa_pv", m.fusion.sa_pv);
  att("fusion.ca_pv", m.fusion.ca_pv);
  att("fusion.sa_pa", m.fusion.sa_pa);
  att("fusion.ca_pa", m.fusion.ca_pa);
  att("temporal.pool_v", m.temporal.pool_v);
  att("temporal.pool_a", m.temporal.pool_a);
  lin("temporal.generator", m.temporal.generator.map);
  fn("temporal.router_w", m.temporal.router_w);
  for (std::size_t i = 0; i < m.temporal.bank_v.experts.size(); ++i) {
    lin("temporal.bank_v." + std::to_string(i), m.temporal.bank_v.experts[i]);
  }
  for (std::size_t i = 0; i < m.temporal.bank_a.experts.size(); ++i) {
    lin("temporal.bank_a." + std::to_string(i), m.temporal.bank_a.experts[i]);
  }
  att("reasoning.fuse_v", m.reasoning.fuse_v);
  att("reasoning.fuse_av", m.reasoning.fuse_av);
  lin("reasoning.classifier", m.reasoning.classifier);
}

// Gradients for every parameter in visit order (zeros where a parameter did
// not participate in the loss).
template <typename Scalar>
std::vector<Tensor<Scalar>> collect_gradients(Graph<Scalar>& g, ModelVars<Scalar>& m) {
  std::vector<Tensor<Scalar>> grads;
  visit_vars(m, [&](const std::string&, Var<Scalar> v) {
    grads.push_back(g.has_grad(v) ? g.grad(v) : Tensor<Scalar>::zeros(g.value(v).dims()));
  });
  return grads;
}

template <typename Scalar>
struct ForwardResult {
  Var<Scalar> vq, aq, pv, pa;                   // fused trunk (T×D each)
  Var<Scalar> pooled_pv, pooled_pa, pooled_a;   // 1×D pooled vectors
  Var<Scalar> f_v, f_va;                        // reasoning fusions
  AnswerDistribution<Scalar> answer;
  bool has_mixture = false;
  TemporalIntegrationResult<Scalar> mixture;    // set for the experts strategy
};

template <typename Scalar>
ForwardResult<Scalar> forward(Graph<Scalar>& g, const ModelVars<Scalar>& m,
                              const ModelConfig& cfg, const SampleFeatures<Scalar>& s,
                              const PipelineMode& mode) {
  ForwardResult<Scalar> r;
  ProjectedInputs<Scalar> in =
      project_inputs(g, m.input, s.visual, s.audio, s.patches, s.sentence, s.words);

  if (mode.fusion_on) {
    FusedFeatures<Scalar> fused = fuse_modalities(m.fusion, in.visual, in.audio, in.words);
    RefinedPatches<Scalar> refined = refine_patches(m.fusion, in.patches, fused.vq, fused.aq);
    r.vq = fused.vq;
    r.aq = fused.aq;
    r.pv = refined.pv;
    r.pa = refined.pa;
  } else {
    // Question context is withheld until the end; both patch streams fall
    // back to the per-frame token mean.
    r.vq = in.visual;
    r.aq = in.audio;
    r.pv = mean_rows(in.patches);
    r.pa = r.pv;
  }

  const Index t = g.value(r.vq).dim(0);
  switch (mode.strategy) {
    case PoolingStrategy::kGaussianExperts: {
      r.mixture = temporal_integration(m.temporal, r.vq, r.aq, r.pv, r.pa, in.sentence,
                                       mode.time_normalize);
      r.has_mixture = true;
      r.pooled_pv = r.mixture.v_pv;
      r.pooled_pa = r.mixture.v_pa;
      r.pooled_a = r.mixture.a;
      break;
    }
    case PoolingStrategy::kUniform: {
      r.pooled_pv = uniform_pool(r.pv);
      r.pooled_pa = uniform_pool(r.pa);
      r.pooled_a = uniform_pool(r.aq);
      break;
    }
    case PoolingStrategy::kTopK: {
      r.pooled_pv = top_k_pool(r.pv, in.sentence, mode.top_k);
      r.pooled_pa = top_k_pool(r.pa, in.sentence, mode.top_k);
      r.pooled_a = top_k_pool(r.aq, in.sentence, mode.top_k);
      break;
    }
    case PoolingStrategy::kGaussian:
    case PoolingStrategy::kWeightedGaussian:
    case PoolingStrategy::kWeightedGaussianDisjoint: {
      const bool disjoint = mode.strategy == PoolingStrategy::kWeightedGaussianDisjoint;
      const bool weighted = mode.strategy != PoolingStrategy::kGaussian;
      Var<Scalar> pooled_v = pool_by_question(m.temporal.pool_v, in.sentence, r.vq);
      Var<Scalar> pooled_a = pool_by_question(m.temporal.pool_a, in.sentence, r.aq);
      GaussianCurves<Scalar> cv = disjoint
                                      ? generate_gaussians(m.temporal.generator, pooled_v, t)
                                      : generate_gaussians_free(m.temporal.generator, pooled_v, t);
      GaussianCurves<Scalar> ca = disjoint
                                      ? generate_gaussians(m.temporal.generator, pooled_a, t)
                                      : generate_gaussians_free(m.temporal.generator, pooled_a, t);
      if (weighted) {
        Var<Scalar> rv = route(pooled_v, m.temporal.router_w);
        Var<Scalar> ra = route(pooled_a, m.temporal.router_w);
        r.pooled_pv = gaussian_routed_pool(r.pv, cv.curves, rv);
        r.pooled_pa = gaussian_routed_pool(r.pa, cv.curves, rv);
        r.pooled_a = gaussian_routed_pool(r.aq, ca.curves, ra);
      } else {
        r.pooled_pv = gaussian_sum_pool(r.pv, cv.curves);
        r.pooled_pa = gaussian_sum_pool(r.pa, cv.curves);
        r.pooled_a = gaussian_sum_pool(r.aq, ca.curves);
      }
      break;
    }
  }

  if (!mode.fusion_on) {
    // Late-stage incorporation: multiply the question into the pooled vectors.
    r.pooled_pv = mul(r.pooled_pv, in.sentence);
    r.pooled_pa = mul(r.pooled_pa, in.sentence);
    r.pooled_a = mul(r.pooled_a, in.sentence);
  }

  r.f_v = fuse_visual(m.reasoning, in.sentence, r.pooled_pa, r.pooled_pv);
  r.f_va = fuse_av(m.reasoning, in.sentence, r.pooled_a, r.f_v);
  r.answer = predict(m.reasoning, r.f_va);
  return r;
}

template <typename Scalar>
ForwardResult<Scalar> forward(Graph<Scalar>& g, const ModelParams<Scalar>& params,
                              const SampleFeatures<Scalar>& s, const PipelineMode& mode,
                              bool requires_grad = false) {
  ModelVars<Scalar> m = bind(g, params, requires_grad);
  return forward(g, m, params.cfg, s, mode);
}

}  // namespace qatiger
