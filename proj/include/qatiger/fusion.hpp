// Question-aware fusion: projects every stream to the shared width, injects
// word-level question context into both modalities, then refines patch tokens
// frame by frame.
//
//   v_q = v + SA(v,v,v) + CA(v,a,a) + CA(v,q_w,q_w)
//   a_q = a + SA(a,a,a) + CA(a,v,v) + CA(a,q_w,q_w)
//
// Patch refinement reads the same recipe per frame: attention runs over the
// M′ tokens of one frame, the cross-attention query is that frame's v_q (or
// a_q) row, and the residual is the frame's token mean, so both patch streams
// land in T×D. The token-level SA output is pooled by the same mean.
#pragma once

#include "qatiger/attention.hpp"
#include "qatiger/linear.hpp"

namespace qatiger {

template <typename Scalar>
struct InputProjections {
  LinearParams<Scalar> visual;    // Dv→D
  LinearParams<Scalar> audio;     // Da→D
  LinearParams<Scalar> patch;     // Dv→D
  LinearParams<Scalar> sentence;  // Dq→D
  LinearParams<Scalar> words;     // Dq→D
};

template <typename Scalar>
struct FusionParams {
  AttentionParams<Scalar> sa_v, ca_va, ca_vq;  // visual row of Eq. (1)
  AttentionParams<Scalar> sa_a, ca_av, ca_aq;  // audio row of Eq. (2)
  AttentionParams<Scalar> sa_pv, ca_pv;        // patch refinement toward v_q
  AttentionParams<Scalar> sa_pa, ca_pa;        // patch refinement toward a_q
};

template <typename Scalar>
struct InputProjectionVars {
  LinearVars<Scalar> visual, audio, patch, sentence, words;
};

template <typename Scalar>
InputProjectionVars<Scalar> bind(Graph<Scalar>& g, const InputProjections<Scalar>& p,
                                 bool requires_grad) {
  return {bind(g, p.visual, requires_grad), bind(g, p.audio, requires_grad),
          bind(g, p.patch, requires_grad), bind(g, p.sentence, requires_grad),
          bind(g, p.words, requires_grad)};
}

template <typename Scalar>
struct FusionVars {
  AttentionVars<Scalar> sa_v, ca_va, ca_vq, sa_a, ca_av, ca_aq;
  AttentionVars<Scalar> sa_pv, ca_pv, sa_pa, ca_pa;
};

template <typename Scalar>
FusionVars<Scalar> bind(Graph<Scalar>& g, const FusionParams<Scalar>& p, bool requires_grad) {
  return {bind(g, p.sa_v, requires_grad),  bind(g, p.ca_va, requires_grad),
          bind(g, p.ca_vq, requires_grad), bind(g, p.sa_a, requires_grad),
          bind(g, p.ca_av, requires_grad), bind(g, p.ca_aq, requires_grad),
          bind(g, p.sa_pv, requires_grad), bind(g, p.ca_pv, requires_grad),
          bind(g, p.sa_pa, requires_grad), bind(g, p.ca_pa, requires_grad)};
}

// All streams after projection to the shared width D.
template <typename Scalar>
struct ProjectedInputs {
  Var<Scalar> visual;    // T×D
  Var<Scalar> audio;     // T×D
  Var<Scalar> patches;   // T×M′×D
  Var<Scalar> sentence;  // 1×D
  Var<Scalar> words;     // N×D
};

// raw visual T×Dv, raw audio T×Da, raw patches T×M′×Dv, raw question
// (sentence length Dq, words N×Dq) → everything at width D.
template <typename Scalar>
ProjectedInputs<Scalar> project_inputs(Graph<Scalar>& g, const InputProjectionVars<Scalar>& p,
                                       const Tensor<Scalar>& visual, const Tensor<Scalar>& audio,
                                       const Tensor<Scalar>& patches,
                                       const Tensor<Scalar>& sentence,
                                       const Tensor<Scalar>& words) {
  if (visual.rank() != 2 || audio.rank() != 2 || patches.rank() != 3) {
    throw ShapeError("project_inputs: visual/audio must be rank 2 and patches rank 3");
  }
  if (visual.dim(0) != audio.dim(0) || visual.dim(0) != patches.dim(0)) {
    throw ShapeError("project_inputs: segment counts disagree across modalities");
  }
  ProjectedInputs<Scalar> out;
  out.visual = linear(p.visual, g.constant(visual));
  out.audio = linear(p.audio, g.constant(audio));
  out.patches = linear(p.patch, g.constant(patches));
  Tensor<Scalar> qs_row({Index(1), sentence.size()});
  qs_row.array() = sentence.array();
  out.sentence = linear(p.sentence, g.constant(qs_row));
  out.words = linear(p.words, g.constant(words));
  return out;
}

template <typename Scalar>
struct FusedFeatures {
  Var<Scalar> vq;  // T×D
  Var<Scalar> aq;  // T×D
};

template <typename Scalar>
FusedFeatures<Scalar> fuse_modalities(const FusionVars<Scalar>& p, Var<Scalar> v, Var<Scalar> a,
                                      Var<Scalar> qw) {
  Var<Scalar> vq = v + multi_head_attention(p.sa_v, v, v, v) +
                   multi_head_attention(p.ca_va, v, a, a) +
                   multi_head_attention(p.ca_vq, v, qw, qw);
  Var<Scalar> aq = a + multi_head_attention(p.sa_a, a, a, a) +
                   multi_head_attention(p.ca_av, a, v, v) +
                   multi_head_attention(p.ca_aq, a, qw, qw);
  return {vq, aq};
}

template <typename Scalar>
struct RefinedPatches {
  Var<Scalar> pv;  // T×D
  Var<Scalar> pa;  // T×D
};

// Frame-batched: the rank-3 patch tensor drives T independent attentions over
// M′ tokens, with the matching v_q/a_q row as a one-token query.
template <typename Scalar>
RefinedPatches<Scalar> refine_patches(const FusionVars<Scalar>& p, Var<Scalar> patches,
                                      Var<Scalar> vq, Var<Scalar> aq) {
  Graph<Scalar>& g = *patches.graph;
  const Tensor<Scalar>& tp = g.value(patches);
  if (tp.rank() != 3) throw ShapeError("refine_patches: patches must be rank 3");
  if (tp.dim(1) < 1) throw ContractError("refine_patches: need at least one patch token");
  const Index t = tp.dim(0);
  const Index d = tp.dim(2);

  Var<Scalar> base = mean_rows(patches);  // T×D residual
  Var<Scalar> vq3 = reshape(vq, {t, Index(1), d});
  Var<Scalar> aq3 = reshape(aq, {t, Index(1), d});

  Var<Scalar> sav = mean_rows(multi_head_attention(p.sa_pv, patches, patches, patches));
  Var<Scalar> cav = reshape(multi_head_attention(p.ca_pv, vq3, patches, patches), {t, d});
  Var<Scalar> pv = base + sav + cav;

  Var<Scalar> saa = mean_rows(multi_head_attention(p.sa_pa, patches, patches, patches));
  Var<Scalar> caa = reshape(multi_head_attention(p.ca_pa, aq3, patches, patches), {t, d});
  Var<Scalar> pa = base + saa + caa;
  return {pv, pa};
}

}  // namespace qatiger
