// Question-guided reasoning over the three pooled vectors and the answer head.
//
//   F_v  = Avg(ṽ_pa, ṽ_pv) + CA(q_s, [ṽ_pa, ṽ_pv], [ṽ_pa, ṽ_pv])
//   F_va = Avg(ã, F_v)     + CA(q_s, [ã, F_v], [ã, F_v])
//
// [x, y] stacks the two vectors as a two-row key/value set and Avg is their
// elementwise mean. The loss is cross-entropy computed from logits in fused
// log-sum-exp form, never from post-softmax probabilities.
#pragma once

#include "qatiger/attention.hpp"
#include "qatiger/linear.hpp"

namespace qatiger {

template <typename Scalar>
struct ReasoningParams {
  AttentionParams<Scalar> fuse_v;
  AttentionParams<Scalar> fuse_av;
  LinearParams<Scalar> classifier;  // D→C
};

template <typename Scalar>
struct ReasoningVars {
  AttentionVars<Scalar> fuse_v, fuse_av;
  LinearVars<Scalar> classifier;
};

template <typename Scalar>
ReasoningVars<Scalar> bind(Graph<Scalar>& g, const ReasoningParams<Scalar>& p,
                           bool requires_grad) {
  return {bind(g, p.fuse_v, requires_grad), bind(g, p.fuse_av, requires_grad),
          bind(g, p.classifier, requires_grad)};
}

template <typename Scalar>
Var<Scalar> fuse_pair(AttentionVars<Scalar> attn, Var<Scalar> qs, Var<Scalar> first,
                      Var<Scalar> second) {
  Var<Scalar> stacked = concat_rows(first, second);  // 2×D key/value set
  Var<Scalar> avg = scale(add(first, second), Scalar(0.5));
  return add(avg, multi_head_attention(attn, qs, stacked, stacked));
}

template <typename Scalar>
Var<Scalar> fuse_visual(const ReasoningVars<Scalar>& p, Var<Scalar> qs, Var<Scalar> v_pa,
                        Var<Scalar> v_pv) {
  return fuse_pair(p.fuse_v, qs, v_pa, v_pv);
}

template <typename Scalar>
Var<Scalar> fuse_av(const ReasoningVars<Scalar>& p, Var<Scalar> qs, Var<Scalar> a,
                    Var<Scalar> fv) {
  return fuse_pair(p.fuse_av, qs, a, fv);
}

template <typename Scalar>
struct AnswerDistribution {
  Var<Scalar> logits;              // 1×C graph node, kept for the loss path
  Tensor<Scalar> probabilities;    // C values, nonnegative, summing to 1
  Index predicted = 0;             // argmax class
};

template <typename Scalar>
AnswerDistribution<Scalar> predict(const ReasoningVars<Scalar>& p, Var<Scalar> f_va) {
  Graph<Scalar>& g = *f_va.graph;
  AnswerDistribution<Scalar> dist;
  dist.logits = linear(p.classifier, f_va);
  const Tensor<Scalar>& l = g.value(dist.logits);
  const Index c = l.size();
  dist.probabilities = Tensor<Scalar>({c});
  const Scalar m = l.array().maxCoeff();
  dist.probabilities.array() = (l.array() - m).exp();
  dist.probabilities.array() /= dist.probabilities.array().sum();
  dist.predicted = 0;
  for (Index i = 1; i < c; ++i) {
    if (l(i) > l(dist.predicted)) dist.predicted = i;
  }
  return dist;
}

// −log P(label), computed from the stored logits.
template <typename Scalar>
Var<Scalar> qa_loss(const AnswerDistribution<Scalar>& dist, Index label) {
  return cross_entropy_logits(dist.logits, label);
}

}  // namespace qatiger
