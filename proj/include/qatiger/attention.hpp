// Multi-head scaled dot-product attention, used both self- and cross-wise.
// No normalization layers and no position encodings anywhere: the fusion
// equations are plain residual sums, and that is what downstream code expects.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "qatiger/graph.hpp"
#include "qatiger/random.hpp"
#include "qatiger/tensor.hpp"

namespace qatiger {

template <typename Scalar>
struct AttentionParams {
  Tensor<Scalar> wq, wk, wv, wo;  // D×D projections, logically split across heads
  Index heads = 1;
  Scalar dropout_rate = Scalar(0);  // applied to attention probabilities only

  Index width() const { return wq.dim(0); }
};

template <typename Scalar>
AttentionParams<Scalar> init_attention_params(Index d, Index heads, std::uint64_t seed,
                                              Scalar dropout_rate = Scalar(0)) {
  if (d < 1 || heads < 1 || d % heads != 0) {
    throw ContractError("attention width " + std::to_string(d) +
                        " must be positive and divisible by head count " + std::to_string(heads));
  }
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  AttentionParams<Scalar> p;
  p.wq = rng.uniform_tensor<Scalar>({d, d}, -bound, bound);
  p.wk = rng.uniform_tensor<Scalar>({d, d}, -bound, bound);
  p.wv = rng.uniform_tensor<Scalar>({d, d}, -bound, bound);
  p.wo = rng.uniform_tensor<Scalar>({d, d}, -bound, bound);
  p.heads = heads;
  p.dropout_rate = dropout_rate;
  return p;
}

// Projections bound into one graph for a single forward pass.
template <typename Scalar>
struct AttentionVars {
  Var<Scalar> wq, wk, wv, wo;
  Index heads = 1;
  Scalar dropout_rate = Scalar(0);
};

template <typename Scalar>
AttentionVars<Scalar> bind(Graph<Scalar>& g, const AttentionParams<Scalar>& p,
                           bool requires_grad) {
  return {g.leaf(p.wq, requires_grad), g.leaf(p.wk, requires_grad), g.leaf(p.wv, requires_grad),
          g.leaf(p.wo, requires_grad), p.heads, p.dropout_rate};
}

// query S×D (or batched B×S×D), key/value L×D (or B×L×D) → S×D (or B×S×D).
// Per head: softmax(QKᵀ/√(D/H))·V; heads are concatenated and output-projected.
// Attention rows are probability vectors; `probs_out` exposes them per head.
template <typename Scalar>
Var<Scalar> multi_head_attention(AttentionVars<Scalar> p, Var<Scalar> query, Var<Scalar> key,
                                 Var<Scalar> value, std::vector<Var<Scalar>>* probs_out = nullptr) {
  Graph<Scalar>& g = *query.graph;
  const Tensor<Scalar>& tq = g.value(query);
  const Tensor<Scalar>& tk = g.value(key);
  const Tensor<Scalar>& tv = g.value(value);
  const Index d = g.value(p.wq).dim(0);
  const Index rank = tq.rank();

  if (rank < 2 || tk.rank() != rank || tv.rank() != rank) {
    throw ShapeError("attention operands must share rank 2 or 3");
  }
  if (tq.dim(rank - 1) != d || tk.dim(rank - 1) != d || tv.dim(rank - 1) != d) {
    throw ShapeError("attention operand width does not match projections");
  }
  if (tk.dims() != tv.dims()) {
    throw ShapeError("key and value shapes differ: " + tk.shape_string() + " vs " +
                     tv.shape_string());
  }
  if (rank == 3 && tq.dim(0) != tk.dim(0)) {
    throw ShapeError("batched attention batch sizes differ");
  }
  if (d % p.heads != 0) throw ContractError("width not divisible by head count");
  const Index dh = d / p.heads;
  const Scalar inv_sqrt_dh = Scalar(1) / static_cast<Scalar>(std::sqrt(static_cast<double>(dh)));

  Var<Scalar> q = matmul(query, p.wq);
  Var<Scalar> k = matmul(key, p.wk);
  Var<Scalar> v = matmul(value, p.wv);

  Var<Scalar> heads_cat;
  for (Index h = 0; h < p.heads; ++h) {
    Var<Scalar> qh = slice_cols(q, h * dh, dh);
    Var<Scalar> kh = slice_cols(k, h * dh, dh);
    Var<Scalar> vh = slice_cols(v, h * dh, dh);
    Var<Scalar> probs = softmax_lastdim(scale(matmul_nt(qh, kh), inv_sqrt_dh));
    if (probs_out) probs_out->push_back(probs);
    Var<Scalar> head = matmul(dropout(probs, p.dropout_rate), vh);
    heads_cat = h == 0 ? head : concat_cols(heads_cat, head);
  }
  return matmul(heads_cat, p.wo);
}

}  // namespace qatiger
