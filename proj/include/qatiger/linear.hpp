// Affine maps x·W + b shared by projections, expert banks and the classifier.
#pragma once

#include <cmath>

#include "qatiger/graph.hpp"
#include "qatiger/random.hpp"

namespace qatiger {

template <typename Scalar>
struct LinearParams {
  Tensor<Scalar> w;  // in×out
  Tensor<Scalar> b;  // out

  Index in() const { return w.dim(0); }
  Index out() const { return w.dim(1); }
};

// Weights uniform in [−1/√in, 1/√in], bias zero; deterministic per seed.
template <typename Scalar>
LinearParams<Scalar> init_linear(Index in, Index out, std::uint64_t seed) {
  if (in < 1 || out < 1) throw ContractError("linear dims must be positive");
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  return {rng.uniform_tensor<Scalar>({in, out}, -bound, bound), Tensor<Scalar>::zeros({out})};
}

template <typename Scalar>
struct LinearVars {
  Var<Scalar> w, b;
};

template <typename Scalar>
LinearVars<Scalar> bind(Graph<Scalar>& g, const LinearParams<Scalar>& p, bool requires_grad) {
  return {g.leaf(p.w, requires_grad), g.leaf(p.b, requires_grad)};
}

template <typename Scalar>
Var<Scalar> linear(LinearVars<Scalar> p, Var<Scalar> x) {
  return add_row_vec(matmul(x, p.w), p.b);
}

}  // namespace qatiger
