// Define-by-run reverse-mode differentiation on rank-1..3 tensors.
//
// A Graph is an append-only tape: creation order is topological order, and
// backward() walks it once in reverse. Each node records its op kind, parent
// indices and saved activations. Graphs are rebuilt per forward pass and are
// confined to one thread; parameter tensors are copied into leaves.
#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "qatiger/random.hpp"
#include "qatiger/tensor.hpp"

namespace qatiger {

enum class OpKind : std::uint8_t {
  kLeaf,
  kConstant,
  kMatmul,     // a·b, rank-2 or batched rank-3 (optionally rank-3 × rank-2)
  kMatmulNT,   // a·bᵀ, same rank combinations
  kAdd,
  kSub,
  kMul,        // elementwise, or one single-element operand broadcast
  kDiv,        // elementwise, or single-element divisor broadcast
  kScale,      // constant scalar multiple
  kTanh,
  kSigmoid,
  kExp,
  kClampMin,
  kSoftmaxLastDim,
  kDropout,
  kMeanAll,
  kSumAll,
  kMeanRows,   // R×C → 1×C, or B×R×C → B×C; accumulates in value order
  kRowSum,     // R×C → R×1
  kRowMax,     // R×C → R×1, gradient routed to the first argmax
  kDivByCol,   // R×C divided rowwise by R×1
  kBroadcastCol,  // R×1 (or length-R) → R×C
  kAddRowVec,  // X + bias row, X rank 2 or 3
  kConcatRows,
  kConcatCols,
  kSliceRows,
  kSliceCols,  // last-dim slice, rank 2 or 3
  kSliceFrame, // rank-3 → one rank-2 slice
  kReshape,
  kCrossEntropyLogits,
};

inline const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kMatmulNT: return "matmul_nt";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kDiv: return "div";
    case OpKind::kScale: return "scale";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kExp: return "exp";
    case OpKind::kClampMin: return "clamp_min";
    case OpKind::kSoftmaxLastDim: return "softmax_lastdim";
    case OpKind::kDropout: return "dropout";
    case OpKind::kMeanAll: return "mean_all";
    case OpKind::kSumAll: return "sum_all";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kRowSum: return "row_sum";
    case OpKind::kRowMax: return "row_max";
    case OpKind::kDivByCol: return "div_by_col";
    case OpKind::kBroadcastCol: return "broadcast_col";
    case OpKind::kAddRowVec: return "add_row_vec";
    case OpKind::kConcatRows: return "concat_rows";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kSliceFrame: return "slice_frame";
    case OpKind::kReshape: return "reshape";
    case OpKind::kCrossEntropyLogits: return "cross_entropy_logits";
  }
  return "?";
}

template <typename Scalar>
class Graph;

// Lightweight handle to a graph node.
template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  std::int32_t id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
};

template <typename Scalar>
class Graph {
 public:
  struct Node {
    OpKind kind = OpKind::kConstant;
    std::int32_t a = -1;
    std::int32_t b = -1;
    bool requires_grad = false;
    Tensor<Scalar> value;
    Tensor<Scalar> grad;   // allocated on first accumulation during backward
    Tensor<Scalar> saved;  // dropout mask / softmax probs of the CE op
    std::vector<Index> idx;  // row_max argmax positions
    Index i0 = 0, i1 = 0;    // slice offsets / CE label
    Scalar c = Scalar(0);    // scale factor / clamp threshold
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<Scalar> leaf(Tensor<Scalar> t) {
    const bool rg = t.requires_grad();
    return push(OpKind::kLeaf, -1, -1, std::move(t), rg);
  }

  Var<Scalar> leaf(const Tensor<Scalar>& t, bool requires_grad) {
    Tensor<Scalar> copy = t;
    copy.set_requires_grad(requires_grad);
    Var<Scalar> v = push(OpKind::kLeaf, -1, -1, std::move(copy), requires_grad);
    return v;
  }

  Var<Scalar> constant(Tensor<Scalar> t) {
    return push(OpKind::kConstant, -1, -1, std::move(t), false);
  }

  const Tensor<Scalar>& value(Var<Scalar> v) const { return node(v).value; }

  bool has_grad(Var<Scalar> v) const { return node(v).grad.size() > 0; }

  const Tensor<Scalar>& grad(Var<Scalar> v) const {
    const Node& n = node(v);
    if (n.grad.size() == 0) {
      throw ContractError("no gradient recorded for this node; run backward() first");
    }
    return n.grad;
  }

  // d(loss)/d(node) for every node that requires grad, walking the tape in
  // reverse creation order; each node is visited exactly once.
  void backward(Var<Scalar> loss) {
    Node& top = node(loss);
    if (top.value.size() != 1) {
      throw ContractError("backward needs a scalar loss, got shape " + top.value.shape_string());
    }
    accumulate(loss.id, Tensor<Scalar>::constant(top.value.dims(), Scalar(1)));
    for (std::int32_t i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      propagate(n);
    }
  }

  void reset() { nodes_.clear(); }

  std::size_t size() const { return nodes_.size(); }

  void set_training(bool training, Rng* dropout_rng) {
    training_ = training;
    dropout_rng_ = dropout_rng;
  }
  bool training() const { return training_; }
  Rng* dropout_rng() const { return dropout_rng_; }

  // NaN/Inf after any op is an error state; the check can be disabled for
  // micro-benchmarks but stays on everywhere else.
  bool check_finite = true;

  Var<Scalar> push(OpKind kind, std::int32_t a, std::int32_t b, Tensor<Scalar> value,
                   bool requires_grad) {
    if (check_finite && !value.all_finite()) {
      throw NumericError(std::string("non-finite values produced by ") + op_name(kind));
    }
    Node n;
    n.kind = kind;
    n.a = a;
    n.b = b;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  Node& node(Var<Scalar> v) {
    if (!v.valid() || v.graph != this) throw ContractError("variable does not belong to this graph");
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& node(Var<Scalar> v) const {
    if (!v.valid() || v.graph != this) throw ContractError("variable does not belong to this graph");
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  Node& node_at(std::int32_t i) { return nodes_[static_cast<std::size_t>(i)]; }

 private:
  void accumulate(std::int32_t id, const Tensor<Scalar>& g) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Tensor<Scalar>::zeros(n.value.dims());
    n.grad.array() += g.array();
  }

  void add_grad(std::int32_t id, const Tensor<Scalar>& g) { accumulate(id, g); }

  Node& parent(const Node& n, bool second = false) {
    return nodes_[static_cast<std::size_t>(second ? n.b : n.a)];
  }

  void propagate(Node& n);

  std::vector<Node> nodes_;
  bool training_ = false;
  Rng* dropout_rng_ = nullptr;
};

namespace detail {

template <typename Scalar>
void check_same_graph(Var<Scalar> a, Var<Scalar> b) {
  if (a.graph != b.graph) throw ContractError("operands belong to different graphs");
}

inline bool is_scalar_dims(const std::vector<Index>& d) {
  Index n = 1;
  for (Index x : d) n *= x;
  return n == 1;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Op constructors (forward pass). Each validates shapes, computes the value
// and appends one tape node.
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul_impl(Var<Scalar> a, Var<Scalar> b, bool transpose_b) {
  detail::check_same_graph(a, b);
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  const Tensor<Scalar>& tb = g.value(b);
  const char* name = transpose_b ? "matmul_nt" : "matmul";

  auto inner_of_b = [&](Index r) { return transpose_b ? tb.dim(r - 1) : tb.dim(r - 2); };
  auto cols_of_b = [&](Index r) { return transpose_b ? tb.dim(r - 2) : tb.dim(r - 1); };

  Tensor<Scalar> out;
  if (ta.rank() == 2 && tb.rank() == 2) {
    if (ta.dim(1) != inner_of_b(2)) {
      throw ShapeError(std::string(name) + ": inner dims disagree, " + ta.shape_string() + " vs " +
                       tb.shape_string());
    }
    out = Tensor<Scalar>::zeros({ta.dim(0), cols_of_b(2)});
    if (transpose_b) {
      out.mat().noalias() = ta.mat() * tb.mat().transpose();
    } else {
      out.mat().noalias() = ta.mat() * tb.mat();
    }
  } else if (ta.rank() == 3 && tb.rank() == 3) {
    if (ta.dim(0) != tb.dim(0) || ta.dim(2) != inner_of_b(3)) {
      throw ShapeError(std::string(name) + ": batched shapes disagree, " + ta.shape_string() +
                       " vs " + tb.shape_string());
    }
    out = Tensor<Scalar>::zeros({ta.dim(0), ta.dim(1), cols_of_b(3)});
    for (Index p = 0; p < ta.dim(0); ++p) {
      if (transpose_b) {
        out.mat(p).noalias() = ta.mat(p) * tb.mat(p).transpose();
      } else {
        out.mat(p).noalias() = ta.mat(p) * tb.mat(p);
      }
    }
  } else if (ta.rank() == 3 && tb.rank() == 2 && !transpose_b) {
    // Apply one matrix to every row of every slice.
    if (ta.dim(2) != tb.dim(0)) {
      throw ShapeError(std::string(name) + ": inner dims disagree, " + ta.shape_string() + " vs " +
                       tb.shape_string());
    }
    out = Tensor<Scalar>::zeros({ta.dim(0), ta.dim(1), tb.dim(1)});
    Eigen::Map<const MatrixRM<Scalar>> flat(ta.data(), ta.dim(0) * ta.dim(1), ta.dim(2));
    Eigen::Map<MatrixRM<Scalar>> oflat(out.data(), out.dim(0) * out.dim(1), out.dim(2));
    oflat.noalias() = flat * tb.mat();
  } else {
    throw ShapeError(std::string(name) + ": unsupported ranks " + ta.shape_string() + " and " +
                     tb.shape_string());
  }
  bool rg = g.node(a).requires_grad || g.node(b).requires_grad;
  return g.push(transpose_b ? OpKind::kMatmulNT : OpKind::kMatmul, a.id, b.id, std::move(out), rg);
}

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  return matmul_impl(a, b, false);
}

// a · bᵀ
template <typename Scalar>
Var<Scalar> matmul_nt(Var<Scalar> a, Var<Scalar> b) {
  return matmul_impl(a, b, true);
}

template <typename Scalar>
Var<Scalar> binary_pointwise(OpKind kind, Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_graph(a, b);
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  const Tensor<Scalar>& tb = g.value(b);
  const bool a_scalar = ta.size() == 1;
  const bool b_scalar = tb.size() == 1;

  Tensor<Scalar> out;
  if (ta.same_shape(tb)) {
    out = Tensor<Scalar>::zeros(ta.dims());
    switch (kind) {
      case OpKind::kAdd: out.array() = ta.array() + tb.array(); break;
      case OpKind::kSub: out.array() = ta.array() - tb.array(); break;
      case OpKind::kMul: out.array() = ta.array() * tb.array(); break;
      case OpKind::kDiv: out.array() = ta.array() / tb.array(); break;
      default: throw ContractError("not a binary pointwise op");
    }
  } else if ((kind == OpKind::kMul || kind == OpKind::kDiv) && (a_scalar || b_scalar)) {
    // Single-element broadcast; for div only the divisor may broadcast.
    if (kind == OpKind::kDiv && !b_scalar) {
      throw ShapeError("div: only a single-element divisor may broadcast");
    }
    if (a_scalar) {
      out = Tensor<Scalar>::zeros(tb.dims());
      out.array() = ta(0) * tb.array();
    } else {
      out = Tensor<Scalar>::zeros(ta.dims());
      out.array() = kind == OpKind::kMul ? (ta.array() * tb(0)).eval()
                                         : (ta.array() / tb(0)).eval();
    }
  } else {
    throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + ta.shape_string() +
                     " vs " + tb.shape_string());
  }
  bool rg = g.node(a).requires_grad || g.node(b).requires_grad;
  return g.push(kind, a.id, b.id, std::move(out), rg);
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  return binary_pointwise(OpKind::kAdd, a, b);
}
template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  return binary_pointwise(OpKind::kSub, a, b);
}
template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  return binary_pointwise(OpKind::kMul, a, b);
}
template <typename Scalar>
Var<Scalar> div(Var<Scalar> a, Var<Scalar> b) {
  return binary_pointwise(OpKind::kDiv, a, b);
}

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(Var<Scalar> a, Var<Scalar> b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(Var<Scalar> a, Var<Scalar> b) { return mul(a, b); }

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar c) {
  Graph<Scalar>& g = *a.graph;
  Tensor<Scalar> out = Tensor<Scalar>::zeros(g.value(a).dims());
  out.array() = g.value(a).array() * c;
  Var<Scalar> v = g.push(OpKind::kScale, a.id, -1, std::move(out), g.node(a).requires_grad);
  g.node(v).c = c;
  return v;
}

template <typename Scalar>
Var<Scalar> unary_pointwise(OpKind kind, Var<Scalar> a) {
  Graph<Scalar>& g = *a.graph;
  Tensor<Scalar> out = Tensor<Scalar>::zeros(g.value(a).dims());
  switch (kind) {
    case OpKind::kTanh: out.array() = g.value(a).array().tanh(); break;
    case OpKind::kSigmoid:
      out.array() = Scalar(1) / (Scalar(1) + (-g.value(a).array()).exp());
      break;
    case OpKind::kExp: out.array() = g.value(a).array().exp(); break;
    default: throw ContractError("not a unary pointwise op");
  }
  return g.push(kind, a.id, -1, std::move(out), g.node(a).requires_grad);
}

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> a) {
  return unary_pointwise(OpKind::kTanh, a);
}
template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  return unary_pointwise(OpKind::kSigmoid, a);
}
template <typename Scalar>
Var<Scalar> exp(Var<Scalar> a) {
  return unary_pointwise(OpKind::kExp, a);
}

template <typename Scalar>
Var<Scalar> clamp_min(Var<Scalar> a, Scalar floor) {
  Graph<Scalar>& g = *a.graph;
  Tensor<Scalar> out = Tensor<Scalar>::zeros(g.value(a).dims());
  out.array() = g.value(a).array().max(floor);
  Var<Scalar> v = g.push(OpKind::kClampMin, a.id, -1, std::move(out), g.node(a).requires_grad);
  g.node(v).c = floor;
  return v;
}

// Stable softmax along the last dimension (row max subtracted; the output is
// invariant to that shift). Rank 1 is treated as a single row.
template <typename Scalar>
Var<Scalar> softmax_lastdim(Var<Scalar> a) {
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  const Index cols = ta.dim(ta.rank() - 1);
  const Index rows = ta.size() / cols;
  Tensor<Scalar> out = Tensor<Scalar>::zeros(ta.dims());
  Eigen::Map<const MatrixRM<Scalar>> in(ta.data(), rows, cols);
  Eigen::Map<MatrixRM<Scalar>> o(out.data(), rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const Scalar m = in.row(r).maxCoeff();
    o.row(r) = (in.row(r).array() - m).exp();
    o.row(r) /= o.row(r).sum();
  }
  return g.push(OpKind::kSoftmaxLastDim, a.id, -1, std::move(out), g.node(a).requires_grad);
}

// Inverted dropout on the graph's training rng; a no-op node is never created
// in evaluation mode, so verification paths are untouched by the rate.
template <typename Scalar>
Var<Scalar> dropout(Var<Scalar> a, Scalar rate) {
  Graph<Scalar>& g = *a.graph;
  if (!g.training() || rate <= Scalar(0)) return a;
  if (rate >= Scalar(1)) throw ContractError("dropout rate must be < 1");
  if (g.dropout_rng() == nullptr) throw ContractError("training graph has no dropout rng");
  const Tensor<Scalar>& ta = g.value(a);
  Tensor<Scalar> mask = Tensor<Scalar>::zeros(ta.dims());
  const Scalar keep_scale = Scalar(1) / (Scalar(1) - rate);
  for (Index i = 0; i < mask.size(); ++i) {
    mask(i) = g.dropout_rng()->uniform() < static_cast<double>(rate) ? Scalar(0) : keep_scale;
  }
  Tensor<Scalar> out = Tensor<Scalar>::zeros(ta.dims());
  out.array() = ta.array() * mask.array();
  Var<Scalar> v = g.push(OpKind::kDropout, a.id, -1, std::move(out), g.node(a).requires_grad);
  g.node(v).saved = std::move(mask);
  return v;
}

template <typename Scalar>
Var<Scalar> mean_all(Var<Scalar> a) {
  Graph<Scalar>& g = *a.graph;
  Tensor<Scalar> out({1});
  out(0) = g.value(a).array().sum() / static_cast<Scalar>(g.value(a).size());
  return g.push(OpKind::kMeanAll, a.id, -1, std::move(out), g.node(a).requires_grad);
}

template <typename Scalar>
Var<Scalar> sum_all(Var<Scalar> a) {
  Graph<Scalar>& g = *a.graph;
  Tensor<Scalar> out({1});
  out(0) = g.value(a).array().sum();
  return g.push(OpKind::kSumAll, a.id, -1, std::move(out), g.node(a).requires_grad);
}

namespace detail {

// Column sums taken in ascending value order: the result depends only on the
// multiset of addends, so a row permutation cannot move the mean by an ulp.
template <typename Scalar>
void ordered_column_mean(const Scalar* data, Index rows, Index cols, Scalar* out) {
  std::vector<Scalar> column(static_cast<std::size_t>(rows));
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) column[static_cast<std::size_t>(r)] = data[r * cols + c];
    std::sort(column.begin(), column.end());
    Scalar s = Scalar(0);
    for (Scalar x : column) s += x;
    out[c] = s / static_cast<Scalar>(rows);
  }
}

}  // namespace detail

// Mean over rows: R×C → 1×C, or per-slice for rank 3 (B×R×C → B×C).
template <typename Scalar>
Var<Scalar> mean_rows(Var<Scalar> a) {
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  Tensor<Scalar> out;
  if (ta.rank() == 2) {
    out = Tensor<Scalar>::zeros({1, ta.dim(1)});
    detail::ordered_column_mean(ta.data(), ta.dim(0), ta.dim(1), out.data());
  } else if (ta.rank() == 3) {
    out = Tensor<Scalar>::zeros({ta.dim(0), ta.dim(2)});
    for (Index b = 0; b < ta.dim(0); ++b) {
      detail::ordered_column_mean(ta.data() + b * ta.dim(1) * ta.dim(2), ta.dim(1), ta.dim(2),
                                  out.data() + b * ta.dim(2));
    }
  } else {
    throw ShapeError("mean_rows needs rank 2 or 3");
  }
  return g.push(OpKind::kMeanRows, a.id, -1, std::move(out), g.node(a).requires_grad);
}

template <typename Scalar>
Var<Scalar> row_sum(Var<Scalar> a) {
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  if (ta.rank() != 2) throw ShapeError("row_sum needs rank 2");
  Tensor<Scalar> out = Tensor<Scalar>::zeros({ta.dim(0), Index(1)});
  out.mat().col(0) = ta.mat().rowwise().sum();
  return g.push(OpKind::kRowSum, a.id, -1, std::move(out), g.node(a).requires_grad);
}

template <typename Scalar>
Var<Scalar> row_max(Var<Scalar> a) {
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  if (ta.rank() != 2) throw ShapeError("row_max needs rank 2");
  Tensor<Scalar> out = Tensor<Scalar>::zeros({ta.dim(0), Index(1)});
  std::vector<Index> argmax(static_cast<std::size_t>(ta.dim(0)));
  for (Index r = 0; r < ta.dim(0); ++r) {
    Index best = 0;
    for (Index c = 1; c < ta.dim(1); ++c) {
      if (ta(r, c) > ta(r, best)) best = c;
    }
    argmax[static_cast<std::size_t>(r)] = best;
    out(r, 0) = ta(r, best);
  }
  Var<Scalar> v = g.push(OpKind::kRowMax, a.id, -1, std::move(out), g.node(a).requires_grad);
  g.node(v).idx = std::move(argmax);
  return v;
}

// Divide each row of a R×C tensor by the matching entry of a R×1 tensor.
template <typename Scalar>
Var<Scalar> div_by_col(Var<Scalar> a, Var<Scalar> d) {
  detail::check_same_graph(a, d);
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  const Tensor<Scalar>& td = g.value(d);
  if (ta.rank() != 2 || td.rank() != 2 || td.dim(1) != 1 || td.dim(0) != ta.dim(0)) {
    throw ShapeError("div_by_col: need R×C and R×1, got " + ta.shape_string() + " and " +
                     td.shape_string());
  }
  Tensor<Scalar> out = Tensor<Scalar>::zeros(ta.dims());
  for (Index r = 0; r < ta.dim(0); ++r) out.mat().row(r) = ta.mat().row(r) / td(r, 0);
  bool rg = g.node(a).requires_grad || g.node(d).requires_grad;
  return g.push(OpKind::kDivByCol, a.id, d.id, std::move(out), rg);
}

// R×1 (or length-R) column replicated to R×C.
template <typename Scalar>
Var<Scalar> broadcast_col(Var<Scalar> a, Index cols) {
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  const bool col_vec = (ta.rank() == 2 && ta.dim(1) == 1) || ta.rank() == 1;
  if (!col_vec) throw ShapeError("broadcast_col needs R×1 or rank-1 input");
  const Index rows = ta.rank() == 1 ? ta.dim(0) : ta.dim(0);
  Tensor<Scalar> out = Tensor<Scalar>::zeros({rows, cols});
  for (Index r = 0; r < rows; ++r) out.mat().row(r).setConstant(ta(r));
  return g.push(OpKind::kBroadcastCol, a.id, -1, std::move(out), g.node(a).requires_grad);
}

// X + b with b broadcast across rows (and slices when X is rank 3).
template <typename Scalar>
Var<Scalar> add_row_vec(Var<Scalar> x, Var<Scalar> b) {
  detail::check_same_graph(x, b);
  Graph<Scalar>& g = *x.graph;
  const Tensor<Scalar>& tx = g.value(x);
  const Tensor<Scalar>& tb = g.value(b);
  const Index cols = tx.dim(tx.rank() - 1);
  if (tb.size() != cols) {
    throw ShapeError("add_row_vec: bias length " + tb.shape_string() + " does not match " +
                     tx.shape_string());
  }
  Tensor<Scalar> out = Tensor<Scalar>::zeros(tx.dims());
  Eigen::Map<const MatrixRM<Scalar>> xin(tx.data(), tx.size() / cols, cols);
  Eigen::Map<MatrixRM<Scalar>> o(out.data(), tx.size() / cols, cols);
  Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> bias(tb.data(), cols);
  o = xin.rowwise() + bias;
  bool rg = g.node(x).requires_grad || g.node(b).requires_grad;
  return g.push(OpKind::kAddRowVec, x.id, b.id, std::move(out), rg);
}

template <typename Scalar>
Var<Scalar> concat_rows(Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_graph(a, b);
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  const Tensor<Scalar>& tb = g.value(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(1)) {
    throw ShapeError("concat_rows: incompatible " + ta.shape_string() + " and " + tb.shape_string());
  }
  Tensor<Scalar> out = Tensor<Scalar>::zeros({ta.dim(0) + tb.dim(0), ta.dim(1)});
  out.mat().topRows(ta.dim(0)) = ta.mat();
  out.mat().bottomRows(tb.dim(0)) = tb.mat();
  bool rg = g.node(a).requires_grad || g.node(b).requires_grad;
  return g.push(OpKind::kConcatRows, a.id, b.id, std::move(out), rg);
}

template <typename Scalar>
Var<Scalar> concat_cols(Var<Scalar> a, Var<Scalar> b) {
  detail::check_same_graph(a, b);
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  const Tensor<Scalar>& tb = g.value(b);
  if (ta.rank() != tb.rank() || ta.rank() < 2) {
    throw ShapeError("concat_cols: incompatible ranks");
  }
  for (Index i = 0; i + 1 < ta.rank(); ++i) {
    if (ta.dim(i) != tb.dim(i)) {
      throw ShapeError("concat_cols: incompatible " + ta.shape_string() + " and " +
                       tb.shape_string());
    }
  }
  const Index ca = ta.dim(ta.rank() - 1), cb = tb.dim(tb.rank() - 1);
  const Index rows = ta.size() / ca;
  std::vector<Index> dims = ta.dims();
  dims.back() = ca + cb;
  Tensor<Scalar> out = Tensor<Scalar>::zeros(dims);
  Eigen::Map<const MatrixRM<Scalar>> ma(ta.data(), rows, ca);
  Eigen::Map<const MatrixRM<Scalar>> mb(tb.data(), rows, cb);
  Eigen::Map<MatrixRM<Scalar>> o(out.data(), rows, ca + cb);
  o.leftCols(ca) = ma;
  o.rightCols(cb) = mb;
  bool rg = g.node(a).requires_grad || g.node(b).requires_grad;
  return g.push(OpKind::kConcatCols, a.id, b.id, std::move(out), rg);
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> a, Index start, Index count) {
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  if (ta.rank() != 2) throw ShapeError("slice_rows needs rank 2");
  if (start < 0 || count < 1 || start + count > ta.dim(0)) {
    throw ShapeError("slice_rows: range out of bounds");
  }
  Tensor<Scalar> out = Tensor<Scalar>::zeros({count, ta.dim(1)});
  out.mat() = ta.mat().middleRows(start, count);
  Var<Scalar> v = g.push(OpKind::kSliceRows, a.id, -1, std::move(out), g.node(a).requires_grad);
  g.node(v).i0 = start;
  g.node(v).i1 = count;
  return v;
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Index start, Index count) {
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  if (ta.rank() < 2) throw ShapeError("slice_cols needs rank 2 or 3");
  const Index cols = ta.dim(ta.rank() - 1);
  if (start < 0 || count < 1 || start + count > cols) {
    throw ShapeError("slice_cols: range out of bounds");
  }
  std::vector<Index> dims = ta.dims();
  dims.back() = count;
  Tensor<Scalar> out = Tensor<Scalar>::zeros(dims);
  Eigen::Map<const MatrixRM<Scalar>> in(ta.data(), ta.size() / cols, cols);
  Eigen::Map<MatrixRM<Scalar>> o(out.data(), ta.size() / cols, count);
  o = in.middleCols(start, count);
  Var<Scalar> v = g.push(OpKind::kSliceCols, a.id, -1, std::move(out), g.node(a).requires_grad);
  g.node(v).i0 = start;
  g.node(v).i1 = count;
  return v;
}

// One rank-2 slice of a rank-3 tensor.
template <typename Scalar>
Var<Scalar> slice_frame(Var<Scalar> a, Index frame) {
  Graph<Scalar>& g = *a.graph;
  const Tensor<Scalar>& ta = g.value(a);
  if (ta.rank() != 3) throw ShapeError("slice_frame needs rank 3");
  if (frame < 0 || frame >= ta.dim(0)) throw ShapeError("slice_frame: index out of range");
  Tensor<Scalar> out = Tensor<Scalar>::zeros({ta.dim(1), ta.dim(2)});
  out.mat() = ta.mat(frame);
  Var<Scalar> v = g.push(OpKind::kSliceFrame, a.id, -1, std::move(out), g.node(a).requires_grad);
  g.node(v).i0 = frame;
  return v;
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> a, std::vector<Index> dims) {
  Graph<Scalar>& g = *a.graph;
  Tensor<Scalar> out(std::move(dims));
  if (out.size() != g.value(a).size()) {
    throw ShapeError("reshape: element count changes from " + g.value(a).shape_string());
  }
  out.array() = g.value(a).array();
  return g.push(OpKind::kReshape, a.id, -1, std::move(out), g.node(a).requires_grad);
}

// −log softmax(logits)[label], fused for stability; logits are 1×C or length C.
template <typename Scalar>
Var<Scalar> cross_entropy_logits(Var<Scalar> logits, Index label) {
  Graph<Scalar>& g = *logits.graph;
  const Tensor<Scalar>& tl = g.value(logits);
  const Index c = tl.size();
  if (tl.rank() > 2 || (tl.rank() == 2 && tl.dim(0) != 1)) {
    throw ShapeError("cross_entropy_logits needs a single row of logits");
  }
  if (label < 0 || label >= c) {
    throw ContractError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(c) + " classes");
  }
  const Scalar m = tl.array().maxCoeff();
  Tensor<Scalar> probs = Tensor<Scalar>::zeros(tl.dims());
  probs.array() = (tl.array() - m).exp();
  const Scalar z = probs.array().sum();
  probs.array() /= z;
  Tensor<Scalar> out({1});
  out(0) = std::log(z) + m - tl(label);
  Var<Scalar> v =
      g.push(OpKind::kCrossEntropyLogits, logits.id, -1, std::move(out), g.node(logits).requires_grad);
  g.node(v).saved = std::move(probs);
  g.node(v).i0 = label;
  return v;
}

// ---------------------------------------------------------------------------
// Backward rules.
// ---------------------------------------------------------------------------

template <typename Scalar>
void Graph<Scalar>::propagate(Node& n) {
  const Tensor<Scalar>& gr = n.grad;
  auto want = [&](std::int32_t id) {
    return id >= 0 && nodes_[static_cast<std::size_t>(id)].requires_grad;
  };
  auto ensure = [&](std::int32_t id) -> Tensor<Scalar>& {
    Node& p = nodes_[static_cast<std::size_t>(id)];
    if (p.grad.size() == 0) p.grad = Tensor<Scalar>::zeros(p.value.dims());
    return p.grad;
  };

  switch (n.kind) {
    case OpKind::kLeaf:
    case OpKind::kConstant:
      break;

    case OpKind::kMatmul:
    case OpKind::kMatmulNT: {
      const bool nt = n.kind == OpKind::kMatmulNT;
      const Tensor<Scalar>& va = parent(n).value;
      const Tensor<Scalar>& vb = parent(n, true).value;
      if (va.rank() == 2 && vb.rank() == 2) {
        if (want(n.a)) {
          auto& ga = ensure(n.a);
          if (nt) {
            ga.mat().noalias() += gr.mat() * vb.mat();
          } else {
            ga.mat().noalias() += gr.mat() * vb.mat().transpose();
          }
        }
        if (want(n.b)) {
          auto& gb = ensure(n.b);
          if (nt) {
            gb.mat().noalias() += gr.mat().transpose() * va.mat();
          } else {
            gb.mat().noalias() += va.mat().transpose() * gr.mat();
          }
        }
      } else if (va.rank() == 3 && vb.rank() == 3) {
        for (Index p = 0; p < va.dim(0); ++p) {
          if (want(n.a)) {
            auto& ga = ensure(n.a);
            if (nt) {
              ga.mat(p).noalias() += gr.mat(p) * vb.mat(p);
            } else {
              ga.mat(p).noalias() += gr.mat(p) * vb.mat(p).transpose();
            }
          }
          if (want(n.b)) {
            auto& gb = ensure(n.b);
            if (nt) {
              gb.mat(p).noalias() += gr.mat(p).transpose() * va.mat(p);
            } else {
              gb.mat(p).noalias() += va.mat(p).transpose() * gr.mat(p);
            }
          }
        }
      } else {  // rank-3 × rank-2
        const Index rows = va.dim(0) * va.dim(1);
        Eigen::Map<const MatrixRM<Scalar>> aflat(va.data(), rows, va.dim(2));
        Eigen::Map<const MatrixRM<Scalar>> gflat(gr.data(), rows, gr.dim(2));
        if (want(n.a)) {
          auto& ga = ensure(n.a);
          Eigen::Map<MatrixRM<Scalar>> gaflat(ga.data(), rows, va.dim(2));
          gaflat.noalias() += gflat * vb.mat().transpose();
        }
        if (want(n.b)) {
          ensure(n.b).mat().noalias() += aflat.transpose() * gflat;
        }
      }
      break;
    }

    case OpKind::kAdd:
    case OpKind::kSub: {
      if (want(n.a)) ensure(n.a).array() += gr.array();
      if (want(n.b)) {
        if (n.kind == OpKind::kAdd) {
          ensure(n.b).array() += gr.array();
        } else {
          ensure(n.b).array() -= gr.array();
        }
      }
      break;
    }

    case OpKind::kMul: {
      const Tensor<Scalar>& va = parent(n).value;
      const Tensor<Scalar>& vb = parent(n, true).value;
      if (va.same_shape(vb)) {
        if (want(n.a)) ensure(n.a).array() += gr.array() * vb.array();
        if (want(n.b)) ensure(n.b).array() += gr.array() * va.array();
      } else if (va.size() == 1) {
        if (want(n.a)) ensure(n.a)(0) += (gr.array() * vb.array()).sum();
        if (want(n.b)) ensure(n.b).array() += gr.array() * va(0);
      } else {
        if (want(n.a)) ensure(n.a).array() += gr.array() * vb(0);
        if (want(n.b)) ensure(n.b)(0) += (gr.array() * va.array()).sum();
      }
      break;
    }

    case OpKind::kDiv: {
      const Tensor<Scalar>& va = parent(n).value;
      const Tensor<Scalar>& vb = parent(n, true).value;
      if (va.same_shape(vb)) {
        if (want(n.a)) ensure(n.a).array() += gr.array() / vb.array();
        if (want(n.b)) {
          ensure(n.b).array() -= gr.array() * va.array() / (vb.array() * vb.array());
        }
      } else {  // scalar divisor
        if (want(n.a)) ensure(n.a).array() += gr.array() / vb(0);
        if (want(n.b)) ensure(n.b)(0) -= (gr.array() * va.array()).sum() / (vb(0) * vb(0));
      }
      break;
    }

    case OpKind::kScale:
      if (want(n.a)) ensure(n.a).array() += gr.array() * n.c;
      break;

    case OpKind::kTanh:
      if (want(n.a)) {
        ensure(n.a).array() += gr.array() * (Scalar(1) - n.value.array() * n.value.array());
      }
      break;

    case OpKind::kSigmoid:
      if (want(n.a)) {
        ensure(n.a).array() += gr.array() * n.value.array() * (Scalar(1) - n.value.array());
      }
      break;

    case OpKind::kExp:
      if (want(n.a)) ensure(n.a).array() += gr.array() * n.value.array();
      break;

    case OpKind::kClampMin:
      if (want(n.a)) {
        const Tensor<Scalar>& va = parent(n).value;
        ensure(n.a).array() +=
            gr.array() * (va.array() > n.c).template cast<Scalar>();
      }
      break;

    case OpKind::kSoftmaxLastDim: {
      if (!want(n.a)) break;
      auto& ga = ensure(n.a);
      const Index cols = n.value.dim(n.value.rank() - 1);
      const Index rows = n.value.size() / cols;
      Eigen::Map<const MatrixRM<Scalar>> y(n.value.data(), rows, cols);
      Eigen::Map<const MatrixRM<Scalar>> go(gr.data(), rows, cols);
      Eigen::Map<MatrixRM<Scalar>> gi(ga.data(), rows, cols);
      for (Index r = 0; r < rows; ++r) {
        const Scalar dot = (go.row(r).array() * y.row(r).array()).sum();
        gi.row(r).array() += y.row(r).array() * (go.row(r).array() - dot);
      }
      break;
    }

    case OpKind::kDropout:
      if (want(n.a)) ensure(n.a).array() += gr.array() * n.saved.array();
      break;

    case OpKind::kMeanAll:
      if (want(n.a)) {
        auto& ga = ensure(n.a);
        ga.array() += gr(0) / static_cast<Scalar>(ga.size());
      }
      break;

    case OpKind::kSumAll:
      if (want(n.a)) ensure(n.a).array() += gr(0);
      break;

    case OpKind::kMeanRows: {
      if (!want(n.a)) break;
      auto& ga = ensure(n.a);
      const Tensor<Scalar>& va = parent(n).value;
      if (va.rank() == 2) {
        const Scalar w = Scalar(1) / static_cast<Scalar>(va.dim(0));
        for (Index r = 0; r < va.dim(0); ++r) ga.mat().row(r) += gr.mat().row(0) * w;
      } else {
        const Scalar w = Scalar(1) / static_cast<Scalar>(va.dim(1));
        for (Index b = 0; b < va.dim(0); ++b) {
          for (Index r = 0; r < va.dim(1); ++r) ga.mat(b).row(r) += gr.mat().row(b) * w;
        }
      }
      break;
    }

    case OpKind::kRowSum: {
      if (!want(n.a)) break;
      auto& ga = ensure(n.a);
      for (Index r = 0; r < ga.dim(0); ++r) ga.mat().row(r).array() += gr(r, 0);
      break;
    }

    case OpKind::kRowMax: {
      if (!want(n.a)) break;
      auto& ga = ensure(n.a);
      for (Index r = 0; r < ga.dim(0); ++r) {
        ga(r, n.idx[static_cast<std::size_t>(r)]) += gr(r, 0);
      }
      break;
    }

    case OpKind::kDivByCol: {
      const Tensor<Scalar>& va = parent(n).value;
      const Tensor<Scalar>& vd = parent(n, true).value;
      if (want(n.a)) {
        auto& ga = ensure(n.a);
        for (Index r = 0; r < va.dim(0); ++r) ga.mat().row(r) += gr.mat().row(r) / vd(r, 0);
      }
      if (want(n.b)) {
        auto& gd = ensure(n.b);
        for (Index r = 0; r < va.dim(0); ++r) {
          gd(r, 0) -= (gr.mat().row(r).array() * va.mat().row(r).array()).sum() /
                      (vd(r, 0) * vd(r, 0));
        }
      }
      break;
    }

    case OpKind::kBroadcastCol: {
      if (!want(n.a)) break;
      auto& ga = ensure(n.a);
      for (Index r = 0; r < n.value.dim(0); ++r) ga(r) += gr.mat().row(r).sum();
      break;
    }

    case OpKind::kAddRowVec: {
      if (want(n.a)) ensure(n.a).array() += gr.array();
      if (want(n.b)) {
        auto& gb = ensure(n.b);
        const Index cols = gb.size();
        Eigen::Map<const MatrixRM<Scalar>> go(gr.data(), gr.size() / cols, cols);
        Eigen::Map<Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> acc(gb.data(), cols);
        acc += go.colwise().sum();
      }
      break;
    }

    case OpKind::kConcatRows: {
      const Index ra = parent(n).value.dim(0);
      if (want(n.a)) ensure(n.a).mat() += gr.mat().topRows(ra);
      if (want(n.b)) ensure(n.b).mat() += gr.mat().bottomRows(gr.dim(0) - ra);
      break;
    }

    case OpKind::kConcatCols: {
      const Tensor<Scalar>& va = parent(n).value;
      const Index ca = va.dim(va.rank() - 1);
      const Index cb = n.value.dim(n.value.rank() - 1) - ca;
      const Index rows = n.value.size() / (ca + cb);
      Eigen::Map<const MatrixRM<Scalar>> go(gr.data(), rows, ca + cb);
      if (want(n.a)) {
        auto& ga = ensure(n.a);
        Eigen::Map<MatrixRM<Scalar>> m(ga.data(), rows, ca);
        m += go.leftCols(ca);
      }
      if (want(n.b)) {
        auto& gb = ensure(n.b);
        Eigen::Map<MatrixRM<Scalar>> m(gb.data(), rows, cb);
        m += go.rightCols(cb);
      }
      break;
    }

    case OpKind::kSliceRows:
      if (want(n.a)) ensure(n.a).mat().middleRows(n.i0, n.i1) += gr.mat();
      break;

    case OpKind::kSliceCols: {
      if (!want(n.a)) break;
      auto& ga = ensure(n.a);
      const Index cols = ga.dim(ga.rank() - 1);
      Eigen::Map<MatrixRM<Scalar>> m(ga.data(), ga.size() / cols, cols);
      Eigen::Map<const MatrixRM<Scalar>> go(gr.data(), ga.size() / cols, n.i1);
      m.middleCols(n.i0, n.i1) += go;
      break;
    }

    case OpKind::kSliceFrame:
      if (want(n.a)) ensure(n.a).mat(n.i0) += gr.mat();
      break;

    case OpKind::kReshape: {
      if (!want(n.a)) break;
      ensure(n.a).array() += gr.array();
      break;
    }

    case OpKind::kCrossEntropyLogits: {
      if (!want(n.a)) break;
      auto& ga = ensure(n.a);
      ga.array() += gr(0) * n.saved.array();
      ga(n.i0) -= gr(0);
      break;
    }
  }
}

}  // namespace qatiger
