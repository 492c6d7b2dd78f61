// Dense row-major tensors of rank 1-3, the value type everything else builds on.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace qatiger {

using Index = Eigen::Index;

// Shape mismatches between operands, or malformed dims.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated preconditions that are not shape-related (bad labels, empty input, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values; tensors are required to stay finite after every op.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
class Tensor {
 public:
  using ArrayType = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;

  explicit Tensor(std::vector<Index> dims) : dims_(std::move(dims)) {
    validate_dims();
    data_ = ArrayType::Zero(size_from_dims());
  }

  Tensor(std::vector<Index> dims, std::vector<Scalar> values, bool requires_grad = false)
      : dims_(std::move(dims)), requires_grad_(requires_grad) {
    validate_dims();
    if (static_cast<Index>(values.size()) != size_from_dims()) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match dims product " + std::to_string(size_from_dims()));
    }
    data_ = Eigen::Map<const ArrayType>(values.data(), static_cast<Index>(values.size()));
  }

  static Tensor zeros(std::vector<Index> dims) { return Tensor(std::move(dims)); }

  static Tensor constant(std::vector<Index> dims, Scalar value) {
    Tensor t(std::move(dims));
    t.data_.setConstant(value);
    return t;
  }

  Index rank() const { return static_cast<Index>(dims_.size()); }
  Index dim(Index i) const { return dims_.at(static_cast<std::size_t>(i)); }
  const std::vector<Index>& dims() const { return dims_; }
  Index size() const { return data_.size(); }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool v) { requires_grad_ = v; }

  ArrayType& array() { return data_; }
  const ArrayType& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator()(Index i) { return data_(i); }
  Scalar operator()(Index i) const { return data_(i); }
  Scalar& operator()(Index i, Index j) { return data_(i * dims_[1] + j); }
  Scalar operator()(Index i, Index j) const { return data_(i * dims_[1] + j); }
  Scalar& operator()(Index i, Index j, Index k) {
    return data_((i * dims_[1] + j) * dims_[2] + k);
  }
  Scalar operator()(Index i, Index j, Index k) const {
    return data_((i * dims_[1] + j) * dims_[2] + k);
  }

  // Rank-2 view. Rank-1 tensors map as a single row so vector/matrix code can share paths.
  Eigen::Map<MatrixRM<Scalar>> mat() {
    if (rank() == 1) return {data_.data(), 1, dims_[0]};
    if (rank() == 2) return {data_.data(), dims_[0], dims_[1]};
    throw ShapeError("mat() needs rank 1 or 2, got rank " + std::to_string(rank()));
  }
  Eigen::Map<const MatrixRM<Scalar>> mat() const {
    if (rank() == 1) return {data_.data(), 1, dims_[0]};
    if (rank() == 2) return {data_.data(), dims_[0], dims_[1]};
    throw ShapeError("mat() needs rank 1 or 2, got rank " + std::to_string(rank()));
  }

  // One slice of a rank-3 tensor as a rows×cols matrix.
  Eigen::Map<MatrixRM<Scalar>> mat(Index slice) {
    check_slice(slice);
    return {data_.data() + slice * dims_[1] * dims_[2], dims_[1], dims_[2]};
  }
  Eigen::Map<const MatrixRM<Scalar>> mat(Index slice) const {
    check_slice(slice);
    return {data_.data() + slice * dims_[1] * dims_[2], dims_[1], dims_[2]};
  }

  bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

  bool all_finite() const { return data_.isFinite().all(); }

  std::string shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += "x";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

 private:
  Index size_from_dims() const {
    Index n = 1;
    for (Index d : dims_) n *= d;
    return n;
  }

  void validate_dims() const {
    if (dims_.empty() || dims_.size() > 3) {
      throw ShapeError("tensor rank must be 1..3, got " + std::to_string(dims_.size()));
    }
    for (Index d : dims_) {
      if (d <= 0) throw ShapeError("tensor dims must be positive");
    }
  }

  void check_slice(Index slice) const {
    if (rank() != 3) throw ShapeError("mat(slice) needs rank 3");
    if (slice < 0 || slice >= dims_[0]) throw ShapeError("slice index out of range");
  }

  std::vector<Index> dims_;
  ArrayType data_;
  bool requires_grad_ = false;
};

template <typename Scalar>
Scalar max_abs_diff(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
  return (a.array() - b.array()).abs().maxCoeff();
}

using Tensord = Tensor<double>;
using Tensorf = Tensor<float>;

}  // namespace qatiger
