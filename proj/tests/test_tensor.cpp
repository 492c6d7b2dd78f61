#include "qatiger/tensor.hpp"

#include <gtest/gtest.h>

#include "qatiger/random.hpp"

namespace qatiger {
namespace {

TEST(Tensor, DimsAndData) {
  Tensord t({2, 3});
  EXPECT_EQ(t.rank(), 2);
  EXPECT_EQ(t.size(), 6);
  t(1, 2) = 5.0;
  EXPECT_EQ(t(5), 5.0);  // row-major layout

  Tensord r3({2, 2, 2});
  r3(1, 0, 1) = 7.0;
  EXPECT_EQ(r3(5), 7.0);
}

TEST(Tensor, RejectsBadDims) {
  EXPECT_THROW(Tensord(std::vector<Index>{}), ShapeError);
  EXPECT_THROW(Tensord({2, 0}), ShapeError);
  EXPECT_THROW(Tensord({1, 1, 1, 1}), ShapeError);
  EXPECT_THROW(Tensord({2, 2}, {1.0, 2.0, 3.0}), ShapeError);
}

TEST(Tensor, DataLengthMatchesDimsProduct) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Index> dims;
    const int rank = rng.range(1, 3);
    for (int i = 0; i < rank; ++i) dims.push_back(rng.range(1, 5));
    Tensord t(dims);
    Index product = 1;
    for (Index d : dims) product *= d;
    EXPECT_EQ(t.size(), product);
  }
}

TEST(Tensor, MatrixViews) {
  Tensord t({2, 2}, {1.0, 2.0, 3.0, 4.0});
  EXPECT_EQ(t.mat()(0, 1), 2.0);
  EXPECT_EQ(t.mat()(1, 0), 3.0);

  Tensord p({2, 2, 3});
  p(1, 1, 2) = 9.0;
  EXPECT_EQ(p.mat(1)(1, 2), 9.0);
  EXPECT_THROW(p.mat(), ShapeError);
  EXPECT_THROW(p.mat(2), ShapeError);
}

TEST(Tensor, FiniteCheck) {
  Tensord t({2});
  EXPECT_TRUE(t.all_finite());
  t(0) = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(t.all_finite());
}

TEST(Rng, DeterministicStreams) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.uniform(), b.uniform());

  Rng c(derive_seed(1, "x")), d(derive_seed(1, "y"));
  EXPECT_NE(c.uniform(), d.uniform());
}

TEST(Rng, NormalMoments) {
  Rng rng(3);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.02);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

}  // namespace
}  // namespace qatiger
