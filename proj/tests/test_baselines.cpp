#include "qatiger/baselines.hpp"

#include <gtest/gtest.h>

#include "qatiger/random.hpp"

namespace qatiger {
namespace {

TEST(UniformPool, ConstantSequenceReturnsTheConstant) {
  Graph<double> g;
  Tensord x({4, 3});
  for (Index t = 0; t < 4; ++t) {
    x(t, 0) = 1.5;
    x(t, 1) = -2.0;
    x(t, 2) = 0.25;
  }
  auto out = uniform_pool(g.constant(x));
  EXPECT_EQ(g.value(out)(0, 0), 1.5);
  EXPECT_EQ(g.value(out)(0, 1), -2.0);
  EXPECT_EQ(g.value(out)(0, 2), 0.25);
}

TEST(UniformPool, ExactlyInvariantUnderAnyPermutation) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Index t = rng.range(2, 12);
    Tensord x = rng.uniform_tensor<double>({t, 5}, -100.0, 100.0);
    std::vector<Index> perm(static_cast<std::size_t>(t));
    for (Index i = 0; i < t; ++i) perm[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm);
    Tensord xp({t, 5});
    for (Index i = 0; i < t; ++i) xp.mat().row(i) = x.mat().row(perm[static_cast<std::size_t>(i)]);

    Graph<double> g;
    Tensord a = g.value(uniform_pool(g.constant(x)));
    Tensord b = g.value(uniform_pool(g.constant(xp)));
    EXPECT_EQ(max_abs_diff(a, b), 0.0);  // bitwise
  }
}

TEST(TopK, FullSelectionEqualsUniformMean) {
  Rng rng(2);
  Tensord x = rng.uniform_tensor<double>({6, 4}, -1.0, 1.0);
  Tensord qs = rng.uniform_tensor<double>({1, 4}, -1.0, 1.0);
  Graph<double> g;
  auto topk = top_k_pool(g.constant(x), g.constant(qs), 6);
  Tensord mean({1, 4});
  for (Index c = 0; c < 4; ++c) mean(0, c) = x.mat().col(c).mean();
  EXPECT_LT(max_abs_diff(g.value(topk), mean), 1e-14);
}

TEST(TopK, PicksTheAlignedFrame) {
  // One frame equals the question direction among orthogonal noise → K=1
  // returns exactly that frame.
  Tensord qs({1, 4}, {1.0, 0.0, 0.0, 0.0});
  Tensord x = Tensord::zeros({5, 4});
  x(0, 1) = 3.0;   // orthogonal to qs
  x(1, 2) = -2.0;  // orthogonal
  x(2, 0) = 2.0;   // aligned with qs
  x(3, 3) = 1.0;   // orthogonal
  x(4, 1) = -1.0;  // orthogonal
  Graph<double> g;
  auto out = top_k_pool(g.constant(x), g.constant(qs), 1);
  for (Index c = 0; c < 4; ++c) EXPECT_EQ(g.value(out)(0, c), x(2, c));
}

TEST(TopK, RejectsKAboveT) {
  Graph<double> g;
  Rng rng(3);
  auto x = g.constant(rng.uniform_tensor<double>({3, 4}, -1.0, 1.0));
  auto qs = g.constant(rng.uniform_tensor<double>({1, 4}, -1.0, 1.0));
  EXPECT_THROW(top_k_pool(x, qs, 4), ContractError);
  EXPECT_THROW(top_k_pool(x, qs, 0), ContractError);
}

TEST(FreeCenters, StayInUnitIntervalWithUnitPeaks) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    Graph<double> g;
    auto gen = init_gaussian_generator<double>(4, 3, derive_seed(4, "g", trial));
    auto pooled = g.constant(rng.uniform_tensor<double>({1, 4}, -3.0, 3.0));
    auto curves = generate_gaussians_free(bind(g, gen, false), pooled, 7);
    for (Index i = 0; i < 3; ++i) {
      EXPECT_GT(g.value(curves.mu)(0, i), 0.0);
      EXPECT_LT(g.value(curves.mu)(0, i), 1.0);
      EXPECT_EQ(g.value(curves.curves).mat().row(i).maxCoeff(), 1.0);
    }
  }
}

TEST(GaussianPools, SumAndRoutedAgreeWithDirectFormula) {
  Rng rng(5);
  Graph<double> g;
  Tensord x = rng.uniform_tensor<double>({4, 3}, -1.0, 1.0);
  Tensord curves = rng.uniform_tensor<double>({2, 4}, 0.0, 1.0);
  Tensord routing({1, 2}, {0.3, 0.7});

  auto xv = g.constant(x);
  auto cv = g.constant(curves);
  auto rv = g.constant(routing);

  Tensord expected_sum({1, 3});
  Tensord expected_routed({1, 3});
  for (Index i = 0; i < 2; ++i) {
    for (Index t = 0; t < 4; ++t) {
      for (Index c = 0; c < 3; ++c) {
        expected_sum(0, c) += curves(i, t) * x(t, c);
        expected_routed(0, c) += routing(0, i) * curves(i, t) * x(t, c);
      }
    }
  }
  EXPECT_LT(max_abs_diff(g.value(gaussian_sum_pool(xv, cv)), expected_sum), 1e-12);
  EXPECT_LT(max_abs_diff(g.value(gaussian_routed_pool(xv, cv, rv)), expected_routed), 1e-12);
}

TEST(Strategies, ParseRoundTrip) {
  for (PoolingStrategy s :
       {PoolingStrategy::kUniform, PoolingStrategy::kTopK, PoolingStrategy::kGaussian,
        PoolingStrategy::kWeightedGaussian, PoolingStrategy::kWeightedGaussianDisjoint,
        PoolingStrategy::kGaussianExperts}) {
    EXPECT_EQ(parse_pooling_strategy(to_string(s)), s);
  }
  EXPECT_THROW(parse_pooling_strategy("nearest"), ContractError);
}

}  // namespace
}  // namespace qatiger
