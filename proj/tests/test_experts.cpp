#include "qatiger/experts.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "naive_ref.hpp"
#include "qatiger/grad_check.hpp"

namespace qatiger {
namespace {

TEST(FixedCenters, ClosedFormValues) {
  auto two = init_fixed_centers<double>(2);
  EXPECT_DOUBLE_EQ(two.margin, 0.25);
  EXPECT_DOUBLE_EQ(two.centers(0), 0.25);
  EXPECT_DOUBLE_EQ(two.centers(1), 0.75);

  auto seven = init_fixed_centers<double>(7);
  EXPECT_EQ(seven.margin, 1.0 / 14.0);
  for (Index i = 0; i < 7; ++i) {
    EXPECT_EQ(seven.centers(i), static_cast<double>(2 * i + 1) / 14.0);
  }

  auto one = init_fixed_centers<double>(1);
  EXPECT_DOUBLE_EQ(one.centers(0), 0.5);
  EXPECT_DOUBLE_EQ(one.margin, 0.5);

  EXPECT_THROW(init_fixed_centers<double>(0), ContractError);
}

TEST(FixedCenters, MatchesMarginRecurrence) {
  // margin + i·(1 − 2·margin)/(E − 1) is the same ladder, up to rounding.
  for (Index e = 2; e <= 16; ++e) {
    auto fc = init_fixed_centers<double>(e);
    const double margin = 1.0 / (2.0 * static_cast<double>(e));
    for (Index i = 0; i < e; ++i) {
      const double ladder =
          margin + static_cast<double>(i) * (1.0 - 2.0 * margin) / static_cast<double>(e - 1);
      EXPECT_NEAR(fc.centers(i), ladder, 1e-15);
    }
  }
}

TEST(PoolByQuestion, SingleRowPassthrough) {
  auto attn = naive::identity_attention(3);
  Graph<double> g;
  Rng rng(1);
  Tensord qs = rng.uniform_tensor<double>({1, 3}, -1, 1);
  Tensord xq = rng.uniform_tensor<double>({1, 3}, -1, 1);
  auto out = pool_by_question(bind(g, attn, false), g.constant(qs), g.constant(xq));
  EXPECT_LT(max_abs_diff(g.value(out), xq), 1e-15);
}

TEST(PoolByQuestion, RowPermutationInvariant) {
  Rng rng(2);
  auto attn = init_attention_params<double>(4, 2, 3);
  Tensord qs = rng.uniform_tensor<double>({1, 4}, -1, 1);
  Tensord xq = rng.uniform_tensor<double>({5, 4}, -1, 1);
  Tensord perm({5, 4});
  const std::vector<Index> order = {3, 1, 4, 0, 2};
  for (Index i = 0; i < 5; ++i) perm.mat().row(i) = xq.mat().row(order[static_cast<std::size_t>(i)]);
  Graph<double> g;
  auto a = pool_by_question(bind(g, attn, false), g.constant(qs), g.constant(xq));
  auto b = pool_by_question(bind(g, attn, false), g.constant(qs), g.constant(perm));
  EXPECT_LT(max_abs_diff(g.value(a), g.value(b)), 1e-13);
}

TEST(PoolByQuestion, MatchesNaiveOracle) {
  Rng rng(3);
  auto attn = init_attention_params<double>(2, 1, 5);
  Tensord qs = rng.uniform_tensor<double>({1, 2}, -1, 1);
  Tensord xq = rng.uniform_tensor<double>({3, 2}, -1, 1);
  Graph<double> g;
  auto out = pool_by_question(bind(g, attn, false), g.constant(qs), g.constant(xq));
  EXPECT_LT(max_abs_diff(g.value(out), naive::mha_loops(attn, qs, xq, xq)), 1e-10);
}

GaussianGeneratorParams<double> zero_generator(Index d, Index experts) {
  GaussianGeneratorParams<double> gen;
  gen.map = {Tensord::zeros({d, 2 * experts}), Tensord::zeros({2 * experts})};
  gen.fixed = init_fixed_centers<double>(experts);
  return gen;
}

TEST(GenerateGaussians, ZeroGeneratorGivesAnchorsAndHalfWidth) {
  Graph<double> g;
  auto gen = zero_generator(3, 4);
  auto pooled = g.constant(Tensord({1, 3}, {0.3, -0.2, 0.9}));
  auto curves = generate_gaussians(bind(g, gen, false), pooled, 6);
  for (Index i = 0; i < 4; ++i) {
    EXPECT_DOUBLE_EQ(g.value(curves.mu)(0, i), gen.fixed.centers(i));  // tanh(0) = 0
    EXPECT_DOUBLE_EQ(g.value(curves.sigma)(0, i), 0.5);                // sigmoid(0) = 0.5
  }
}

TEST(GenerateGaussians, ClosedFormCurveValues) {
  // E=2, T=4, zero generator → μ=[0.25, 0.75], σ=0.5.
  Graph<double> g;
  auto gen = zero_generator(2, 2);
  auto pooled = g.constant(Tensord({1, 2}, {1.0, -1.0}));
  auto curves = generate_gaussians(bind(g, gen, false), pooled, 4);
  const double mu[2] = {0.25, 0.75};
  for (Index i = 0; i < 2; ++i) {
    double raw[4], peak = 0.0;
    for (Index t = 0; t < 4; ++t) {
      const double x = (static_cast<double>(t) + 0.5) / 4.0;
      raw[t] = std::exp(-(x - mu[i]) * (x - mu[i]) / (2.0 * 0.25));
      peak = std::max(peak, raw[t]);
    }
    for (Index t = 0; t < 4; ++t) {
      EXPECT_NEAR(g.value(curves.curves)(i, t), raw[t] / peak, 1e-12);
    }
  }
}

TEST(GenerateGaussians, AlgorithmInvariantsOnRandomInputs) {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const Index e = rng.range(1, 9);
    const Index t = rng.range(1, 12);
    const Index d = 4;
    Graph<double> g;
    GaussianGeneratorParams<double> gen =
        init_gaussian_generator<double>(d, e, derive_seed(7, "gen", trial));
    auto pooled = g.constant(rng.uniform_tensor<double>({1, d}, -5.0, 5.0));
    auto gv = bind(g, gen, false);
    auto curves = generate_gaussians(gv, pooled, t);

    const Tensord& mu = g.value(curves.mu);
    const Tensord& sigma = g.value(curves.sigma);
    const Tensord& c = g.value(curves.curves);
    for (Index i = 0; i < e; ++i) {
      EXPECT_GT(mu(0, i), gen.fixed.centers(i) - gen.fixed.margin);
      EXPECT_LT(mu(0, i), gen.fixed.centers(i) + gen.fixed.margin);
      if (i > 0) EXPECT_GT(mu(0, i), mu(0, i - 1));  // strictly increasing
      EXPECT_GE(sigma(0, i), kSigmaFloor);
      EXPECT_LT(sigma(0, i), 1.0);
      EXPECT_EQ(c.mat().row(i).maxCoeff(), 1.0);  // peak exactly 1
      EXPECT_GE(c.mat().row(i).minCoeff(), 0.0);
    }
  }
}

TEST(GenerateGaussians, WiderSigmaWeaklyIncreasesCoverage) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Index t = rng.range(2, 16);
    const double mu = rng.uniform(0.05, 0.95);
    double prev = -1.0;
    for (double sigma : {0.05, 0.1, 0.2, 0.4, 0.8}) {
      double mass = 0.0, peak = 0.0;
      std::vector<double> raw(static_cast<std::size_t>(t));
      for (Index i = 0; i < t; ++i) {
        const double x = (static_cast<double>(i) + 0.5) / static_cast<double>(t);
        raw[static_cast<std::size_t>(i)] = std::exp(-(x - mu) * (x - mu) / (2 * sigma * sigma));
        peak = std::max(peak, raw[static_cast<std::size_t>(i)]);
      }
      for (double v : raw) mass += v / peak;
      EXPECT_GE(mass, prev - 1e-12);
      prev = mass;
    }
  }
}

TEST(Route, UniformAndHandValues) {
  Graph<double> g;
  auto pooled = g.constant(Tensord({1, 3}, {0.4, -1.0, 2.2}));
  auto w0 = g.constant(Tensord::zeros({3, 5}));
  auto r = route(pooled, w0);
  for (Index i = 0; i < 5; ++i) EXPECT_NEAR(g.value(r)(0, i), 0.2, 1e-15);

  // logits [ln 2, 0] → [2/3, 1/3]
  auto one = g.constant(Tensord({1, 1}, {1.0}));
  auto w = g.constant(Tensord({1, 2}, {std::log(2.0), 0.0}));
  auto r2 = route(one, w);
  EXPECT_NEAR(g.value(r2)(0, 0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(g.value(r2)(0, 1), 1.0 / 3.0, 1e-15);
}

TEST(Route, SimplexProperty) {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    Graph<double> g;
    const Index e = rng.range(1, 9);
    auto pooled = g.constant(rng.uniform_tensor<double>({1, 4}, -10.0, 10.0));
    auto w = g.constant(rng.uniform_tensor<double>({4, e}, -2.0, 2.0));
    auto r = route(pooled, w);
    EXPECT_NEAR(g.value(r).array().sum(), 1.0, 1e-12);
    EXPECT_GT(g.value(r).array().minCoeff(), 0.0);
  }
}

ExpertBank<double> identity_bank(Index d, Index experts) {
  ExpertBank<double> bank;
  for (Index i = 0; i < experts; ++i) {
    LinearParams<double> l{Tensord::zeros({d, d}), Tensord::zeros({d})};
    for (Index j = 0; j < d; ++j) l.w(j, j) = 1.0;
    bank.experts.push_back(l);
  }
  return bank;
}

TEST(Integrate, SingleFrameIdentityExpert) {
  Graph<double> g;
  auto x = g.constant(Tensord({1, 3}, {0.7, -0.3, 1.1}));
  auto curves = g.constant(Tensord({1, 1}, {1.0}));   // peak weight 1
  auto routing = g.constant(Tensord({1, 1}, {1.0}));  // single expert
  auto out = integrate(x, curves, routing, bind(g, identity_bank(3, 1), false));
  EXPECT_LT(max_abs_diff(g.value(out), g.value(x)), 1e-15);
}

TEST(Integrate, ZeroInputZeroBiasGivesZero) {
  Graph<double> g;
  Rng rng(10);
  auto bank = init_expert_bank<double>(3, 2, 11);
  bank.experts[0].b.array() = 0.0;
  bank.experts[1].b.array() = 0.0;
  auto x = g.constant(Tensord::zeros({4, 3}));
  auto curves = g.constant(rng.uniform_tensor<double>({2, 4}, 0.1, 1.0));
  auto routing = g.constant(Tensord({1, 2}, {0.5, 0.5}));
  auto out = integrate(x, curves, routing, bind(g, bank, false));
  EXPECT_EQ(g.value(out).array().abs().maxCoeff(), 0.0);
}

TEST(Integrate, MatchesTripleLoopOracle) {
  // T=2, D=2, E=2 with small integer weights.
  ExpertBank<double> bank;
  bank.experts.push_back({Tensord({2, 2}, {1, 2, 0, 1}), Tensord({2}, {1, 0})});
  bank.experts.push_back({Tensord({2, 2}, {2, 0, 1, 1}), Tensord({2}, {0, -1})});
  Tensord x({2, 2}, {1, -1, 2, 3});
  Tensord curves({2, 2}, {1.0, 0.5, 0.25, 1.0});
  Tensord routing({1, 2}, {0.75, 0.25});

  Tensord expected({1, 2});
  for (Index i = 0; i < 2; ++i) {
    for (Index t = 0; t < 2; ++t) {
      for (Index cdim = 0; cdim < 2; ++cdim) {
        double e_out = bank.experts[static_cast<std::size_t>(i)].b(cdim);
        for (Index k = 0; k < 2; ++k) {
          e_out += x(t, k) * bank.experts[static_cast<std::size_t>(i)].w(k, cdim);
        }
        expected(0, cdim) += routing(0, i) * curves(i, t) * e_out;
      }
    }
  }
  Graph<double> g;
  auto out = integrate(g.constant(x), g.constant(curves), g.constant(routing),
                       bind(g, bank, false));
  EXPECT_LT(max_abs_diff(g.value(out), expected), 1e-12);
}

TemporalIntegrationParams<double> random_temporal(Index d, Index e, std::uint64_t seed) {
  TemporalIntegrationParams<double> p;
  p.pool_v = init_attention_params<double>(d, 2, derive_seed(seed, "pool_v"));
  p.pool_a = init_attention_params<double>(d, 2, derive_seed(seed, "pool_a"));
  p.generator = init_gaussian_generator<double>(d, e, derive_seed(seed, "gen"));
  Rng rng(derive_seed(seed, "router"));
  p.router_w = rng.uniform_tensor<double>({d, e}, -0.5, 0.5);
  p.bank_v = init_expert_bank<double>(d, e, derive_seed(seed, "bank_v"));
  p.bank_a = init_expert_bank<double>(d, e, derive_seed(seed, "bank_a"));
  return p;
}

TEST(TemporalIntegration, PatchStreamsShareVisualCurvesAndRouting) {
  // With p_v == p_a the two outputs must match bitwise, which can only happen
  // if both are weighted by the same (visual) curves and routing.
  Rng rng(12);
  auto p = random_temporal(4, 3, 13);
  Graph<double> g;
  auto vars = bind(g, p, false);
  auto vq = g.constant(rng.uniform_tensor<double>({5, 4}, -1, 1));
  auto aq = g.constant(rng.uniform_tensor<double>({5, 4}, -1, 1));
  auto shared = g.constant(rng.uniform_tensor<double>({5, 4}, -1, 1));
  auto qs = g.constant(rng.uniform_tensor<double>({1, 4}, -1, 1));
  auto r = temporal_integration(vars, vq, aq, shared, shared, qs);
  EXPECT_EQ(max_abs_diff(g.value(r.v_pv), g.value(r.v_pa)), 0.0);
}

TEST(TemporalIntegration, MatchesComposedOracle) {
  // Recompose the pathway from the already-tested pieces and compare.
  Rng rng(14);
  auto p = random_temporal(4, 2, 15);
  Graph<double> g;
  auto vars = bind(g, p, false);
  Tensord vq_t = rng.uniform_tensor<double>({3, 4}, -1, 1);
  Tensord aq_t = rng.uniform_tensor<double>({3, 4}, -1, 1);
  Tensord pv_t = rng.uniform_tensor<double>({3, 4}, -1, 1);
  Tensord pa_t = rng.uniform_tensor<double>({3, 4}, -1, 1);
  Tensord qs_t = rng.uniform_tensor<double>({1, 4}, -1, 1);
  auto vq = g.constant(vq_t), aq = g.constant(aq_t), pv = g.constant(pv_t), pa = g.constant(pa_t),
       qs = g.constant(qs_t);
  auto r = temporal_integration(vars, vq, aq, pv, pa, qs);

  auto pooled_v = pool_by_question(vars.pool_v, qs, vq);
  auto gauss = generate_gaussians(vars.generator, pooled_v, 3);
  auto routing = route(pooled_v, vars.router_w);
  auto expected_vpv = integrate(add(vq, pv), gauss.curves, routing, vars.bank_v);
  EXPECT_LT(max_abs_diff(g.value(r.v_pv), g.value(expected_vpv)), 1e-10);

  auto pooled_a = pool_by_question(vars.pool_a, qs, aq);
  auto gauss_a = generate_gaussians(vars.generator, pooled_a, 3);
  auto routing_a = route(pooled_a, vars.router_w);
  auto expected_a = integrate(aq, gauss_a.curves, routing_a, vars.bank_a);
  EXPECT_LT(max_abs_diff(g.value(r.a), g.value(expected_a)), 1e-10);
}

TEST(TemporalIntegration, PermutationChangesOutput) {
  // Generic σ < 1 weights frames unequally: some permutation must move the
  // output by more than 1e-6.
  Rng rng(16);
  int discriminated = 0;
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_temporal(4, 3, derive_seed(16, "m", trial));
    Tensord vq_t = rng.uniform_tensor<double>({6, 4}, -1, 1);
    Tensord aq_t = rng.uniform_tensor<double>({6, 4}, -1, 1);
    Tensord pv_t = rng.uniform_tensor<double>({6, 4}, -1, 1);
    Tensord pa_t = rng.uniform_tensor<double>({6, 4}, -1, 1);
    Tensord qs_t = rng.uniform_tensor<double>({1, 4}, -1, 1);

    auto run = [&](const Tensord& pv_in) {
      Graph<double> g;
      auto vars = bind(g, p, false);
      auto r = temporal_integration(vars, g.constant(vq_t), g.constant(aq_t), g.constant(pv_in),
                                    g.constant(pa_t), g.constant(qs_t));
      return g.value(r.v_pv);
    };
    Tensord base = run(pv_t);
    Tensord reversed({6, 4});
    for (Index i = 0; i < 6; ++i) reversed.mat().row(i) = pv_t.mat().row(5 - i);
    Tensord swapped = pv_t;
    swapped.mat().row(0).swap(swapped.mat().row(5));
    const double d1 = std::sqrt((run(reversed).array() - base.array()).square().sum());
    const double d2 = std::sqrt((run(swapped).array() - base.array()).square().sum());
    if (std::max(d1, d2) > 1e-6) ++discriminated;
  }
  EXPECT_EQ(discriminated, 50);
}

TEST(TemporalIntegration, GradientCheck) {
  Rng rng(18);
  auto p = random_temporal(4, 2, 19);
  Tensord vq_t = rng.uniform_tensor<double>({3, 4}, -1, 1);
  Tensord aq_t = rng.uniform_tensor<double>({3, 4}, -1, 1);
  Tensord pv_t = rng.uniform_tensor<double>({3, 4}, -1, 1);
  Tensord pa_t = rng.uniform_tensor<double>({3, 4}, -1, 1);
  Tensord qs_t = rng.uniform_tensor<double>({1, 4}, -1, 1);

  std::vector<Tensord*> tracked = {&p.pool_v.wq,
                                   &p.pool_v.wo,
                                   &p.generator.map.w,
                                   &p.generator.map.b,
                                   &p.router_w,
                                   &p.bank_v.experts[0].w,
                                   &p.bank_v.experts[0].b,
                                   &p.bank_a.experts[1].w};

  auto eval = [&](std::vector<Tensord>* grads) {
    Graph<double> g;
    auto vars = bind(g, p, true);
    auto r = temporal_integration(vars, g.constant(vq_t), g.constant(aq_t), g.constant(pv_t),
                                  g.constant(pa_t), g.constant(qs_t));
    auto all = concat_rows(concat_rows(r.v_pv, r.v_pa), r.a);
    auto loss = sum_all(mul(all, all));
    if (grads) {
      g.backward(loss);
      std::vector<Var<double>> vs = {vars.pool_v.wq,
                                     vars.pool_v.wo,
                                     vars.generator.map.w,
                                     vars.generator.map.b,
                                     vars.router_w,
                                     vars.bank_v.experts[0].w,
                                     vars.bank_v.experts[0].b,
                                     vars.bank_a.experts[1].w};
      grads->clear();
      for (auto v : vs) {
        grads->push_back(g.has_grad(v) ? g.grad(v) : Tensord::zeros(g.value(v).dims()));
      }
    }
    return g.value(loss)(0);
  };
  std::vector<Tensord> analytic;
  eval(&analytic);
  auto report = check_gradients<double>([&] { return eval(nullptr); }, tracked, analytic);
  EXPECT_LT(report.max_rel_error, 1e-4);
}

TEST(Integrate, TimeNormalizeDividesByCoverage) {
  Graph<double> g;
  Rng rng(20);
  auto bank = identity_bank(2, 1);
  auto x = g.constant(rng.uniform_tensor<double>({3, 2}, -1, 1));
  Tensord curve_t({1, 3}, {1.0, 0.5, 0.25});
  auto curves = g.constant(curve_t);
  auto routing = g.constant(Tensord({1, 1}, {1.0}));
  auto plain = integrate(x, curves, routing, bind(g, bank, false), false);
  auto normalized = integrate(x, curves, routing, bind(g, bank, false), true);
  const double mass = 1.0 + 0.5 + 0.25;
  for (Index c = 0; c < 2; ++c) {
    EXPECT_NEAR(g.value(normalized)(0, c), g.value(plain)(0, c) / mass, 1e-14);
  }
}

}  // namespace
}  // namespace qatiger
