#include <gtest/gtest.h>

#include "droco/transport.hpp"
#include "droco/verify.hpp"
#include "oracles.hpp"

using namespace droco;

namespace {

std::vector<double> line_metric(std::size_t n) {
  std::vector<double> d(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i * n + j] = std::abs(double(i) - double(j));
  return d;
}

struct Instance {
  std::size_t n;
  std::vector<double> d, p, q, v;
  double eps;
};

Instance random_instance(std::uint64_t seed, std::size_t max_n = 6) {
  Rng rng(seed);
  Instance in;
  in.n = 2 + rng.below(max_n - 1);
  in.d = random_metric(rng, in.n, 5);
  in.p = random_distribution(rng, in.n, max_n);
  in.q = random_distribution(rng, in.n, max_n);
  in.v.resize(in.n);
  for (auto& x : in.v) x = rng.uniform(-10.0, 10.0);
  in.eps = rng.uniform(0.0, 3.0);
  return in;
}

}  // namespace

TEST(Wasserstein, IdenticalDistributionsAtZero) {
  const auto d = line_metric(3);
  const std::vector<double> p = {0.2, 0.3, 0.5};
  EXPECT_NEAR(wasserstein_1(p, p, MetricView{3, d}), 0.0, 1e-12);
}

TEST(Wasserstein, PointMassesAtMetricDistance) {
  const auto d = line_metric(4);
  EXPECT_NEAR(wasserstein_1(std::vector<double>{1, 0, 0, 0}, std::vector<double>{0, 0, 0, 1},
                            MetricView{4, d}),
              3.0, 1e-12);
}

TEST(Wasserstein, ThreePointExample) {
  // shift half a unit of mass by two, or both halves by one: cost 1
  const auto d = line_metric(3);
  EXPECT_NEAR(wasserstein_1(std::vector<double>{0.5, 0.5, 0}, std::vector<double>{0, 0.5, 0.5},
                            MetricView{3, d}),
              1.0, 1e-12);
}

TEST(Wasserstein, MatchesSimplexOracle) {
  for (std::uint64_t t = 0; t < 100; ++t) {
    const auto in = random_instance(derive_seed(3, "w1", t));
    EXPECT_NEAR(wasserstein_1(in.p, in.q, MetricView{in.n, in.d}), oracle::w1_lp(in.p, in.q, in.d),
                1e-9);
  }
}

TEST(W1Ball, ZeroRadiusIsExpectation) {
  const auto d = line_metric(3);
  const std::vector<double> p = {0.2, 0.3, 0.5}, v = {1.0, -2.0, 4.0};
  EXPECT_NEAR(robust_inf_over_w1_ball(p, v, MetricView{3, d}, 0.0), 0.2 - 0.6 + 2.0, 1e-12);
}

TEST(W1Ball, LargeRadiusReachesMinimum) {
  const auto d = line_metric(4);
  const std::vector<double> p = {0.1, 0.2, 0.3, 0.4}, v = {3.0, -1.0, 2.0, 5.0};
  EXPECT_NEAR(robust_inf_over_w1_ball(p, v, MetricView{4, d}, 2.0), -1.0, 1e-12);
}

TEST(W1Ball, HalfMassMovedExample) {
  // budget 1 moves half the mass across distance 2
  const std::vector<double> d = {0, 2, 2, 0};
  const std::vector<double> p = {1, 0}, v = {5, 1};
  const auto sol = robust_w1_ball(p, v, MetricView{2, d}, 1.0);
  EXPECT_NEAR(sol.value, 3.0, 1e-12);
  EXPECT_NEAR(sol.distribution[0], 0.5, 1e-12);
  EXPECT_NEAR(oracle::ball_lp(p, v, d, 1.0), 3.0, 1e-12);
}

TEST(W1Ball, GreedyMatchesSimplexAndBreakpointOracles) {
  for (std::uint64_t t = 0; t < 300; ++t) {
    const auto in = random_instance(derive_seed(4, "ball", t));
    const MetricView m{in.n, in.d};
    const auto sol = robust_w1_ball(in.p, in.v, m, in.eps);
    const double lp = oracle::ball_lp(in.p, in.v, in.d, in.eps);
    EXPECT_NEAR(sol.value, lp, 1e-8) << "trial " << t;
    EXPECT_NEAR(sol.value, oracle::dual_breakpoints(in.p, in.v, in.d, in.eps), 1e-8);
    // the returned distribution lies in the ball and attains the value
    EXPECT_LE(wasserstein_1(sol.distribution, in.p, m), in.eps + 1e-9);
    double val = 0.0;
    for (std::size_t j = 0; j < in.n; ++j) val += sol.distribution[j] * in.v[j];
    EXPECT_NEAR(val, sol.value, 1e-9);
  }
}

TEST(W1Ball, RestrictedDestinationsNeverGoBelowUnrestricted) {
  for (std::uint64_t t = 0; t < 50; ++t) {
    const auto in = random_instance(derive_seed(5, "allowed", t));
    Rng rng(t);
    std::vector<char> allowed(in.n);
    for (auto& a : allowed) a = rng.uniform() < 0.5;
    const MetricView m{in.n, in.d};
    EXPECT_GE(robust_inf_over_w1_ball(in.p, in.v, m, in.eps, allowed) + 1e-12,
              robust_inf_over_w1_ball(in.p, in.v, m, in.eps));
  }
}

TEST(PerSampleBall, NestsAboveW1BallAndIsMonotoneInRadius) {
  for (std::uint64_t t = 0; t < 100; ++t) {
    const auto in = random_instance(derive_seed(6, "ps", t));
    const MetricView m{in.n, in.d};
    const double ps = per_sample_ball_value(in.p, in.v, m, in.eps);
    EXPECT_LE(robust_inf_over_w1_ball(in.p, in.v, m, in.eps), ps + 1e-9);
    EXPECT_LE(per_sample_ball_value(in.p, in.v, m, in.eps + 1.0), ps + 1e-12);
  }
}

TEST(LambdaDual, ZeroMultiplierIsGlobalMinimum) {
  const auto d = line_metric(3);
  const std::vector<double> p = {0.5, 0.5, 0}, v = {2, 7, -3};
  EXPECT_NEAR(lambda_dual_value(p, v, MetricView{3, d}, 1.0, 0.0), -3.0, 1e-12);
}

TEST(LambdaDual, LargeMultiplierPinsMassInPlace) {
  const auto d = line_metric(3);
  const std::vector<double> p = {0.5, 0.5, 0}, v = {2, 7, -3};
  EXPECT_NEAR(lambda_dual_value(p, v, MetricView{3, d}, 0.5, 1e6), 4.5 - 0.5e6, 1e-6);
}

TEST(LambdaDual, HandExampleAtLambdaTwo) {
  const std::vector<double> d = {0, 2, 2, 0};
  const std::vector<double> p = {1, 0}, v = {5, 1};
  // min(5, 1 + 2 * 2) - 2 * 1
  EXPECT_NEAR(lambda_dual_value(p, v, MetricView{2, d}, 1.0, 2.0), 3.0, 1e-12);
}

TEST(LambdaDual, TernarySupremumMatchesBreakpointOracle) {
  for (std::uint64_t t = 0; t < 100; ++t) {
    const auto in = random_instance(derive_seed(7, "dual", t));
    const auto opt = dual_sup_ternary(in.p, in.v, MetricView{in.n, in.d}, in.eps);
    EXPECT_NEAR(opt.value, oracle::dual_breakpoints(in.p, in.v, in.d, in.eps), 1e-7);
  }
}

TEST(Lipschitz, ConstantAndLinearTables) {
  const auto d = line_metric(4);
  TabularQ q(4, 2, 3.0);
  EXPECT_EQ(lipschitz_constant(q, MetricView{4, d}), 0.0);
  for (StateId s = 0; s < 4; ++s) q(s, 0) = q(s, 1) = double(s);
  EXPECT_NEAR(lipschitz_constant(q, MetricView{4, d}), 1.0, 1e-12);
}

TEST(Lipschitz, MatchesPairScan) {
  Rng rng(12);
  const auto d = random_metric(rng, 5, 4);
  const auto q = random_q(rng, 5, 3, 10.0);
  double k = 0.0;
  for (StateId i = 0; i < 5; ++i)
    for (StateId j = 0; j < 5; ++j)
      if (d[i * 5 + j] > 0)
        for (ActionId a = 0; a < 3; ++a) k = std::max(k, std::abs(q(i, a) - q(j, a)) / d[i * 5 + j]);
  EXPECT_DOUBLE_EQ(lipschitz_constant(q, MetricView{5, d}), k);
}
