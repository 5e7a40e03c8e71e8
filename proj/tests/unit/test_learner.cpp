#include <gtest/gtest.h>

#include <cmath>

#include "droco/gridworld.hpp"
#include "droco/learner.hpp"
#include "droco/eval.hpp"

using namespace droco;

namespace {

// member k sends (0, 0) to state k; state 1 is absorbing in every member
EnsembleDynamics spread_members() {
  return {2, 1, {{1, 0, 0, 1}, {0, 1, 0, 1}}};
}

struct GridData {
  FiniteMDP mdp;
  OfflineDataset src, tar;
};

GridData grid_data(std::size_t n) {
  GridData g{build_grid(default_grid()), {}, {}};
  g.src = collect_quality(g.mdp, Quality::medium, n, 100, 1, Domain::src);
  g.tar = collect_quality(g.mdp, Quality::medium, n, 100, 2, Domain::tar);
  return g;
}

/// Root of tau E[(q - v)+] = (1 - tau) E[(v - q)+] by bisection.
double expectile_of(const std::vector<double>& q, double tau) {
  double lo = *std::min_element(q.begin(), q.end()), hi = *std::max_element(q.begin(), q.end());
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    double g = 0.0;
    for (double x : q) g += x > mid ? tau * (x - mid) : -(1.0 - tau) * (mid - x);
    (g > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST(Losses, ExpectileValues) {
  EXPECT_DOUBLE_EQ(expectile_loss(1.0, 0.7), 0.7);
  EXPECT_NEAR(expectile_loss(-1.0, 0.7), 0.3, 1e-15);
  EXPECT_EQ(expectile_loss(0.0, 0.7), 0.0);
  EXPECT_THROW(expectile_loss(1.0, 1.0), std::invalid_argument);
}

TEST(Losses, HuberBranches) {
  EXPECT_EQ(huber(0.0, 30.0), 0.0);
  EXPECT_DOUBLE_EQ(huber(10.0, 30.0), 50.0);
  EXPECT_DOUBLE_EQ(huber(50.0, 30.0), 1050.0);
  EXPECT_DOUBLE_EQ(huber(-50.0, 30.0), 1050.0);
  EXPECT_NEAR(huber(30.0 - 1e-9, 30.0), huber(30.0, 30.0), 1e-7);
  EXPECT_THROW(huber(1.0, 0.0), std::invalid_argument);
}

TEST(Losses, HuberGradientMatchesFiniteDifference) {
  for (double a : {-80.0, -29.0, -3.0, 0.5, 12.0, 31.0, 200.0}) {
    const double h = 1e-5;
    const double fd = (huber(a + h, 30.0) - huber(a - h, 30.0)) / (2 * h);
    EXPECT_NEAR(huber_grad(a, 30.0), fd, 1e-6) << a;
  }
}

TEST(Expectile, HighTauApproachesSupportMax) {
  const std::vector<double> q = {1.0, 2.5, 4.0};
  double prev_gap = 1e9;
  for (double tau : {0.5, 0.7, 0.9, 0.99, 0.999}) {
    const double gap = 4.0 - expectile_of(q, tau);
    EXPECT_GE(gap, 0.0);
    EXPECT_LT(gap, prev_gap);
    // the root sits within (1 - tau)/tau of the spread below the max
    EXPECT_LE(gap, (1.0 - tau) / tau * 3.0 * 2.0 + 1e-12);
    prev_gap = gap;
  }
}

TEST(Penalty, TargetRecordIsZero) {
  const auto ens = spread_members();
  const TabularV v(std::vector<double>{4.0, 1.0});
  EXPECT_EQ(value_penalty({0, 0, 0.0, 0, Domain::tar}, v, ens, 1), 0.0);
}

TEST(Penalty, SamplesEqualToObservedGiveZero) {
  const EnsembleDynamics ens(2, 1, {{1, 0, 0, 1}, {1, 0, 0, 1}});
  const TabularV v(std::vector<double>{4.0, 1.0});
  EXPECT_EQ(value_penalty({0, 0, 0.0, 0, Domain::src}, v, ens, 9), 0.0);
}

TEST(Penalty, GapToWorstSample) {
  const auto ens = spread_members();
  const TabularV v(std::vector<double>{4.0, 1.0});
  EXPECT_DOUBLE_EQ(value_penalty({0, 0, 0.0, 0, Domain::src}, v, ens, 9), 3.0);
}

TEST(TdTarget, Arithmetic) {
  const TabularV v(std::vector<double>{10.0});
  const TransitionRecord rec{0, 0, 1.0, 0, Domain::src};
  EXPECT_NEAR(td_target(rec, v, 3.0, 0.5, 0.99), 9.415, 1e-12);
  EXPECT_NEAR(td_target(rec, v, ValuePenalty{3.0, 7.0}, 0.5, 0.99), 9.415, 1e-12);
}

TEST(TdTarget, BetaEndpoints) {
  const TabularV v(std::vector<double>{4.0, 1.0});
  const TransitionRecord rec{0, 0, 0.5, 0, Domain::src};
  const ValuePenalty pen{3.0, 1.0};
  EXPECT_DOUBLE_EQ(td_target(rec, v, pen, 0.0, 0.9), 0.5 + 0.9 * 4.0);
  EXPECT_DOUBLE_EQ(td_target(rec, v, pen, 1.0, 0.9), 0.5 + 0.9 * 1.0);
  EXPECT_DOUBLE_EQ(td_target(rec, v, 3.0, 1.0, 0.9), 0.5 + 0.9 * 1.0);
}

TEST(Train, ZeroStepsEqualsInitialization) {
  const auto g = grid_data(2000);
  DrocoConfig c;
  c.steps = 0;
  const auto st = train(g.src, g.tar, g.mdp, c);
  EXPECT_TRUE(st.same_tables(initial_state(g.src, g.tar, c)));
  EXPECT_EQ(st.step, 0u);
  EXPECT_TRUE(st.trace.empty());
}

TEST(Train, DeterministicForFixedSeed) {
  const auto g = grid_data(2000);
  DrocoConfig c;
  c.steps = 500;
  c.seed = 3;
  const auto a = train(g.src, g.tar, g.mdp, c);
  const auto b = train(g.src, g.tar, g.mdp, c);
  EXPECT_TRUE(a.same_tables(b));
  EXPECT_EQ(a.trace, b.trace);
  c.seed = 4;
  EXPECT_FALSE(a.same_tables(train(g.src, g.tar, g.mdp, c)));
}

TEST(Train, DivergenceGuardFires) {
  const auto g = grid_data(2000);
  DrocoConfig c;
  c.steps = 200;
  c.q_lr = 1e6;
  EXPECT_THROW(train(g.src, g.tar, g.mdp, c), DivergenceError);
}

TEST(Train, RejectsBadInputs) {
  const auto g = grid_data(500);
  DrocoConfig c;
  c.steps = 1;
  EXPECT_THROW(train(OfflineDataset(64, 5), g.tar, g.mdp, c), ValidationError);
  EXPECT_THROW(train(g.src, OfflineDataset(64, 5), g.mdp, c), ValidationError);
  c.tau = 1.0;
  EXPECT_THROW(train(g.src, g.tar, g.mdp, c), ValidationError);
}

TEST(Train, BetaZeroWideHuberMatchesMergedBaseline) {
  const auto g = grid_data(2000);
  DrocoConfig c;
  c.steps = 300;
  c.beta = 0.0;
  c.delta = 1e12;
  const auto droco = train(g.src, g.tar, g.mdp, c);
  const auto base = train_baseline_merged(g.src, g.tar, g.mdp, c);
  EXPECT_TRUE(droco.same_tables(base));
}

TEST(Train, BaselineWithoutSourceOnlyTouchesTargetPairs) {
  const auto g = grid_data(2000);
  DrocoConfig c;
  c.steps = 300;
  const auto st = train_baseline_merged(OfflineDataset(64, 5), g.tar, g.mdp, c);
  for (StateId s = 0; s < 64; ++s)
    for (ActionId a = 0; a < 5; ++a)
      if (g.tar.count(s, a) == 0) {
        EXPECT_EQ(st.q(s, a), 0.0);
      }
}

TEST(Train, BetaZeroSameDomainNearInSampleOptimum) {
  const auto g = grid_data(20000);
  DrocoConfig c;
  c.beta = 0.0;
  c.steps = 20000;
  const auto st = train(g.src, g.tar, g.mdp, c);
  auto support = st.support;
  for (StateId s = 0; s < g.mdp.n_states; ++s)
    if (support.empty(s))
      for (ActionId a = 0; a < g.mdp.n_actions; ++a) support.set(s, a);
  const auto best = greedy_policy(optimal_q_in_sample(g.mdp, support), support);
  const double opt = evaluate(best, g.mdp).mean;
  EXPECT_LE(std::abs(opt - evaluate(st.policy, g.mdp).mean), 0.02 * std::abs(opt));
}

TEST(Checkpoint, RoundTripKeepsTables) {
  const auto g = grid_data(2000);
  DrocoConfig c;
  c.steps = 200;
  const auto st = train(g.src, g.tar, g.mdp, c);
  const auto back = state_from_json(nlohmann::json::parse(checkpoint_json(st).dump()));
  EXPECT_TRUE(back.same_tables(st));
}

TEST(AwrPolicy, StaysInsideSupport) {
  const auto g = grid_data(2000);
  DrocoConfig c;
  c.steps = 200;
  const auto st = train(g.src, g.tar, g.mdp, c);
  for (StateId s = 0; s < 64; ++s) {
    if (st.support.empty(s)) continue;
    double mass = 0.0;
    for (ActionId a = 0; a < 5; ++a) {
      if (!st.support.contains(s, a)) {
        EXPECT_EQ(st.policy(s, a), 0.0);
      }
      mass += st.policy(s, a);
    }
    EXPECT_NEAR(mass, 1.0, 1e-12);
  }
}
