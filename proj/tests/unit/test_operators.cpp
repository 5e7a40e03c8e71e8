#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "droco/gridworld.hpp"
#include "droco/operators.hpp"
#include "droco/verify.hpp"
#include "oracles.hpp"

using namespace droco;

namespace {

// 0 -> 1 -> 2 with 2 absorbing; reward 1 only at 2; one action
FiniteMDP chain(double gamma) {
  auto m = FiniteMDP::zeros(3, 1, gamma);
  m.row(0, 0)[1] = 1.0;
  m.row(1, 0)[2] = 1.0;
  m.row(2, 0)[2] = 1.0;
  m.r(2, 0) = 1.0;
  for (StateId i = 0; i < 3; ++i)
    for (StateId j = 0; j < 3; ++j) m.d(i, j) = std::abs(double(i) - double(j));
  return m;
}

FiniteMDP line_mdp(Rng& rng, std::size_t S, std::size_t A) {
  RandomMdpOptions o;
  o.min_states = o.max_states = S;
  o.min_actions = o.max_actions = A;
  auto m = random_mdp(rng, o);
  for (StateId i = 0; i < S; ++i)
    for (StateId j = 0; j < S; ++j) m.d(i, j) = std::abs(double(i) - double(j));
  return m;
}

double max_abs_diff(const TabularQ& x, const TabularQ& y) {
  return sup_norm_diff(x.values, y.values);
}

}  // namespace

TEST(StandardBackup, ZeroQGivesRewardTable) {
  Rng rng(1);
  const auto m = random_mdp(rng);
  const auto out = standard_backup(TabularQ(m.n_states, m.n_actions), m);
  EXPECT_EQ(out.values, m.reward);
}

TEST(StandardBackup, ChainByHand) {
  const auto m = chain(0.5);
  TabularQ q(3, 1);
  q(0, 0) = 3.0, q(1, 0) = 5.0, q(2, 0) = 7.0;
  const auto out = standard_backup(q, m);
  EXPECT_DOUBLE_EQ(out(0, 0), 2.5);
  EXPECT_DOUBLE_EQ(out(1, 0), 3.5);
  EXPECT_DOUBLE_EQ(out(2, 0), 4.5);
}

TEST(StandardBackup, FullSupportEqualsInSample) {
  Rng rng(2);
  const auto m = random_mdp(rng);
  const auto q = random_q(rng, m.n_states, m.n_actions, m.value_bound());
  EXPECT_EQ(standard_backup(q, m).values,
            in_sample_backup(q, m, ActionSupport::all(m.n_states, m.n_actions)).values);
}

TEST(RcbExact, ZeroRadiusEqualsInSample) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const auto m = line_mdp(rng, 6, 3);
    const auto sup = random_support(rng, 6, 3, false);
    const auto q = random_q(rng, 6, 3, m.value_bound());
    EXPECT_LT(max_abs_diff(rcb_exact_backup(q, m, sup, 0.0), in_sample_backup(q, m, sup)), 1e-12);
  }
}

TEST(RcbExact, DiameterRadiusGivesGlobalMinimum) {
  Rng rng(3);
  const auto m = line_mdp(rng, 6, 3);
  const auto sup = ActionSupport::all(6, 3);
  const auto q = random_q(rng, 6, 3, m.value_bound());
  const auto v = support_values(q, sup);
  const double vmin = *std::min_element(v.values.begin(), v.values.end());
  const auto out = rcb_exact_backup(q, m, sup, m.metric_view().diameter());
  for (StateId s = 0; s < 6; ++s)
    for (ActionId a = 0; a < 3; ++a) EXPECT_NEAR(out(s, a), m.r(s, a) + m.gamma * vmin, 1e-12);
}

TEST(RcbExact, MatchesCouplingLp) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    RandomMdpOptions o;
    o.min_states = o.max_states = 4;
    o.min_actions = o.max_actions = 2;
    const auto m = random_mdp(rng, o);
    const auto sup = ActionSupport::all(4, 2);
    const auto q = random_q(rng, 4, 2, m.value_bound());
    const auto v = support_values(q, sup);
    const auto out = rcb_exact_backup(q, m, sup, 0.5);
    for (StateId s = 0; s < 4; ++s)
      for (ActionId a = 0; a < 2; ++a) {
        const double lp = oracle::ball_lp(m.row(s, a), v.values, m.metric, 0.5);
        EXPECT_NEAR(out(s, a), m.r(s, a) + m.gamma * lp, 1e-8);
      }
  }
}

TEST(RcbPractical, ZeroRadiusEqualsInSample) {
  Rng rng(4);
  const auto m = line_mdp(rng, 9, 4);
  const auto sup = random_support(rng, m.n_states, m.n_actions, false);
  const auto q = random_q(rng, m.n_states, m.n_actions, m.value_bound());
  EXPECT_LT(max_abs_diff(rcb_practical_backup(q, m, sup, 0.0), in_sample_backup(q, m, sup)),
            1e-12);
}

TEST(RcbPractical, MatchesBallScan) {
  Rng rng(5);
  const auto m = line_mdp(rng, 5, 2);
  const auto sup = ActionSupport::all(5, 2);
  const auto q = random_q(rng, 5, 2, m.value_bound());
  const auto out = rcb_practical_backup(q, m, sup, 1.0);
  for (StateId s = 0; s < 5; ++s)
    for (ActionId a = 0; a < 2; ++a) {
      double expect = 0.0;
      for (StateId sp = 0; sp < 5; ++sp) {
        double lo = std::numeric_limits<double>::infinity();
        for (StateId x = 0; x < 5; ++x)
          if (std::abs(double(x) - double(sp)) <= 1.0)
            lo = std::min(lo, std::max(q(x, 0), q(x, 1)));
        expect += m.row(s, a)[sp] * lo;
      }
      EXPECT_NEAR(out(s, a), m.r(s, a) + m.gamma * expect, 1e-12);
    }
}

TEST(RcbPractical, NonincreasingInRadiusAndAboveExact) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(200 + seed);
    const auto m = random_mdp(rng);
    const auto sup = ActionSupport::all(m.n_states, m.n_actions);
    const auto q = random_q(rng, m.n_states, m.n_actions, m.value_bound());
    TabularQ prev = rcb_practical_backup(q, m, sup, 0.0);
    for (double eps : {0.5, 1.0, 2.0, 4.0}) {
      const auto cur = rcb_practical_backup(q, m, sup, eps);
      const auto exact = rcb_exact_backup(q, m, sup, eps);
      for (std::size_t k = 0; k < cur.values.size(); ++k) {
        EXPECT_LE(cur.values[k], prev.values[k] + 1e-12);
        EXPECT_LE(exact.values[k], cur.values[k] + 1e-9);
      }
      prev = cur;
    }
  }
}

TEST(RcbExact, TargetPairsUseTargetKernel) {
  Rng rng(6);
  const auto src = line_mdp(rng, 5, 2);
  auto tar = src;
  std::fill(tar.kernel.begin(), tar.kernel.end(), 0.0);
  for (StateId s = 0; s < 5; ++s)
    for (ActionId a = 0; a < 2; ++a) tar.row(s, a)[s] = 1.0;
  std::vector<char> source_pairs(10, 0);
  const auto sup = ActionSupport::all(5, 2);
  const auto q = random_q(rng, 5, 2, src.value_bound());
  const auto out = rcb_exact_backup(q, src, &tar, sup, 1.0, source_pairs);
  EXPECT_LT(max_abs_diff(out, in_sample_backup(q, tar, sup)), 1e-12);
  EXPECT_THROW(rcb_exact_backup(q, src, nullptr, sup, 1.0, source_pairs), std::invalid_argument);
  EXPECT_THROW(rcb_exact_backup(q, src, sup, -1.0), std::invalid_argument);
}

TEST(EnsembleBackup, IdenticalDeterministicMembersCollapse) {
  // every member sends (s, a) to state 1
  std::vector<double> row = {0, 1, 0, 1};
  const EnsembleDynamics ens(2, 1, {row, row, row});
  TabularQ q(2, 1);
  q(0, 0) = 4.0, q(1, 0) = 1.0;
  const std::vector<TransitionRecord> batch = {{0, 0, 0.5, 0, Domain::src}};
  const auto t = rcb_ensemble_backup(q, batch, ens, ActionSupport::all(2, 1), 0.9, 3);
  EXPECT_DOUBLE_EQ(t[0], 0.5 + 0.9 * 1.0);
}

TEST(EnsembleBackup, SingleMemberUsesItsSample) {
  const EnsembleDynamics ens(2, 1, {{0.3, 0.7, 0.6, 0.4}});
  TabularQ q(2, 1);
  q(0, 0) = 4.0, q(1, 0) = 1.0;
  std::vector<TransitionRecord> batch;
  for (int i = 0; i < 50; ++i) batch.push_back({StateId(i % 2), 0, 1.0, 0, Domain::src});
  const auto t = rcb_ensemble_backup(q, batch, ens, ActionSupport::all(2, 1), 0.5, 11);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto draw = sample_set(ens, batch[i].s, 0, record_seed(11, i));
    ASSERT_EQ(draw.size(), 1u);
    EXPECT_DOUBLE_EQ(t[i], 1.0 + 0.5 * q(draw[0], 0));
  }
}

TEST(EnsembleBackup, ThreeMembersTwoStatesEnumerated) {
  const EnsembleDynamics ens(2, 1, {{0.5, 0.5, 1, 0}, {0.2, 0.8, 0, 1}, {1, 0, 0.5, 0.5}});
  TabularQ q(2, 1);
  q(0, 0) = 2.0, q(1, 0) = -1.0;
  const std::vector<TransitionRecord> batch = {{0, 0, 0.0, 1, Domain::src},
                                               {1, 0, 0.0, 0, Domain::src},
                                               {0, 0, 0.25, 0, Domain::tar}};
  const auto t = rcb_ensemble_backup(q, batch, ens, ActionSupport::all(2, 1), 0.5, 7);
  // any draw containing state 1 gives -0.5, a draw of all zeros gives 1.0
  for (int i = 0; i < 2; ++i) {
    const auto draw = sample_set(ens, batch[i].s, 0, record_seed(7, i));
    const bool hit = std::count(draw.begin(), draw.end(), StateId{1}) > 0;
    EXPECT_DOUBLE_EQ(t[i], hit ? -0.5 : 1.0);
  }
  // member 1 at state 1 is forced to state 1
  EXPECT_DOUBLE_EQ(t[1], -0.5);
  EXPECT_DOUBLE_EQ(t[2], 0.25 + 0.5 * 2.0);
}

TEST(FixedPoint, StandardMatchesPolicyEnumeration) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(300 + seed);
    RandomMdpOptions o;
    o.max_states = 5;
    o.max_actions = 3;
    const auto m = random_mdp(rng, o);
    const auto all = ActionSupport::all(m.n_states, m.n_actions);
    BackupParams p;
    p.src = &m;
    const auto q = fixed_point(BackupKind::standard, p, TabularQ(m.n_states, m.n_actions), 1e-12);
    EXPECT_LT(max_abs_diff(q, oracle::best_support_policy_q(m, all)), 1e-8);
  }
}

TEST(FixedPoint, InitializationIndependent) {
  Rng rng(7);
  const auto m = random_mdp(rng);
  BackupParams p;
  p.src = &m;
  p.support = random_support(rng, m.n_states, m.n_actions, false);
  p.eps = 1.0;
  TabularQ hi(m.n_states, m.n_actions);
  std::fill(hi.values.begin(), hi.values.end(), m.value_bound());
  const double tol = 1e-10;
  const auto a = fixed_point(BackupKind::rcb_exact, p, TabularQ(m.n_states, m.n_actions), tol);
  const auto b = fixed_point(BackupKind::rcb_exact, p, hi, tol);
  EXPECT_LT(max_abs_diff(a, b), 2.0 * tol / (1.0 - m.gamma));
}

TEST(FixedPoint, PracticalZeroRadiusEqualsInSampleOptimum) {
  Rng rng(8);
  const auto m = line_mdp(rng, 9, 4);
  const auto sup = random_support(rng, m.n_states, m.n_actions, false);
  BackupParams p;
  p.src = &m;
  p.support = sup;
  const auto q = fixed_point(BackupKind::rcb_practical, p, TabularQ(m.n_states, m.n_actions));
  EXPECT_LT(max_abs_diff(q, optimal_q_in_sample(m, sup)), 1e-8);
}

TEST(FixedPoint, EnsembleKindAveragesRecordTargets) {
  std::vector<double> row = {0, 1, 0, 1};
  const EnsembleDynamics ens(2, 1, {row, row});
  BackupParams p;
  p.ensemble = &ens;
  p.gamma = 0.5;
  p.records = {{0, 0, 1.0, 0, Domain::src}, {1, 0, 0.0, 1, Domain::tar}};
  const auto q = fixed_point(BackupKind::rcb_ensemble, p, TabularQ(2, 1), 1e-13);
  // Q(1) = 0.5 Q(1) -> 0; Q(0) = 1 + 0.5 Q(1) = 1
  EXPECT_NEAR(q(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(q(1, 0), 0.0, 1e-12);
  BackupParams bad;
  EXPECT_THROW(Backup(BackupKind::rcb_ensemble, bad), std::invalid_argument);
  EXPECT_THROW(Backup(BackupKind::standard, bad), std::invalid_argument);
}

TEST(SupportCondition, LargestDistanceToTargetSupport) {
  auto tar = FiniteMDP::zeros(4, 1, 0.9);
  for (StateId i = 0; i < 4; ++i)
    for (StateId j = 0; j < 4; ++j) tar.d(i, j) = std::abs(double(i) - double(j));
  for (StateId s = 0; s < 4; ++s) tar.row(s, 0)[s] = 1.0;
  tar.row(2, 0)[2] = 0.5, tar.row(2, 0)[0] = 0.25, tar.row(2, 0)[3] = 0.25;
  const std::vector<TransitionRecord> recs = {{2, 0, 0.0, 1, Domain::src},
                                              {0, 0, 0.0, 0, Domain::src}};
  EXPECT_DOUBLE_EQ(support_condition_eps(recs, tar), 2.0);
  EXPECT_DOUBLE_EQ(support_condition_eps({}, tar), 0.0);
}

TEST(CThreshold, WholeSpaceGivesDiameter) {
  const auto m = build_grid(default_grid());
  const auto recs = kernel_records(m, std::vector<char>(m.n_states * m.n_actions, 1));
  EXPECT_DOUBLE_EQ(compute_c_threshold(recs, m, m.metric_view().diameter()),
                   m.metric_view().diameter());
}

TEST(CThreshold, SameNextStateGivesRadius) {
  // deterministic target whose records observe exactly the target successor
  auto m = FiniteMDP::zeros(6, 1, 0.9);
  for (StateId i = 0; i < 6; ++i)
    for (StateId j = 0; j < 6; ++j) m.d(i, j) = std::abs(double(i) - double(j));
  for (StateId s = 0; s < 6; ++s) m.row(s, 0)[s == 0 ? 0 : s - 1] = 1.0;
  std::vector<TransitionRecord> recs;
  for (StateId s = 0; s < 6; ++s) recs.push_back({s, 0, 0.0, s == 0 ? 0 : s - 1, Domain::src});
  EXPECT_DOUBLE_EQ(compute_c_threshold(recs, m, 2.0), 2.0);
  EXPECT_DOUBLE_EQ(compute_c_threshold(recs, m, 3.0), 3.0);
}

TEST(CThreshold, GridMatchesContainmentScan) {
  const auto g = default_grid();
  const auto tar = build_grid(g);
  auto shifted = g;
  shifted.shift = KinematicShift{kDown, 0.5};
  const auto src = build_grid(shifted);
  const auto recs = kernel_records(src, std::vector<char>(src.n_states * src.n_actions, 1));
  const double eps = support_condition_eps(recs, tar) + 1.0;
  const auto S = tar.n_states;
  auto contained = [&](double c) {
    for (const auto& rec : recs)
      for (StateId center = 0; center < S; ++center) {
        if (tar.row(rec.s, rec.a)[center] <= 0.0) continue;
        for (StateId x = 0; x < S; ++x)
          if (tar.d(center, x) <= c && tar.d(rec.sp, x) > eps) return false;
      }
    return true;
  };
  double best = -std::numeric_limits<double>::infinity();
  for (double c : tar.metric) best = contained(c) ? std::max(best, c) : best;
  EXPECT_DOUBLE_EQ(compute_c_threshold(recs, tar, eps), best);
}
