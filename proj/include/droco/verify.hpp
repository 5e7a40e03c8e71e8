#pragma once

// Randomized executable checks of the operator properties: contraction,
// fixed-point uniqueness, duality ordering, train/test-time bounds, limited
// overestimation and loss/target identities.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "droco/dataset.hpp"
#include "droco/ensemble.hpp"
#include "droco/learner.hpp"
#include "droco/mdp.hpp"
#include "droco/operators.hpp"
#include "droco/planning.hpp"
#include "droco/rng.hpp"
#include "droco/transport.hpp"

namespace droco {

struct TrialDetail {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  double violation = 0.0;  // > 0 means the property failed by this much
  std::string note;
};

struct PropCheckResult {
  std::string prop;
  std::size_t trials = 0;
  std::size_t violations = 0;
  double max_violation = 0.0;
  std::optional<double> median_gap;
  std::uint64_t seed = 0;
  std::vector<TrialDetail> details;

  bool ok() const { return violations == 0; }

  void record(std::size_t index, std::uint64_t trial_seed, double violation,
              std::string note = {}) {
    ++trials;
    if (violation > 0.0) {
      ++violations;
      max_violation = std::max(max_violation, violation);
    }
    details.push_back({index, trial_seed, std::max(violation, 0.0), std::move(note)});
  }
};

namespace tolerance {
inline constexpr double kContraction = 1e-9;
inline constexpr double kUniqueness = 1e-6;
inline constexpr double kValueIteration = 1e-8;
inline constexpr double kWeakDuality = 1e-7;
inline constexpr double kBallNesting = 1e-9;
inline constexpr double kSandwich = 1e-6;
inline constexpr double kTestTime = 1e-6;
inline constexpr double kStandardErrors = 3.0;
inline constexpr double kOverestimationAbs = 1e-9;
inline constexpr double kZeroRadius = 1e-12;
inline constexpr double kPerturbationRadius = 1e-12;
}  // namespace tolerance

namespace defaults {
inline constexpr std::size_t kContractionTrials = 200;
inline constexpr std::size_t kUniquenessTrials = 100;
inline constexpr std::size_t kDualTrials = 200;
inline constexpr std::size_t kTrainTimeTrials = 50;
inline constexpr std::size_t kTestTimeTrials = 30;
inline constexpr std::size_t kPerturbations = 20;
inline constexpr std::size_t kOverestimationTrials = 50;
inline constexpr std::size_t kResamples = 2000;
inline constexpr std::size_t kIdentityTrials = 200;
}  // namespace defaults

// ---- random instances -----------------------------------------------------------

struct RandomMdpOptions {
  std::size_t min_states = 2;
  std::size_t max_states = 20;
  std::size_t min_actions = 1;
  std::size_t max_actions = 5;
  double min_gamma = 0.5;
  double max_gamma = 0.95;
  std::size_t max_successors = 4;
  int coordinate_range = 4;  // states sit on a grid of this side
};

/// Manhattan metric over random integer points; coincident points give a
/// pseudo-metric.
inline std::vector<double> random_metric(Rng& rng, std::size_t n, int range) {
  std::vector<int> x(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = static_cast<int>(rng.below(static_cast<std::size_t>(range)));
    y[i] = static_cast<int>(rng.below(static_cast<std::size_t>(range)));
  }
  // keep at least one positive distance
  if (n > 1 && std::all_of(x.begin(), x.end(), [&](int v) { return v == x[0]; }) &&
      std::all_of(y.begin(), y.end(), [&](int v) { return v == y[0]; }))
    x[n - 1] = (x[0] + 1) % range;
  std::vector<double> d(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      d[i * n + j] = std::abs(x[i] - x[j]) + std::abs(y[i] - y[j]);
  return d;
}

inline std::vector<double> random_distribution(Rng& rng, std::size_t n, std::size_t max_support) {
  std::vector<double> p(n, 0.0);
  const auto k = 1 + rng.below(std::min(n, max_support));
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = 0.05 + rng.uniform();
    p[rng.below(n)] += w;
    total += w;
  }
  for (auto& x : p) x /= total;
  return p;
}

inline FiniteMDP random_mdp(Rng& rng, const RandomMdpOptions& o = {}) {
  const auto S = o.min_states + rng.below(o.max_states - o.min_states + 1);
  const auto A = o.min_actions + rng.below(o.max_actions - o.min_actions + 1);
  const double gamma = rng.uniform(o.min_gamma, o.max_gamma);
  FiniteMDP m = FiniteMDP::zeros(S, A, gamma, 1.0);
  for (StateId s = 0; s < S; ++s)
    for (ActionId a = 0; a < A; ++a) {
      const auto p = random_distribution(rng, S, o.max_successors);
      std::copy(p.begin(), p.end(), m.row(s, a).begin());
      m.r(s, a) = rng.uniform(-1.0, 1.0);
    }
  m.init_dist = random_distribution(rng, S, S);
  m.metric = random_metric(rng, S, o.coordinate_range);
  validate(m);
  return m;
}

/// Same rewards, discount and metric; every atom of the source kernel moves a
/// random share of its mass to a state within `radius` of it.
inline FiniteMDP perturbed_kernel(const FiniteMDP& base, Rng& rng, double radius) {
  FiniteMDP out = base;
  const auto S = base.n_states;
  std::vector<StateId> near;
  for (StateId s = 0; s < S; ++s)
    for (ActionId a = 0; a < base.n_actions; ++a) {
      const auto src = base.row(s, a);
      auto dst = out.row(s, a);
      std::fill(dst.begin(), dst.end(), 0.0);
      for (StateId i = 0; i < S; ++i) {
        if (src[i] <= 0.0) continue;
        near.clear();
        for (StateId j = 0; j < S; ++j)
          if (base.d(i, j) <= radius) near.push_back(j);
        const double moved = src[i] * rng.uniform();
        dst[i] += src[i] - moved;
        dst[near[rng.below(near.size())]] += moved;
      }
    }
  return out;
}

inline ActionSupport random_support(Rng& rng, std::size_t S, std::size_t A, bool allow_empty) {
  ActionSupport sup(S, A, false);
  for (StateId s = 0; s < S; ++s) {
    for (ActionId a = 0; a < A; ++a)
      if (rng.uniform() < 0.6) sup.set(s, a);
    if (sup.empty(s) && !(allow_empty && rng.uniform() < 0.3)) sup.set(s, rng.below(A));
  }
  return sup;
}

/// One support set shared by every state.
inline ActionSupport shared_support(Rng& rng, std::size_t S, std::size_t A) {
  std::vector<char> keep(A, 0);
  for (ActionId a = 0; a < A; ++a) keep[a] = rng.uniform() < 0.6;
  keep[rng.below(A)] = 1;
  ActionSupport sup(S, A, false);
  for (StateId s = 0; s < S; ++s)
    for (ActionId a = 0; a < A; ++a) sup.set(s, a, keep[a] != 0);
  return sup;
}

inline TabularQ random_q(Rng& rng, std::size_t S, std::size_t A, double bound) {
  TabularQ q(S, A);
  for (auto& x : q.values) x = rng.uniform(-bound, bound);
  return q;
}

/// Source records (s, a, s'_src) for every supported s'_src of every
/// source-covered pair.
inline std::vector<TransitionRecord> kernel_records(const FiniteMDP& src,
                                                    std::span<const char> source_pairs) {
  std::vector<TransitionRecord> out;
  for (StateId s = 0; s < src.n_states; ++s)
    for (ActionId a = 0; a < src.n_actions; ++a) {
      if (!detail::is_source_pair(source_pairs, src.n_actions, s, a)) continue;
      const auto row = src.row(s, a);
      for (StateId sp = 0; sp < src.n_states; ++sp)
        if (row[sp] > 0.0) out.push_back({s, a, src.r(s, a), sp, Domain::src});
    }
  return out;
}

// ---- checkers ---------------------------------------------------------------------

inline PropCheckResult check_contraction(std::size_t trials = defaults::kContractionTrials,
                                         std::uint64_t seed = 0) {
  PropCheckResult res;
  res.prop = "contraction";
  res.seed = seed;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto ts = derive_seed(seed, "contraction", t);
    Rng rng(ts);
    RandomMdpOptions opt;
    opt.min_gamma = 0.0;
    opt.max_gamma = 0.99;
    const auto src = random_mdp(rng, opt);
    FiniteMDP tar = perturbed_kernel(src, rng, 2.0);
    const auto S = src.n_states, A = src.n_actions;
    const auto support = random_support(rng, S, A, true);
    std::vector<char> pairs(S * A);
    for (auto& c : pairs) c = rng.uniform() < 0.7;
    const double eps = rng.uniform(0.0, 4.0);
    const double bound = src.value_bound();
    const auto q1 = random_q(rng, S, A, bound);
    const auto q2 = t % 10 == 0 ? q1 : random_q(rng, S, A, bound);
    const double rhs = src.gamma * sup_norm_diff(q1.values, q2.values);

    const auto e1 = rcb_exact_backup(q1, src, &tar, support, eps, pairs);
    const auto e2 = rcb_exact_backup(q2, src, &tar, support, eps, pairs);
    const auto p1 = rcb_practical_backup(q1, src, &tar, support, eps, pairs);
    const auto p2 = rcb_practical_backup(q2, src, &tar, support, eps, pairs);
    const double v_exact = sup_norm_diff(e1.values, e2.values) - rhs - tolerance::kContraction;
    const double v_prac = sup_norm_diff(p1.values, p2.values) - rhs - tolerance::kContraction;
    res.record(t, ts, std::max(v_exact, v_prac),
               detail::concat("S=", S, " A=", A, " eps=", eps, " gamma=", src.gamma));
  }
  return res;
}

/// Value iteration on V, independent of the Q-table backup code path.
inline TabularQ value_iteration_q(const FiniteMDP& mdp, double tol = 1e-12) {
  const auto S = mdp.n_states, A = mdp.n_actions;
  std::vector<double> v(S, 0.0), next(S);
  for (std::size_t sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double change = 0.0;
    for (StateId s = 0; s < S; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (ActionId a = 0; a < A; ++a) {
        const auto row = mdp.row(s, a);
        double acc = 0.0;
        for (StateId sp = 0; sp < S; ++sp) acc += row[sp] * v[sp];
        best = std::max(best, mdp.r(s, a) + mdp.gamma * acc);
      }
      next[s] = best;
      change = std::max(change, std::abs(best - v[s]));
    }
    v.swap(next);
    if (change <= tol * (1.0 - mdp.gamma)) break;
  }
  TabularQ q(S, A);
  for (StateId s = 0; s < S; ++s)
    for (ActionId a = 0; a < A; ++a) {
      const auto row = mdp.row(s, a);
      double acc = 0.0;
      for (StateId sp = 0; sp < S; ++sp) acc += row[sp] * v[sp];
      q(s, a) = mdp.r(s, a) + mdp.gamma * acc;
    }
  return q;
}

inline PropCheckResult check_fixed_point_uniqueness(
    std::size_t trials = defaults::kUniquenessTrials, std::uint64_t seed = 0) {
  PropCheckResult res;
  res.prop = "fixed_point_uniqueness";
  res.seed = seed;
  constexpr BackupKind kinds[] = {BackupKind::standard, BackupKind::in_sample,
                                  BackupKind::rcb_exact, BackupKind::rcb_practical};
  for (std::size_t t = 0; t < trials; ++t) {
    const auto ts = derive_seed(seed, "uniqueness", t);
    Rng rng(ts);
    RandomMdpOptions opt;
    opt.max_states = 12;
    const auto src = random_mdp(rng, opt);
    const auto kind = kinds[t % 4];
    BackupParams params;
    params.src = &src;
    params.support = random_support(rng, src.n_states, src.n_actions,
                                    kind != BackupKind::in_sample);
    params.eps = rng.uniform(0.0, 3.0);
    const Backup backup(kind, params);
    const double bound = src.value_bound();
    const auto a = fixed_point(backup, TabularQ(src.n_states, src.n_actions), kFixedPointTol);
    const auto b = fixed_point(backup, TabularQ(src.n_states, src.n_actions, bound),
                               kFixedPointTol);
    double violation = sup_norm_diff(a.values, b.values) - tolerance::kUniqueness;
    if (kind == BackupKind::standard) {
      const auto oracle = value_iteration_q(src);
      violation = std::max(violation,
                           sup_norm_diff(a.values, oracle.values) - tolerance::kValueIteration);
    }
    res.record(t, ts, violation, to_string(kind));
  }
  return res;
}

inline PropCheckResult check_dual_ordering(std::size_t trials = defaults::kDualTrials,
                                           std::uint64_t seed = 0) {
  PropCheckResult res;
  res.prop = "dual_ordering";
  res.seed = seed;
  std::vector<double> gaps;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto ts = derive_seed(seed, "dual", t);
    Rng rng(ts);
    const auto n = 2 + rng.below(7);
    const auto metric_table = random_metric(rng, n, 5);
    const MetricView metric{n, metric_table};
    const auto p = random_distribution(rng, n, 6);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-10.0, 10.0);
    const double eps = t % 20 == 0 ? 0.0 : rng.uniform(0.0, 3.0);

    const double ball = robust_inf_over_w1_ball(p, v, metric, eps);
    const double per_sample = per_sample_ball_value(p, v, metric, eps);
    const auto dual = dual_sup_ternary(p, v, metric, eps);
    double grid_best = -std::numeric_limits<double>::infinity();
    const double lam_max = lambda_upper_bound(v, metric);
    for (std::size_t k = 0; k < 64; ++k)
      grid_best = std::max(grid_best, lambda_dual_value(p, v, metric, eps,
                                                        lam_max * static_cast<double>(k) / 63.0));
    const double weak = std::max(dual.value, grid_best) - ball - tolerance::kWeakDuality;
    const double nest = ball - per_sample - tolerance::kBallNesting;
    gaps.push_back(ball - dual.value);
    res.record(t, ts, std::max(weak, nest),
               detail::concat("n=", n, " eps=", eps, " gap=", ball - dual.value));
  }
  if (!gaps.empty()) {
    std::sort(gaps.begin(), gaps.end());
    const auto m = gaps.size() / 2;
    res.median_gap = gaps.size() % 2 ? gaps[m] : 0.5 * (gaps[m - 1] + gaps[m]);
  }
  return res;
}

/// Source/target pair sharing rewards and metric, the source kernel a
/// bounded-move perturbation of the target.
struct ConstructedPair {
  FiniteMDP src;
  FiniteMDP tar;
  ActionSupport support;
  std::vector<char> source_pairs;
  std::vector<TransitionRecord> records;
  double eps = 0.0;
};

inline ConstructedPair construct_pair(Rng& rng, bool shared, bool cover_all) {
  RandomMdpOptions opt;
  opt.max_states = 10;
  opt.max_actions = 4;
  opt.max_gamma = 0.9;
  ConstructedPair c;
  c.tar = random_mdp(rng, opt);
  c.src = perturbed_kernel(c.tar, rng, 1.0 + static_cast<double>(rng.below(2)));
  const auto S = c.tar.n_states, A = c.tar.n_actions;
  c.support = shared ? shared_support(rng, S, A) : random_support(rng, S, A, false);
  c.source_pairs.assign(S * A, 1);
  if (!cover_all)
    for (auto& x : c.source_pairs) x = rng.uniform() < 0.75;
  c.records = kernel_records(c.src, c.source_pairs);
  c.eps = support_condition_eps(c.records, c.tar);
  return c;
}

inline PropCheckResult check_train_time_bound(std::size_t trials = defaults::kTrainTimeTrials,
                                              std::uint64_t seed = 0) {
  PropCheckResult res;
  res.prop = "train_time_bound";
  res.seed = seed;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto ts = derive_seed(seed, "train_time", t);
    Rng rng(ts);
    const auto c = construct_pair(rng, true, t % 2 == 0);
    // the construction must satisfy the support condition
    for (const auto& rec : c.records) {
      const auto row = c.tar.row(rec.s, rec.a);
      for (StateId x = 0; x < c.tar.n_states; ++x)
        if (row[x] > 0.0 && c.tar.d(rec.sp, x) > c.eps)
          throw std::logic_error("constructed pair violates the support condition");
    }
    const auto q_star = optimal_q_in_sample(c.tar, c.support);
    BackupParams params;
    params.src = &c.src;
    params.tar = &c.tar;
    params.support = c.support;
    params.eps = c.eps;
    params.source_pairs = c.source_pairs;
    const auto q_hat = fixed_point(BackupKind::rcb_practical, params,
                                   TabularQ(c.tar.n_states, c.tar.n_actions));
    const double k = lipschitz_constant(q_hat, c.tar.metric_view());
    const double slack = 2.0 * c.tar.gamma * c.eps * k / (1.0 - c.tar.gamma);
    double violation = -std::numeric_limits<double>::infinity();
    for (StateId s = 0; s < c.tar.n_states; ++s)
      for (ActionId a = 0; a < c.tar.n_actions; ++a) {
        if (!c.source_pairs[s * c.tar.n_actions + a]) continue;
        violation = std::max(violation, q_hat(s, a) - q_star(s, a) - tolerance::kSandwich);
        violation = std::max(violation, q_star(s, a) - slack - q_hat(s, a) - tolerance::kSandwich);
      }
    res.record(t, ts, violation, detail::concat("eps=", c.eps, " K=", k));
  }
  return res;
}

inline PropCheckResult check_test_time_bound(std::size_t trials = defaults::kTestTimeTrials,
                                             std::size_t n_perturbations = defaults::kPerturbations,
                                             std::uint64_t seed = 0) {
  PropCheckResult res;
  res.prop = "test_time_bound";
  res.seed = seed;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto ts = derive_seed(seed, "test_time", t);
    Rng rng(ts);
    const auto c = construct_pair(rng, false, true);
    const double radius = compute_c_threshold(c.records, c.tar, c.eps);
    if (!std::isfinite(radius)) throw std::logic_error("support condition unsatisfiable");
    BackupParams params;
    params.src = &c.src;
    params.support = c.support;
    params.eps = c.eps;
    const auto q_hat =
        fixed_point(BackupKind::rcb_practical, params, TabularQ(c.tar.n_states, c.tar.n_actions));
    const auto v_hat = support_values(q_hat, c.support);
    const auto pi = greedy_policy(q_hat, c.support);

    std::vector<char> start(c.tar.n_states, 0);
    for (const auto& rec : c.records) start[rec.s] = 1;

    double violation = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n_perturbations; ++k) {
      const FiniteMDP per = k == 0 ? c.tar : perturbed_kernel(c.tar, rng, radius);
      for (StateId s = 0; s < per.n_states; ++s)
        for (ActionId a = 0; a < per.n_actions; ++a)
          if (wasserstein_1(per.row(s, a), c.tar.row(s, a), per.metric_view()) >
              radius + tolerance::kPerturbationRadius)
            throw std::logic_error("perturbed kernel exceeds the test-time radius");
      const auto v_per = policy_eval_exact(per, pi, 1e-12);
      for (StateId s = 0; s < per.n_states; ++s)
        if (start[s]) violation = std::max(violation, v_hat(s) - v_per(s) - tolerance::kTestTime);
    }
    res.record(t, ts, violation, detail::concat("eps=", c.eps, " c=", radius));
  }
  return res;
}

/// Upper bound on the expected ensemble-min target.
inline double overestimation_bound(double expected_max, double tv, std::size_t n_members,
                                   double r_max, double gamma) {
  return expected_max +
         (1.0 - std::pow(1.0 - 2.0 * tv, static_cast<double>(n_members))) * r_max / (1.0 - gamma);
}

inline PropCheckResult check_limited_overestimation(
    std::size_t trials = defaults::kOverestimationTrials,
    std::size_t resamples = defaults::kResamples, std::uint64_t seed = 0) {
  PropCheckResult res;
  res.prop = "limited_overestimation";
  res.seed = seed;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto ts = derive_seed(seed, "overestimation", t);
    Rng rng(ts);
    RandomMdpOptions opt;
    opt.max_states = 6;
    opt.max_actions = 3;
    const auto mdp = random_mdp(rng, opt);
    const auto S = mdp.n_states, A = mdp.n_actions;
    OfflineDataset ds(S, A);
    const std::size_t per_pair = 40 + rng.below(160);
    for (StateId s = 0; s < S; ++s)
      for (ActionId a = 0; a < A; ++a)
        for (std::size_t k = 0; k < per_pair; ++k)
          ds.add({s, a, mdp.r(s, a), rng.categorical(mdp.row(s, a)), Domain::tar});
    const std::size_t n_members = 1 + rng.below(7);
    const auto ens = fit(ds, n_members, kDefaultSmoothingAlpha, derive_seed(ts, "fit"));
    const double tv = tv_error(ens, mdp);
    if (!(tv < 0.5))
      throw std::logic_error(detail::concat("ensemble TV error ", tv, " is not below 1/2"));
    const auto support = random_support(rng, S, A, false);
    const auto q = random_q(rng, S, A, mdp.value_bound());
    const auto v_support = support_values(q, support);

    double violation = -std::numeric_limits<double>::infinity();
    for (StateId s = 0; s < S; ++s)
      for (ActionId a = 0; a < A; ++a) {
        double expected_max = 0.0;
        const auto row = mdp.row(s, a);
        for (StateId sp = 0; sp < S; ++sp) expected_max += row[sp] * unconstrained_max(q, sp);
        double sum = 0.0, sum_sq = 0.0;
        for (std::size_t k = 0; k < resamples; ++k) {
          const auto samples = sample_set(ens, s, a, rng);
          const double x = worst_sample_value(v_support, samples);
          sum += x;
          sum_sq += x * x;
        }
        const double n = static_cast<double>(resamples);
        const double mean = sum / n;
        const double var = n > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1)) : 0.0;
        const double se = std::sqrt(var / n);
        const double bound = overestimation_bound(expected_max, tv, n_members, mdp.r_max, mdp.gamma);
        violation = std::max(violation, mean - bound - tolerance::kStandardErrors * se -
                                            tolerance::kOverestimationAbs);
      }
    res.record(t, ts, violation, detail::concat("N=", n_members, " tv=", tv));
  }
  return res;
}

/// Target identities and loss unit values.
inline PropCheckResult check_identities(std::size_t trials = defaults::kIdentityTrials,
                                        std::uint64_t seed = 0) {
  PropCheckResult res;
  res.prop = "identities";
  res.seed = seed;
  auto unit = [&](std::size_t index, double got, double want, const char* what) {
    res.record(index, seed, got == want ? 0.0 : std::max(std::abs(got - want), 1e-300), what);
  };
  unit(0, expectile_loss(1.0, 0.7), 0.7, "expectile(1, 0.7)");
  unit(1, expectile_loss(-1.0, 0.7), 1.0 - 0.7, "expectile(-1, 0.7)");
  unit(2, huber(10.0, 30.0), 50.0, "huber(10, 30)");
  unit(3, huber(50.0, 30.0), 1050.0, "huber(50, 30)");

  for (std::size_t t = 0; t < trials; ++t) {
    const auto ts = derive_seed(seed, "identities", t);
    Rng rng(ts);
    RandomMdpOptions opt;
    opt.max_states = 8;
    auto mdp = random_mdp(rng, opt);
    const auto S = mdp.n_states, A = mdp.n_actions;
    // a proper metric, so that the zero-radius ball is the sampled state alone
    for (StateId i = 0; i < S; ++i)
      for (StateId j = 0; j < S; ++j)
        mdp.d(i, j) = std::abs(static_cast<double>(i) - static_cast<double>(j));
    const auto support = random_support(rng, S, A, false);
    const auto q = random_q(rng, S, A, mdp.value_bound());

    // practical backup at eps = 0 against the in-sample backup
    double violation = 0.0;
    const auto practical = rcb_practical_backup(q, mdp, support, 0.0);
    const auto v = support_values(q, support);
    for (StateId s = 0; s < S; ++s)
      for (ActionId a = 0; a < A; ++a) {
        double acc = 0.0;
        const auto row = mdp.row(s, a);
        for (StateId sp = 0; sp < S; ++sp)
          if (row[sp] > 0.0) acc += row[sp] * v(sp);
        violation = std::max(violation,
                             std::abs(practical(s, a) - (mdp.r(s, a) + mdp.gamma * acc)) - 1e-12);
      }

    // beta = 1 penalized target against the ensemble-min target
    OfflineDataset ds(S, A);
    for (std::size_t k = 0; k < 4 * S * A; ++k) {
      const auto s = rng.below(S), a = rng.below(A);
      ds.add({s, a, mdp.r(s, a), rng.categorical(mdp.row(s, a)), Domain::tar});
    }
    const auto ens = fit(ds, 1 + rng.below(7), kDefaultSmoothingAlpha, derive_seed(ts, "fit"));
    std::vector<TransitionRecord> batch;
    for (std::size_t k = 0; k < 16; ++k) {
      const auto s = rng.below(S), a = rng.below(A);
      batch.push_back({s, a, mdp.r(s, a), rng.categorical(mdp.row(s, a)),
                       rng.uniform() < 0.5 ? Domain::src : Domain::tar});
    }
    const std::uint64_t batch_seed = derive_seed(ts, "batch");
    const auto targets = rcb_ensemble_backup(q, batch, ens, support, mdp.gamma, batch_seed);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      ValuePenalty pen{0.0, v(batch[i].sp)};
      if (batch[i].domain == Domain::src) {
        Rng draw(record_seed(batch_seed, i));
        pen = penalty_terms(batch[i], v, ens, draw);
      }
      const double y = td_target(batch[i], v, pen, 1.0, mdp.gamma);
      if (y != targets[i]) violation = std::max(violation, std::max(std::abs(y - targets[i]), 1e-300));
    }
    res.record(4 + t, ts, violation > 0.0 ? violation : 0.0);
  }
  return res;
}

// ---- summary --------------------------------------------------------------------

struct VerifySummary {
  std::vector<PropCheckResult> results;

  bool ok() const {
    return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.ok(); });
  }
};

inline const std::vector<std::string>& checker_ids() {
  static const std::vector<std::string> ids = {
      "contraction",     "fixed_point_uniqueness", "dual_ordering",          "train_time_bound",
      "test_time_bound", "limited_overestimation", "identities"};
  return ids;
}

/// Runs one checker by id; trials == 0 selects its default count.
inline PropCheckResult run_checker(const std::string& id, std::size_t trials, std::uint64_t seed) {
  auto pick = [&](std::size_t def) { return trials ? trials : def; };
  if (id == "contraction") return check_contraction(pick(defaults::kContractionTrials), seed);
  if (id == "fixed_point_uniqueness")
    return check_fixed_point_uniqueness(pick(defaults::kUniquenessTrials), seed);
  if (id == "dual_ordering") return check_dual_ordering(pick(defaults::kDualTrials), seed);
  if (id == "train_time_bound") return check_train_time_bound(pick(defaults::kTrainTimeTrials), seed);
  if (id == "test_time_bound")
    return check_test_time_bound(pick(defaults::kTestTimeTrials), defaults::kPerturbations, seed);
  if (id == "limited_overestimation")
    return check_limited_overestimation(pick(defaults::kOverestimationTrials),
                                        defaults::kResamples, seed);
  if (id == "identities") return check_identities(pick(defaults::kIdentityTrials), seed);
  throw std::invalid_argument("unknown checker: " + id);
}

inline VerifySummary run_all(std::uint64_t seed = 0) {
  VerifySummary out;
  for (const auto& id : checker_ids()) out.results.push_back(run_checker(id, 0, seed));
  return out;
}

inline nlohmann::json to_json(const PropCheckResult& r) {
  nlohmann::json j{{"prop", r.prop},
                   {"trials", r.trials},
                   {"violations", r.violations},
                   {"max_violation", r.max_violation},
                   {"seed", r.seed}};
  if (r.median_gap) j["median_gap"] = *r.median_gap;
  auto failed = nlohmann::json::array();
  for (const auto& d : r.details)
    if (d.violation > 0.0)
      failed.push_back({{"trial", d.index}, {"seed", d.seed}, {"violation", d.violation},
                        {"note", d.note}});
  j["failed_trials"] = std::move(failed);
  return j;
}

inline nlohmann::json to_json(const VerifySummary& s) {
  auto arr = nlohmann::json::array();
  for (const auto& r : s.results) arr.push_back(to_json(r));
  return arr;
}

inline void print_table(const VerifySummary& s, std::ostream& out) {
  out << std::left << std::setw(26) << "check" << std::right << std::setw(8) << "trials"
      << std::setw(12) << "violations" << std::setw(16) << "max_violation" << std::setw(16)
      << "median_gap" << "  status\n";
  for (const auto& r : s.results) {
    out << std::left << std::setw(26) << r.prop << std::right << std::setw(8) << r.trials
        << std::setw(12) << r.violations << std::setw(16) << std::setprecision(6)
        << r.max_violation << std::setw(16);
    if (r.median_gap)
      out << *r.median_gap;
    else
      out << "-";
    out << "  " << (r.ok() ? "ok" : "FAIL") << '\n';
  }
}

}  // namespace droco
