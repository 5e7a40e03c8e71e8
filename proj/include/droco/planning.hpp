#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <utility>

#include "droco/mdp.hpp"

namespace droco {

inline constexpr double kFixedPointTol = 1e-10;
inline constexpr std::size_t kMaxSweeps = 100000;

/// Iterates q <- backup(q) until the sup-norm change is at most tol.
/// Throws ConvergenceError after max_sweeps.
template <typename Backup>
TabularQ iterate_to_fixed_point(Backup&& backup, TabularQ q, double tol = kFixedPointTol,
                                std::size_t max_sweeps = kMaxSweeps) {
  if (!(tol > 0.0)) throw std::invalid_argument("fixed point tolerance must be positive");
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    TabularQ next = backup(q);
    const double change = sup_norm_diff(next.values, q.values);
    q = std::move(next);
    if (change <= tol) return q;
  }
  throw ConvergenceError(detail::concat("no convergence after ", max_sweeps, " sweeps"));
}

/// Exact policy evaluation; the returned V satisfies |V - T^pi V| <= tol.
inline TabularV policy_eval_exact(const FiniteMDP& mdp, const TabularPolicy& pi,
                                  double tol = kFixedPointTol,
                                  std::size_t max_sweeps = kMaxSweeps) {
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
  validate(pi, mdp);
  const auto S = mdp.n_states;

  // Policy-induced chain in sparse form.
  std::vector<double> r_pi(S, 0.0);
  std::vector<std::vector<std::pair<StateId, double>>> p_pi(S);
  std::vector<double> dense(S);
  for (StateId s = 0; s < S; ++s) {
    std::fill(dense.begin(), dense.end(), 0.0);
    for (ActionId a = 0; a < mdp.n_actions; ++a) {
      const double w = pi(s, a);
      if (w == 0.0) continue;
      r_pi[s] += w * mdp.r(s, a);
      const auto row = mdp.row(s, a);
      for (StateId sp = 0; sp < S; ++sp) dense[sp] += w * row[sp];
    }
    for (StateId sp = 0; sp < S; ++sp)
      if (dense[sp] > 0.0) p_pi[s].emplace_back(sp, dense[sp]);
  }

  TabularV v(S);
  TabularV next(S);
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double change = 0.0;
    for (StateId s = 0; s < S; ++s) {
      double acc = 0.0;
      for (auto [sp, p] : p_pi[s]) acc += p * v(sp);
      next(s) = r_pi[s] + mdp.gamma * acc;
      change = std::max(change, std::abs(next(s) - v(s)));
    }
    std::swap(v, next);
    // residual of the returned iterate is at most gamma * change
    if (change <= tol) return v;
  }
  throw ConvergenceError("policy evaluation did not converge");
}

/// E_{s0 ~ rho}[V(s0)].
inline double expected_return(const FiniteMDP& mdp, const TabularV& v) {
  double total = 0.0;
  for (StateId s = 0; s < mdp.n_states; ++s) total += mdp.init_dist[s] * v(s);
  return total;
}

/// One in-sample optimality backup:
/// Q'(s,a) = r + gamma * E_{s'}[max_{a' in support(s')} Q(s',a')].
inline TabularQ in_sample_backup(const TabularQ& q, const FiniteMDP& mdp,
                                 const Successors& succ, const ActionSupport& support) {
  TabularQ out(mdp.n_states, mdp.n_actions);
  std::vector<double> v(mdp.n_states);
  std::vector<char> have(mdp.n_states, 0);
  for (StateId s = 0; s < mdp.n_states; ++s)
    for (ActionId a = 0; a < mdp.n_actions; ++a) {
      double acc = 0.0;
      for (const auto& [sp, p] : succ(s, a)) {
        if (!have[sp]) {
          v[sp] = support_max(q, support, sp);
          have[sp] = 1;
        }
        acc += p * v[sp];
      }
      out(s, a) = mdp.r(s, a) + mdp.gamma * acc;
    }
  return out;
}

inline TabularQ in_sample_backup(const TabularQ& q, const FiniteMDP& mdp,
                                 const ActionSupport& support) {
  return in_sample_backup(q, mdp, Successors(mdp), support);
}

/// Fixed point of the in-sample optimality operator (Q* restricted to
/// support-respecting policies).
inline TabularQ optimal_q_in_sample(const FiniteMDP& mdp, const ActionSupport& support,
                                    double tol = kFixedPointTol) {
  for (StateId s = 0; s < mdp.n_states; ++s)
    if (support.empty(s))
      throw std::invalid_argument(detail::concat("empty support at state ", s));
  const Successors succ(mdp);
  return iterate_to_fixed_point(
      [&](const TabularQ& q) { return in_sample_backup(q, mdp, succ, support); },
      TabularQ(mdp.n_states, mdp.n_actions), tol);
}

inline TabularQ optimal_q(const FiniteMDP& mdp, double tol = kFixedPointTol) {
  return optimal_q_in_sample(mdp, ActionSupport::all(mdp.n_states, mdp.n_actions), tol);
}

/// Deterministic greedy policy over the support (all actions where the
/// support is empty); lowest index wins ties.
inline TabularPolicy greedy_policy(const TabularQ& q, const ActionSupport& support) {
  TabularPolicy pi(q.n_states, q.n_actions);
  for (StateId s = 0; s < q.n_states; ++s) {
    const bool free = support.empty(s);
    ActionId best = 0;
    double best_v = -std::numeric_limits<double>::infinity();
    for (ActionId a = 0; a < q.n_actions; ++a)
      if ((free || support.contains(s, a)) && q(s, a) > best_v) {
        best_v = q(s, a);
        best = a;
      }
    pi.set_deterministic(s, best);
  }
  return pi;
}

inline TabularPolicy greedy_policy(const TabularQ& q) {
  return greedy_policy(q, ActionSupport::all(q.n_states, q.n_actions));
}

/// epsilon-greedy over the optimal Q of the MDP.
inline TabularPolicy epsilon_greedy(const TabularQ& q, double epsilon) {
  TabularPolicy pi = greedy_policy(q);
  const double uniform = epsilon / static_cast<double>(q.n_actions);
  for (auto& p : pi.probs) p = (1.0 - epsilon) * p + uniform;
  return pi;
}

}  // namespace droco
