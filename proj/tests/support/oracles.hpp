#pragma once

// Reference solvers used only by tests: a dense two-phase simplex for the
// transport LPs, exact enumeration of the Lagrangian breakpoints, Eigen
// linear solves for policy values and brute-force policy enumeration.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "droco/mdp.hpp"

namespace oracle {

using droco::ActionId;
using droco::ActionSupport;
using droco::FiniteMDP;
using droco::StateId;
using droco::TabularPolicy;
using droco::TabularQ;
using droco::TabularV;

/// min c.x subject to A x = b, x >= 0. Bland's rule, so it terminates on
/// degenerate instances. nullopt when infeasible.
inline std::optional<double> simplex_min(std::vector<double> c, std::vector<std::vector<double>> a,
                                         std::vector<double> b) {
  constexpr double tol = 1e-12;
  const std::size_t m = a.size(), n = c.size();
  for (std::size_t i = 0; i < m; ++i)
    if (b[i] < 0.0) {
      for (auto& x : a[i]) x = -x;
      b[i] = -b[i];
    }
  // tableau columns: n originals, m artificials, rhs
  const std::size_t cols = n + m + 1;
  std::vector<std::vector<double>> t(m, std::vector<double>(cols, 0.0));
  std::vector<std::size_t> basis(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(a[i].begin(), a[i].end(), t[i].begin());
    t[i][n + i] = 1.0;
    t[i][cols - 1] = b[i];
    basis[i] = n + i;
  }

  auto pivot = [&](std::size_t r, std::size_t col) {
    const double pv = t[r][col];
    for (auto& x : t[r]) x /= pv;
    for (std::size_t i = 0; i < m; ++i) {
      if (i == r || t[i][col] == 0.0) continue;
      const double f = t[i][col];
      for (std::size_t j = 0; j < cols; ++j) t[i][j] -= f * t[r][j];
    }
    basis[r] = col;
  };

  auto optimize = [&](const std::vector<double>& cost, std::size_t allowed_cols) {
    for (;;) {
      std::size_t enter = allowed_cols;
      for (std::size_t j = 0; j < allowed_cols; ++j) {
        double reduced = cost[j];
        for (std::size_t i = 0; i < m; ++i) reduced -= cost[basis[i]] * t[i][j];
        if (reduced < -1e-11) {
          enter = j;
          break;
        }
      }
      if (enter == allowed_cols) return true;
      std::size_t leave = m;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m; ++i) {
        if (t[i][enter] <= tol) continue;
        const double ratio = t[i][cols - 1] / t[i][enter];
        const bool tie = std::abs(ratio - best) <= 1e-15 && leave < m && basis[i] < basis[leave];
        if (ratio < best - 1e-15 || tie) {
          best = ratio;
          leave = i;
        }
      }
      if (leave == m) return false;  // unbounded
      pivot(leave, enter);
    }
  };

  std::vector<double> phase1(n + m, 0.0);
  for (std::size_t i = 0; i < m; ++i) phase1[n + i] = 1.0;
  optimize(phase1, n + m);
  double infeasibility = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (basis[i] >= n) infeasibility += t[i][cols - 1];
  if (infeasibility > 1e-9) return std::nullopt;
  for (std::size_t i = 0; i < m; ++i) {
    if (basis[i] < n) continue;
    for (std::size_t j = 0; j < n; ++j)
      if (std::abs(t[i][j]) > 1e-10) {
        pivot(i, j);
        break;
      }
  }

  std::vector<double> phase2(n + m, 0.0);
  std::copy(c.begin(), c.end(), phase2.begin());
  if (!optimize(phase2, n)) return -std::numeric_limits<double>::infinity();
  double value = 0.0;
  for (std::size_t i = 0; i < m; ++i) value += phase2[basis[i]] * t[i][cols - 1];
  return value;
}

/// Transport LP for W1(p, q) under metric table d.
inline double w1_lp(std::span<const double> p, std::span<const double> q,
                    std::span<const double> d) {
  const std::size_t k = p.size();
  std::vector<double> c(k * k);
  std::vector<std::vector<double>> a(2 * k, std::vector<double>(k * k, 0.0));
  std::vector<double> b(2 * k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      c[i * k + j] = d[i * k + j];
      a[i][i * k + j] = 1.0;
      a[k + j][i * k + j] = 1.0;
    }
  for (std::size_t i = 0; i < k; ++i) b[i] = p[i], b[k + i] = q[i];
  return *simplex_min(c, a, b);
}

/// inf of sum q v over the W1 ball of radius eps around p, as an LP over
/// couplings plus a budget slack.
inline double ball_lp(std::span<const double> p, std::span<const double> v,
                      std::span<const double> d, double eps) {
  const std::size_t k = p.size();
  const std::size_t n = k * k + 1;
  std::vector<double> c(n, 0.0);
  std::vector<std::vector<double>> a(k + 1, std::vector<double>(n, 0.0));
  std::vector<double> b(k + 1);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      c[i * k + j] = v[j];
      a[i][i * k + j] = 1.0;
      a[k][i * k + j] = d[i * k + j];
    }
    b[i] = p[i];
  }
  a[k][k * k] = 1.0;
  b[k] = eps;
  return *simplex_min(c, a, b);
}

/// sup over lam >= 0 of -lam eps + sum_i p_i min_j (v_j + lam d_ij): the
/// concave piecewise-linear function peaks at 0 or at a breakpoint.
inline double dual_breakpoints(std::span<const double> p, std::span<const double> v,
                               std::span<const double> d, double eps) {
  const std::size_t k = p.size();
  auto g = [&](double lam) {
    double acc = -lam * eps;
    for (std::size_t i = 0; i < k; ++i) {
      if (p[i] <= 0.0) continue;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) best = std::min(best, v[j] + lam * d[i * k + j]);
      acc += p[i] * best;
    }
    return acc;
  };
  std::vector<double> candidates = {0.0};
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t l = 0; l < k; ++l) {
        const double dd = d[i * k + j] - d[i * k + l];
        if (dd != 0.0) {
          const double lam = (v[l] - v[j]) / dd;
          if (lam > 0.0) candidates.push_back(lam);
        }
      }
  double best = -std::numeric_limits<double>::infinity();
  for (double lam : candidates) best = std::max(best, g(lam));
  return best;
}

/// V^pi from the linear system (I - gamma P_pi) V = r_pi.
inline TabularV policy_value(const FiniteMDP& mdp, const TabularPolicy& pi) {
  const auto S = mdp.n_states;
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(S),
                                                static_cast<Eigen::Index>(S));
  Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(S));
  for (StateId s = 0; s < S; ++s)
    for (ActionId a = 0; a < mdp.n_actions; ++a) {
      const double w = pi(s, a);
      if (w == 0.0) continue;
      r(static_cast<Eigen::Index>(s)) += w * mdp.r(s, a);
      const auto row = mdp.row(s, a);
      for (StateId sp = 0; sp < S; ++sp)
        m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(sp)) -= mdp.gamma * w * row[sp];
    }
  const Eigen::VectorXd x = m.partialPivLu().solve(r);
  return TabularV(std::vector<double>(x.data(), x.data() + x.size()));
}

inline TabularQ q_from_v(const FiniteMDP& mdp, const TabularV& v) {
  TabularQ q(mdp.n_states, mdp.n_actions);
  for (StateId s = 0; s < mdp.n_states; ++s)
    for (ActionId a = 0; a < mdp.n_actions; ++a) {
      const auto row = mdp.row(s, a);
      double acc = 0.0;
      for (StateId sp = 0; sp < mdp.n_states; ++sp) acc += row[sp] * v(sp);
      q(s, a) = mdp.r(s, a) + mdp.gamma * acc;
    }
  return q;
}

/// Pointwise maximum of Q^pi over every deterministic policy choosing
/// supported actions; every state needs at least one supported action.
inline TabularQ best_support_policy_q(const FiniteMDP& mdp, const ActionSupport& support) {
  const auto S = mdp.n_states;
  std::vector<std::vector<ActionId>> options(S);
  for (StateId s = 0; s < S; ++s) options[s] = support.actions(s);
  std::vector<std::size_t> pick(S, 0);
  TabularV best(S, -std::numeric_limits<double>::infinity());
  for (;;) {
    TabularPolicy pi(S, mdp.n_actions);
    for (StateId s = 0; s < S; ++s) pi.set_deterministic(s, options[s][pick[s]]);
    const auto v = policy_value(mdp, pi);
    for (StateId s = 0; s < S; ++s) best(s) = std::max(best(s), v(s));
    std::size_t i = 0;
    while (i < S && ++pick[i] == options[i].size()) pick[i++] = 0;
    if (i == S) break;
  }
  return q_from_v(mdp, best);
}

}  // namespace oracle
