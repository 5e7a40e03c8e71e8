#pragma once

// Discrete optimal-transport primitives over a finite state metric.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "droco/mdp.hpp"

namespace droco {

namespace detail {

inline void require_same_size(std::span<const double> p, std::span<const double> q,
                              const MetricView& metric) {
  if (p.size() != q.size() || p.size() != metric.n)
    throw std::invalid_argument(
        concat("dimension mismatch: ", p.size(), " vs ", q.size(), " vs metric ", metric.n));
}

inline bool allowed_at(std::span<const char> allowed, StateId j) {
  return allowed.empty() || allowed[j] != 0;
}

}  // namespace detail

/// Exact 1-Wasserstein distance between two distributions on the same finite
/// state set. Solves the transportation problem by successive shortest paths
/// (Bellman-Ford on the bipartite residual graph).
inline double wasserstein_1(std::span<const double> p, std::span<const double> q,
                            const MetricView& metric) {
  detail::require_same_size(p, q, metric);
  constexpr double kMassTol = 1e-15;

  std::vector<StateId> src, dst;
  std::vector<double> supply, demand;
  for (StateId i = 0; i < p.size(); ++i) {
    // mass common to both sides stays put at zero cost
    const double common = std::min(p[i], q[i]);
    if (p[i] - common > kMassTol) {
      src.push_back(i);
      supply.push_back(p[i] - common);
    }
    if (q[i] - common > kMassTol) {
      dst.push_back(i);
      demand.push_back(q[i] - common);
    }
  }
  const std::size_t m = src.size(), n = dst.size();
  if (m == 0 || n == 0) return 0.0;

  // flow[i*n + j] on the forward arc src[i] -> dst[j]
  std::vector<double> flow(m * n, 0.0);
  const double inf = std::numeric_limits<double>::infinity();
  auto cost = [&](std::size_t i, std::size_t j) { return metric(src[i], dst[j]); };
  const std::size_t V = m + n;

  for (std::size_t guard = 0; guard < 4 * V * V + 64; ++guard) {
    double remaining = 0.0;
    for (double s : supply) remaining += s;
    if (remaining <= kMassTol) break;

    // nodes [0,m) sources, [m,m+n) sinks; all sources with supply start at 0
    std::vector<double> dist(V, inf);
    std::vector<std::ptrdiff_t> parent(V, -1);
    for (std::size_t i = 0; i < m; ++i)
      if (supply[i] > kMassTol) dist[i] = 0.0;
    for (std::size_t round = 0; round < V; ++round) {
      bool changed = false;
      for (std::size_t i = 0; i < m; ++i) {
        if (dist[i] == inf) continue;
        for (std::size_t j = 0; j < n; ++j)
          if (dist[i] + cost(i, j) < dist[m + j] - 1e-15) {
            dist[m + j] = dist[i] + cost(i, j);
            parent[m + j] = static_cast<std::ptrdiff_t>(i);
            changed = true;
          }
      }
      for (std::size_t j = 0; j < n; ++j) {
        if (dist[m + j] == inf) continue;
        for (std::size_t i = 0; i < m; ++i)
          if (flow[i * n + j] > kMassTol && dist[m + j] - cost(i, j) < dist[i] - 1e-15) {
            dist[i] = dist[m + j] - cost(i, j);
            parent[i] = static_cast<std::ptrdiff_t>(m + j);
            changed = true;
          }
      }
      if (!changed) break;
    }

    std::size_t sink = n;
    for (std::size_t j = 0; j < n; ++j)
      if (demand[j] > kMassTol && dist[m + j] < inf &&
          (sink == n || dist[m + j] < dist[m + sink]))
        sink = j;
    if (sink == n) break;

    double push = demand[sink];
    std::size_t v = m + sink;
    while (parent[v] >= 0) {
      const auto u = static_cast<std::size_t>(parent[v]);
      if (u >= m) push = std::min(push, flow[v * n + (u - m)]);  // backward arc
      v = u;
    }
    push = std::min(push, supply[v]);

    v = m + sink;
    while (parent[v] >= 0) {
      const auto u = static_cast<std::size_t>(parent[v]);
      if (u < m)
        flow[u * n + (v - m)] += push;
      else
        flow[v * n + (u - m)] -= push;
      v = u;
    }
    supply[v] -= push;
    demand[sink] -= push;
  }

  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) total += flow[i * n + j] * cost(i, j);
  return total;
}

/// Worst-case expectation over the W1 ball and the distribution attaining it.
struct BallSolution {
  double value = 0.0;
  std::vector<double> distribution;
};

/// min { sum_j q_j v_j : W1(q, p) <= eps }.
///
/// The LP is a fractional multiple-choice knapsack: every atom i chooses a
/// mix of destinations j, paying p_i d(i,j) of budget for a gain of
/// p_i (v_i - v_j). Greedy over the upper concave hull of each atom's
/// (cost, gain) options, consumed in decreasing-ratio order, is exact.
///
/// `allowed` (optional) restricts the destinations mass may move to; staying
/// put is always permitted.
inline BallSolution robust_w1_ball(std::span<const double> p, std::span<const double> v,
                                   const MetricView& metric, double eps,
                                   std::span<const char> allowed = {}) {
  if (eps < 0.0) throw std::invalid_argument("eps must be nonnegative");
  detail::require_same_size(p, v, metric);
  const std::size_t S = p.size();

  struct Point {
    double cost, gain;
    StateId dest;
  };
  struct Segment {
    double slope, cost, gain;  // cost/gain already scaled by p_i
    StateId source;
    std::size_t hull_index;  // end vertex in hulls[source]
  };

  std::vector<std::vector<Point>> hulls(S);
  std::vector<Segment> segments;
  for (StateId i = 0; i < S; ++i) {
    if (p[i] <= 0.0) continue;
    // Base point: best free move (zero distance), at least staying put.
    Point base{0.0, 0.0, i};
    std::vector<Point> pts;
    for (StateId j = 0; j < S; ++j) {
      if (j == i || !detail::allowed_at(allowed, j)) continue;
      const double gain = v[i] - v[j];
      if (gain <= 0.0) continue;
      const double c = metric(i, j);
      if (c == 0.0) {
        if (gain > base.gain) base = {0.0, gain, j};
      } else {
        pts.push_back({c, gain, j});
      }
    }
    std::sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) {
      return a.cost < b.cost || (a.cost == b.cost && (a.gain > b.gain ||
                                                      (a.gain == b.gain && a.dest < b.dest)));
    });
    auto& hull = hulls[i];
    hull.push_back(base);
    for (const auto& pt : pts) {
      if (pt.gain <= hull.back().gain) continue;
      // pop vertices that fall on or below the chord to pt (concavity)
      while (hull.size() >= 2) {
        const auto& a = hull[hull.size() - 2];
        const auto& b = hull.back();
        const double cross =
            (b.cost - a.cost) * (pt.gain - a.gain) - (b.gain - a.gain) * (pt.cost - a.cost);
        if (cross >= 0.0)
          hull.pop_back();
        else
          break;
      }
      hull.push_back(pt);
    }
    for (std::size_t k = 1; k < hull.size(); ++k) {
      const double dc = hull[k].cost - hull[k - 1].cost;
      const double dg = hull[k].gain - hull[k - 1].gain;
      segments.push_back({dg / dc, p[i] * dc, p[i] * dg, i, k});
    }
  }
  std::stable_sort(segments.begin(), segments.end(),
                   [](const Segment& a, const Segment& b) { return a.slope > b.slope; });

  // position[i] = (hull vertex index reached, fraction toward the next one)
  std::vector<std::size_t> vertex(S, 0);
  std::vector<double> frac(S, 0.0);
  double budget = eps;
  for (const auto& seg : segments) {
    if (budget <= 0.0) break;
    if (seg.cost <= budget) {
      budget -= seg.cost;
      vertex[seg.source] = seg.hull_index;
    } else {
      frac[seg.source] = budget / seg.cost;
      budget = 0.0;
      break;
    }
  }

  BallSolution sol;
  sol.distribution.assign(S, 0.0);
  for (StateId i = 0; i < S; ++i) {
    if (p[i] <= 0.0) continue;
    const auto& hull = hulls[i];
    const auto k = vertex[i];
    if (frac[i] > 0.0 && k + 1 < hull.size()) {
      sol.distribution[hull[k].dest] += p[i] * (1.0 - frac[i]);
      sol.distribution[hull[k + 1].dest] += p[i] * frac[i];
    } else {
      sol.distribution[hull[k].dest] += p[i];
    }
  }
  for (StateId j = 0; j < S; ++j) sol.value += sol.distribution[j] * v[j];
  return sol;
}

inline double robust_inf_over_w1_ball(std::span<const double> p, std::span<const double> v,
                                      const MetricView& metric, double eps,
                                      std::span<const char> allowed = {}) {
  return robust_w1_ball(p, v, metric, eps, allowed).value;
}

/// Per-sample state ball: E_{s'~p}[ min_{s: d(s',s) <= eps, allowed} v(s) ],
/// falling back to v(s') when no allowed state lies in the ball.
inline double per_sample_ball_value(std::span<const double> p, std::span<const double> v,
                                    const MetricView& metric, double eps,
                                    std::span<const char> allowed = {}) {
  if (eps < 0.0) throw std::invalid_argument("eps must be nonnegative");
  detail::require_same_size(p, v, metric);
  double total = 0.0;
  for (StateId i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    double best = std::numeric_limits<double>::infinity();
    for (StateId j = 0; j < p.size(); ++j)
      if (metric(i, j) <= eps && detail::allowed_at(allowed, j)) best = std::min(best, v[j]);
    total += p[i] * (std::isfinite(best) ? best : v[i]);
  }
  return total;
}

/// Lagrangian dual of the W1-ball problem at multiplier lam:
/// E_{s'~p}[ min_s (v(s) + lam d(s',s)) ] - lam eps.
inline double lambda_dual_value(std::span<const double> p, std::span<const double> v,
                                const MetricView& metric, double eps, double lam) {
  if (lam < 0.0) throw std::invalid_argument("lambda must be nonnegative");
  detail::require_same_size(p, v, metric);
  double total = 0.0;
  for (StateId i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    double best = std::numeric_limits<double>::infinity();
    for (StateId j = 0; j < p.size(); ++j) best = std::min(best, v[j] + lam * metric(i, j));
    total += p[i] * best;
  }
  return total - lam * eps;
}

/// Upper end of the multiplier search: beyond it no move pays for itself.
inline double lambda_upper_bound(std::span<const double> v, const MetricView& metric) {
  if (v.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double dmin = metric.min_positive();
  if (!std::isfinite(dmin)) return 0.0;
  return (*hi - *lo) / dmin;
}

struct DualOptimum {
  double lambda = 0.0;
  double value = 0.0;
};

/// sup over lam in [0, lambda_max] of the dual, by ternary search (the dual
/// is concave and piecewise linear in lam).
inline DualOptimum dual_sup_ternary(std::span<const double> p, std::span<const double> v,
                                    const MetricView& metric, double eps,
                                    std::size_t iterations = 200) {
  double lo = 0.0, hi = lambda_upper_bound(v, metric);
  for (std::size_t it = 0; it < iterations && hi - lo > 1e-15; ++it) {
    const double m1 = lo + (hi - lo) / 3.0;
    const double m2 = hi - (hi - lo) / 3.0;
    if (lambda_dual_value(p, v, metric, eps, m1) < lambda_dual_value(p, v, metric, eps, m2))
      lo = m1;
    else
      hi = m2;
  }
  DualOptimum best{0.0, lambda_dual_value(p, v, metric, eps, 0.0)};
  for (double lam : {lo, 0.5 * (lo + hi), hi}) {
    const double val = lambda_dual_value(p, v, metric, eps, lam);
    if (val > best.value) best = {lam, val};
  }
  return best;
}

/// Smallest K with |Q(s1,a) - Q(s2,a)| <= K d(s1,s2) over all pairs at
/// positive distance.
inline double lipschitz_constant(const TabularQ& q, const MetricView& metric) {
  if (!std::isfinite(metric.min_positive()))
    throw std::invalid_argument("metric has no positive off-diagonal distance");
  double k = 0.0;
  for (StateId s1 = 0; s1 < q.n_states; ++s1)
    for (StateId s2 = s1 + 1; s2 < q.n_states; ++s2) {
      const double d = metric(s1, s2);
      if (d <= 0.0) continue;
      for (ActionId a = 0; a < q.n_actions; ++a)
        k = std::max(k, std::abs(q(s1, a) - q(s2, a)) / d);
    }
  return k;
}

}  // namespace droco
