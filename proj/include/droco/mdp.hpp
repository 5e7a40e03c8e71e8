#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace droco {

using StateId = std::size_t;
using ActionId = std::size_t;

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kStochasticTol = 1e-9;

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

inline bool is_distribution(std::span<const double> p, double tol = kStochasticTol) {
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) return false;
    total += x;
  }
  return std::abs(total - 1.0) <= tol;
}

}  // namespace detail

/// Read-only view of a square state metric stored row-major.
struct MetricView {
  std::size_t n = 0;
  std::span<const double> d;

  double operator()(StateId i, StateId j) const { return d[i * n + j]; }

  double diameter() const {
    return d.empty() ? 0.0 : *std::max_element(d.begin(), d.end());
  }

  double min_positive() const {
    double best = std::numeric_limits<double>::infinity();
    for (double x : d)
      if (x > 0.0) best = std::min(best, x);
    return best;
  }
};

/// Complete tabular MDP: kernel, rewards, discount, initial distribution and
/// a state pseudo-metric.
struct FiniteMDP {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> kernel;  // [s][a][s']
  std::vector<double> reward;  // [s][a]
  double r_max = 1.0;
  double gamma = 0.9;
  std::vector<double> init_dist;
  std::vector<double> metric;  // [s1][s2]

  static FiniteMDP zeros(std::size_t n_states, std::size_t n_actions, double gamma,
                         double r_max = 1.0) {
    FiniteMDP m;
    m.n_states = n_states;
    m.n_actions = n_actions;
    m.kernel.assign(n_states * n_actions * n_states, 0.0);
    m.reward.assign(n_states * n_actions, 0.0);
    m.r_max = r_max;
    m.gamma = gamma;
    m.init_dist.assign(n_states, n_states ? 1.0 / static_cast<double>(n_states) : 0.0);
    m.metric.assign(n_states * n_states, 0.0);
    for (StateId i = 0; i < n_states; ++i)
      for (StateId j = 0; j < n_states; ++j)
        m.metric[i * n_states + j] = i == j ? 0.0 : 1.0;
    return m;
  }

  std::span<const double> row(StateId s, ActionId a) const {
    return {kernel.data() + (s * n_actions + a) * n_states, n_states};
  }
  std::span<double> row(StateId s, ActionId a) {
    return {kernel.data() + (s * n_actions + a) * n_states, n_states};
  }

  double r(StateId s, ActionId a) const { return reward[s * n_actions + a]; }
  double& r(StateId s, ActionId a) { return reward[s * n_actions + a]; }

  double d(StateId i, StateId j) const { return metric[i * n_states + j]; }
  double& d(StateId i, StateId j) { return metric[i * n_states + j]; }

  MetricView metric_view() const { return {n_states, metric}; }

  double value_bound() const { return r_max / (1.0 - gamma); }

  /// States whose every action is a deterministic self-loop.
  bool is_absorbing(StateId s) const {
    for (ActionId a = 0; a < n_actions; ++a)
      if (row(s, a)[s] < 1.0 - kStochasticTol) return false;
    return true;
  }
};

/// Throws ValidationError describing the first violated invariant.
inline void validate(const FiniteMDP& mdp) {
  const auto S = mdp.n_states, A = mdp.n_actions;
  if (S == 0 || A == 0) throw ValidationError("empty state or action space");
  if (mdp.kernel.size() != S * A * S || mdp.reward.size() != S * A ||
      mdp.init_dist.size() != S || mdp.metric.size() != S * S)
    throw ValidationError("table dimensions do not match n_states/n_actions");
  if (!(mdp.gamma >= 0.0 && mdp.gamma < 1.0))
    throw ValidationError(detail::concat("gamma out of range: ", mdp.gamma));
  if (!(mdp.r_max > 0.0)) throw ValidationError("r_max must be positive");
  for (StateId s = 0; s < S; ++s)
    for (ActionId a = 0; a < A; ++a)
      if (!detail::is_distribution(mdp.row(s, a)))
        throw ValidationError(
            detail::concat("row not stochastic at (s=", s, ", a=", a, ")"));
  for (StateId s = 0; s < S; ++s)
    for (ActionId a = 0; a < A; ++a)
      if (!(std::abs(mdp.r(s, a)) <= mdp.r_max))
        throw ValidationError(detail::concat("reward exceeds r_max at (s=", s,
                                             ", a=", a, ")"));
  if (!detail::is_distribution(mdp.init_dist))
    throw ValidationError("init_dist not stochastic");
  for (StateId i = 0; i < S; ++i) {
    if (mdp.d(i, i) != 0.0)
      throw ValidationError(detail::concat("metric diagonal nonzero at ", i));
    for (StateId j = 0; j < S; ++j) {
      if (!(mdp.d(i, j) >= 0.0))
        throw ValidationError(
            detail::concat("metric negative at (", i, ", ", j, ")"));
      if (mdp.d(i, j) != mdp.d(j, i))
        throw ValidationError(
            detail::concat("metric not symmetric at (", i, ", ", j, ")"));
    }
  }
}

/// Sparse successor lists (s', P(s'|s,a)) with P > 0, built once per kernel.
class Successors {
 public:
  struct Entry {
    StateId next;
    double prob;
  };

  explicit Successors(const FiniteMDP& mdp) : n_actions_(mdp.n_actions) {
    offsets_.reserve(mdp.n_states * mdp.n_actions + 1);
    offsets_.push_back(0);
    for (StateId s = 0; s < mdp.n_states; ++s)
      for (ActionId a = 0; a < mdp.n_actions; ++a) {
        const auto row = mdp.row(s, a);
        for (StateId sp = 0; sp < mdp.n_states; ++sp)
          if (row[sp] > 0.0) entries_.push_back({sp, row[sp]});
        offsets_.push_back(entries_.size());
      }
  }

  std::span<const Entry> operator()(StateId s, ActionId a) const {
    const auto k = s * n_actions_ + a;
    return {entries_.data() + offsets_[k], offsets_[k + 1] - offsets_[k]};
  }

 private:
  std::size_t n_actions_;
  std::vector<std::size_t> offsets_;
  std::vector<Entry> entries_;
};

struct TabularQ {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> values;

  TabularQ() = default;
  TabularQ(std::size_t s, std::size_t a, double fill = 0.0)
      : n_states(s), n_actions(a), values(s * a, fill) {}

  double operator()(StateId s, ActionId a) const { return values[s * n_actions + a]; }
  double& operator()(StateId s, ActionId a) { return values[s * n_actions + a]; }

  bool operator==(const TabularQ&) const = default;
};

struct TabularV {
  std::vector<double> values;

  TabularV() = default;
  explicit TabularV(std::size_t s, double fill = 0.0) : values(s, fill) {}
  explicit TabularV(std::vector<double> v) : values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  double operator()(StateId s) const { return values[s]; }
  double& operator()(StateId s) { return values[s]; }

  bool operator==(const TabularV&) const = default;
};

struct TabularPolicy {
  std::size_t n_states = 0;
  std::size_t n_actions = 0;
  std::vector<double> probs;  // [s][a]

  TabularPolicy() = default;
  TabularPolicy(std::size_t s, std::size_t a)
      : n_states(s), n_actions(a), probs(s * a, a ? 1.0 / static_cast<double>(a) : 0.0) {}

  static TabularPolicy uniform(std::size_t s, std::size_t a) { return {s, a}; }

  std::span<const double> row(StateId s) const {
    return {probs.data() + s * n_actions, n_actions};
  }
  std::span<double> row(StateId s) { return {probs.data() + s * n_actions, n_actions}; }

  double operator()(StateId s, ActionId a) const { return probs[s * n_actions + a]; }
  double& operator()(StateId s, ActionId a) { return probs[s * n_actions + a]; }

  void set_deterministic(StateId s, ActionId a) {
    auto r = row(s);
    std::fill(r.begin(), r.end(), 0.0);
    r[a] = 1.0;
  }

  bool operator==(const TabularPolicy&) const = default;
};

inline void validate(const TabularPolicy& pi, const FiniteMDP& mdp) {
  if (pi.n_states != mdp.n_states || pi.n_actions != mdp.n_actions)
    throw ValidationError("policy dimensions do not match MDP");
  for (StateId s = 0; s < pi.n_states; ++s)
    if (!detail::is_distribution(pi.row(s)))
      throw ValidationError(detail::concat("policy row not stochastic at s=", s));
}

/// Behavior-policy support: the set of actions with positive empirical mass
/// at each state.
class ActionSupport {
 public:
  ActionSupport() = default;
  ActionSupport(std::size_t n_states, std::size_t n_actions, bool filled)
      : n_states_(n_states), n_actions_(n_actions), mask_(n_states * n_actions, filled) {}

  static ActionSupport all(std::size_t s, std::size_t a) { return {s, a, true}; }

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }

  bool contains(StateId s, ActionId a) const { return mask_[s * n_actions_ + a] != 0; }
  void set(StateId s, ActionId a, bool on = true) { mask_[s * n_actions_ + a] = on; }

  bool empty(StateId s) const {
    for (ActionId a = 0; a < n_actions_; ++a)
      if (contains(s, a)) return false;
    return true;
  }

  std::vector<ActionId> actions(StateId s) const {
    std::vector<ActionId> out;
    for (ActionId a = 0; a < n_actions_; ++a)
      if (contains(s, a)) out.push_back(a);
    return out;
  }

  ActionSupport& operator|=(const ActionSupport& o) {
    for (std::size_t k = 0; k < mask_.size(); ++k) mask_[k] = mask_[k] || o.mask_[k];
    return *this;
  }

  bool operator==(const ActionSupport&) const = default;

 private:
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<char> mask_;
};

/// Max of Q over the supported actions at s; lowest index wins ties.
/// Throws when the support at s is empty.
inline double support_max(const TabularQ& q, const ActionSupport& support, StateId s) {
  double best = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (ActionId a = 0; a < q.n_actions; ++a)
    if (support.contains(s, a) && (!any || q(s, a) > best)) {
      best = q(s, a);
      any = true;
    }
  if (!any) throw std::invalid_argument(detail::concat("empty support at state ", s));
  return best;
}

inline double unconstrained_max(const TabularQ& q, StateId s) {
  double best = q(s, 0);
  for (ActionId a = 1; a < q.n_actions; ++a) best = std::max(best, q(s, a));
  return best;
}

/// In-support state values; support-empty states fall back to the
/// unconstrained max so that robust operators stay total.
inline TabularV support_values(const TabularQ& q, const ActionSupport& support) {
  TabularV v(q.n_states);
  for (StateId s = 0; s < q.n_states; ++s)
    v(s) = support.empty(s) ? unconstrained_max(q, s) : support_max(q, support, s);
  return v;
}

inline double sup_norm_diff(std::span<const double> x, std::span<const double> y) {
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

// ---- JSON -----------------------------------------------------------------

inline nlohmann::json to_json(const FiniteMDP& mdp) {
  using nlohmann::json;
  json kernel = json::array();
  json reward = json::array();
  json metric = json::array();
  for (StateId s = 0; s < mdp.n_states; ++s) {
    json per_action = json::array();
    json rewards = json::array();
    for (ActionId a = 0; a < mdp.n_actions; ++a) {
      const auto row = mdp.row(s, a);
      per_action.push_back(std::vector<double>(row.begin(), row.end()));
      rewards.push_back(mdp.r(s, a));
    }
    kernel.push_back(std::move(per_action));
    reward.push_back(std::move(rewards));
    metric.push_back(std::vector<double>(mdp.metric.begin() + s * mdp.n_states,
                                         mdp.metric.begin() + (s + 1) * mdp.n_states));
  }
  return {{"n_states", mdp.n_states}, {"n_actions", mdp.n_actions},
          {"kernel", kernel},         {"reward", reward},
          {"gamma", mdp.gamma},       {"init_dist", mdp.init_dist},
          {"metric", metric},         {"r_max", mdp.r_max}};
}

inline FiniteMDP mdp_from_json(const nlohmann::json& j) {
  FiniteMDP m;
  m.n_states = j.at("n_states").get<std::size_t>();
  m.n_actions = j.at("n_actions").get<std::size_t>();
  m.gamma = j.at("gamma").get<double>();
  m.r_max = j.at("r_max").get<double>();
  m.init_dist = j.at("init_dist").get<std::vector<double>>();
  const auto& kernel = j.at("kernel");
  const auto& reward = j.at("reward");
  const auto& metric = j.at("metric");
  if (kernel.size() != m.n_states || reward.size() != m.n_states ||
      metric.size() != m.n_states)
    throw ValidationError("MDP JSON: table sizes do not match n_states");
  for (StateId s = 0; s < m.n_states; ++s) {
    if (kernel[s].size() != m.n_actions || reward[s].size() != m.n_actions)
      throw ValidationError("MDP JSON: table sizes do not match n_actions");
    for (ActionId a = 0; a < m.n_actions; ++a) {
      const auto row = kernel[s][a].get<std::vector<double>>();
      if (row.size() != m.n_states) throw ValidationError("MDP JSON: bad kernel row");
      m.kernel.insert(m.kernel.end(), row.begin(), row.end());
      m.reward.push_back(reward[s][a].get<double>());
    }
    const auto d = metric[s].get<std::vector<double>>();
    if (d.size() != m.n_states) throw ValidationError("MDP JSON: bad metric row");
    m.metric.insert(m.metric.end(), d.begin(), d.end());
  }
  validate(m);
  return m;
}

inline void save_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << j.dump(1) << '\n';
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path);
  return nlohmann::json::parse(in);
}

}  // namespace droco
