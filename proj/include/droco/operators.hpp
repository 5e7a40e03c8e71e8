#pragma once

// Bellman backups: standard, in-sample, robust over a W1 ball, robust over
// per-sample state balls, and the ensemble-driven robust target.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "droco/dataset.hpp"
#include "droco/ensemble.hpp"
#include "droco/mdp.hpp"
#include "droco/planning.hpp"
#include "droco/rng.hpp"
#include "droco/transport.hpp"

namespace droco {

enum class BackupKind { standard, in_sample, rcb_exact, rcb_practical, rcb_ensemble };

inline const char* to_string(BackupKind k) {
  switch (k) {
    case BackupKind::standard: return "standard";
    case BackupKind::in_sample: return "in_sample";
    case BackupKind::rcb_exact: return "rcb_exact";
    case BackupKind::rcb_practical: return "rcb_practical";
    case BackupKind::rcb_ensemble: return "rcb_ensemble";
  }
  return "?";
}

/// States with at least one supported action, as a destination mask.
inline std::vector<char> supported_states(const ActionSupport& support) {
  std::vector<char> mask(support.n_states());
  for (StateId s = 0; s < support.n_states(); ++s) mask[s] = !support.empty(s);
  return mask;
}

namespace detail {

inline void require_eps(double eps) {
  if (!(eps >= 0.0)) throw std::invalid_argument("eps must be nonnegative");
}

inline bool is_source_pair(std::span<const char> source_pairs, std::size_t n_actions,
                           StateId s, ActionId a) {
  return source_pairs.empty() || source_pairs[s * n_actions + a] != 0;
}

template <typename RobustExpectation>
TabularQ robust_backup(const TabularQ& q, const FiniteMDP& src, const FiniteMDP* tar,
                       const ActionSupport& support, std::span<const char> source_pairs,
                       RobustExpectation&& robust) {
  const auto v = support_values(q, support);
  TabularQ out(src.n_states, src.n_actions);
  for (StateId s = 0; s < src.n_states; ++s)
    for (ActionId a = 0; a < src.n_actions; ++a) {
      double next;
      if (is_source_pair(source_pairs, src.n_actions, s, a)) {
        next = robust(src.row(s, a), v.values);
      } else {
        next = 0.0;
        const auto row = tar->row(s, a);
        for (StateId sp = 0; sp < src.n_states; ++sp)
          if (row[sp] > 0.0) next += row[sp] * v(sp);
      }
      out(s, a) = src.r(s, a) + src.gamma * next;
    }
  return out;
}

inline void check_pair(const FiniteMDP& src, const FiniteMDP* tar,
                       std::span<const char> source_pairs) {
  if (source_pairs.empty()) return;
  if (source_pairs.size() != src.n_states * src.n_actions)
    throw ValidationError("source pair mask has wrong size");
  if (tar == nullptr) throw std::invalid_argument("target MDP required for target-branch pairs");
  if (tar->n_states != src.n_states || tar->n_actions != src.n_actions)
    throw ValidationError("source and target MDP dimensions differ");
}

}  // namespace detail

inline TabularQ standard_backup(const TabularQ& q, const FiniteMDP& mdp) {
  return in_sample_backup(q, mdp, ActionSupport::all(mdp.n_states, mdp.n_actions));
}

/// Robust backup over the W1 ball of radius eps around P_src(.|s,a) for
/// source pairs; in-sample backup under P_tar for the remaining pairs.
/// An empty `source_pairs` mask means every pair is a source pair.
inline TabularQ rcb_exact_backup(const TabularQ& q, const FiniteMDP& src, const FiniteMDP* tar,
                                 const ActionSupport& support, double eps,
                                 std::span<const char> source_pairs = {}) {
  detail::require_eps(eps);
  detail::check_pair(src, tar, source_pairs);
  const auto allowed = supported_states(support);
  const auto metric = src.metric_view();
  return detail::robust_backup(q, src, tar, support, source_pairs,
                               [&](std::span<const double> p, std::span<const double> v) {
                                 return robust_inf_over_w1_ball(p, v, metric, eps, allowed);
                               });
}

inline TabularQ rcb_exact_backup(const TabularQ& q, const FiniteMDP& src,
                                 const ActionSupport& support, double eps) {
  return rcb_exact_backup(q, src, nullptr, support, eps);
}

/// Robust backup over per-sample balls U_eps(s') for source pairs; in-sample
/// backup under P_tar for the remaining pairs.
inline TabularQ rcb_practical_backup(const TabularQ& q, const FiniteMDP& src,
                                     const FiniteMDP* tar, const ActionSupport& support,
                                     double eps, std::span<const char> source_pairs = {}) {
  detail::require_eps(eps);
  detail::check_pair(src, tar, source_pairs);
  const auto allowed = supported_states(support);
  const auto metric = src.metric_view();
  return detail::robust_backup(q, src, tar, support, source_pairs,
                               [&](std::span<const double> p, std::span<const double> v) {
                                 return per_sample_ball_value(p, v, metric, eps, allowed);
                               });
}

inline TabularQ rcb_practical_backup(const TabularQ& q, const FiniteMDP& src,
                                     const ActionSupport& support, double eps) {
  return rcb_practical_backup(q, src, nullptr, support, eps);
}

// ---- ensemble-driven targets --------------------------------------------------

/// min over member samples of the in-support value.
inline double worst_sample_value(const TabularV& v, std::span<const StateId> samples) {
  double worst = std::numeric_limits<double>::infinity();
  for (auto sp : samples) worst = std::min(worst, v(sp));
  return worst;
}

/// Per-record seed used for ensemble draws in a batch.
inline std::uint64_t record_seed(std::uint64_t seed, std::size_t index) {
  return derive_seed(seed, "ensemble_target", index);
}

/// Targets for a record batch: source records take
/// r + gamma * min_i max_{a' in support} Q(s'_i, a') over one draw per member;
/// target records take the in-sample target on the observed s'.
inline std::vector<double> rcb_ensemble_backup(const TabularQ& q,
                                               std::span<const TransitionRecord> batch,
                                               const EnsembleDynamics& ens,
                                               const ActionSupport& support, double gamma,
                                               std::uint64_t seed) {
  const auto v = support_values(q, support);
  std::vector<double> targets(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& rec = batch[i];
    if (rec.domain == Domain::tar) {
      targets[i] = rec.r + gamma * v(rec.sp);
    } else {
      const auto samples = sample_set(ens, rec.s, rec.a, record_seed(seed, i));
      targets[i] = rec.r + gamma * worst_sample_value(v, samples);
    }
  }
  return targets;
}

// ---- fixed points -------------------------------------------------------------

/// Everything a BackupKind may need. `src` is the MDP for the standard and
/// in-sample kinds. For rcb_ensemble the table operator averages the batch
/// targets per (s, a) over `records` with member draws frozen at
/// construction; pairs without records map to 0.
struct BackupParams {
  const FiniteMDP* src = nullptr;
  const FiniteMDP* tar = nullptr;
  ActionSupport support;
  double eps = 0.0;
  std::vector<char> source_pairs;
  const EnsembleDynamics* ensemble = nullptr;
  std::vector<TransitionRecord> records;
  double gamma = 0.0;  // rcb_ensemble only
  std::uint64_t seed = 0;
};

class Backup {
 public:
  Backup(BackupKind kind, BackupParams params) : kind_(kind), p_(std::move(params)) {
    if (kind_ == BackupKind::rcb_ensemble) {
      if (p_.ensemble == nullptr) throw std::invalid_argument("rcb_ensemble needs an ensemble");
      n_states_ = p_.ensemble->n_states();
      n_actions_ = p_.ensemble->n_actions();
      if (p_.support.n_states() == 0) p_.support = ActionSupport::all(n_states_, n_actions_);
      if (!(p_.gamma >= 0.0 && p_.gamma < 1.0)) throw ValidationError("gamma out of range");
      samples_.resize(p_.records.size());
      for (std::size_t i = 0; i < p_.records.size(); ++i) {
        const auto& rec = p_.records[i];
        if (rec.s >= n_states_ || rec.sp >= n_states_ || rec.a >= n_actions_)
          throw std::out_of_range("record outside the ensemble's state/action range");
        if (rec.domain == Domain::src)
          samples_[i] = sample_set(*p_.ensemble, rec.s, rec.a, record_seed(p_.seed, i));
      }
      return;
    }
    if (p_.src == nullptr) throw std::invalid_argument("backup needs an MDP");
    n_states_ = p_.src->n_states;
    n_actions_ = p_.src->n_actions;
    if (kind_ == BackupKind::standard || p_.support.n_states() == 0)
      p_.support = ActionSupport::all(n_states_, n_actions_);
    detail::require_eps(p_.eps);
    detail::check_pair(*p_.src, p_.tar, p_.source_pairs);
    succ_.emplace_back(*p_.src);
  }

  BackupKind kind() const { return kind_; }
  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  const BackupParams& params() const { return p_; }

  TabularQ operator()(const TabularQ& q) const {
    switch (kind_) {
      case BackupKind::standard:
      case BackupKind::in_sample:
        return in_sample_backup(q, *p_.src, succ_.front(), p_.support);
      case BackupKind::rcb_exact:
        return rcb_exact_backup(q, *p_.src, p_.tar, p_.support, p_.eps, p_.source_pairs);
      case BackupKind::rcb_practical:
        return rcb_practical_backup(q, *p_.src, p_.tar, p_.support, p_.eps, p_.source_pairs);
      case BackupKind::rcb_ensemble: return ensemble_table(q);
    }
    throw std::logic_error("unknown backup kind");
  }

 private:
  TabularQ ensemble_table(const TabularQ& q) const {
    const auto v = support_values(q, p_.support);
    TabularQ sum(n_states_, n_actions_);
    std::vector<std::size_t> hits(n_states_ * n_actions_, 0);
    for (std::size_t i = 0; i < p_.records.size(); ++i) {
      const auto& rec = p_.records[i];
      const double next =
          rec.domain == Domain::tar ? v(rec.sp) : worst_sample_value(v, samples_[i]);
      sum(rec.s, rec.a) += rec.r + p_.gamma * next;
      ++hits[rec.s * n_actions_ + rec.a];
    }
    for (std::size_t k = 0; k < hits.size(); ++k)
      if (hits[k] > 0) sum.values[k] /= static_cast<double>(hits[k]);
    return sum;
  }

  BackupKind kind_;
  BackupParams p_;
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<Successors> succ_;
  std::vector<std::vector<StateId>> samples_;
};

inline TabularQ fixed_point(const Backup& backup, const TabularQ& init,
                            double tol = kFixedPointTol) {
  if (init.n_states != backup.n_states() || init.n_actions != backup.n_actions())
    throw ValidationError("initial Q has wrong dimensions");
  return iterate_to_fixed_point(backup, init, tol);
}

inline TabularQ fixed_point(BackupKind kind, BackupParams params, const TabularQ& init,
                            double tol = kFixedPointTol) {
  return fixed_point(Backup(kind, std::move(params)), init, tol);
}

// ---- support condition and test-time radius -------------------------------

/// Smallest eps with supp P_tar(.|s,a) inside U_eps(s'_src) for every source
/// record (s, a, s'_src).
inline double support_condition_eps(std::span<const TransitionRecord> source_records,
                                    const FiniteMDP& tar) {
  double eps = 0.0;
  for (const auto& rec : source_records) {
    const auto row = tar.row(rec.s, rec.a);
    for (StateId x = 0; x < tar.n_states; ++x)
      if (row[x] > 0.0) eps = std::max(eps, tar.d(rec.sp, x));
  }
  return eps;
}

/// Largest attained radius c with U_c(s'_tar) inside U_eps(s'_src) for every
/// source record and every s'_tar in supp P_tar(.|s,a); minimum over all such
/// pairs. -inf when even U_0 containment fails; the state-space diameter when
/// every ball is contained.
inline double compute_c_threshold(std::span<const TransitionRecord> source_records,
                                  const FiniteMDP& tar, double eps) {
  detail::require_eps(eps);
  const auto S = tar.n_states;
  const double diameter = tar.metric_view().diameter();
  double c = diameter;
  for (const auto& rec : source_records) {
    const auto row = tar.row(rec.s, rec.a);
    for (StateId center = 0; center < S; ++center) {
      if (row[center] <= 0.0) continue;
      // nearest state (from center) outside U_eps(s'_src)
      double breach = std::numeric_limits<double>::infinity();
      for (StateId x = 0; x < S; ++x)
        if (tar.d(rec.sp, x) > eps) breach = std::min(breach, tar.d(center, x));
      if (!std::isfinite(breach)) continue;
      double best = -std::numeric_limits<double>::infinity();
      for (StateId x = 0; x < S; ++x) {
        const double t = tar.d(center, x);
        if (t < breach) best = std::max(best, t);
      }
      c = std::min(c, best);
    }
  }
  return c;
}

inline void export_q_csv(const TabularQ& q, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "state,action,q_value\n" << std::setprecision(17);
  for (StateId s = 0; s < q.n_states; ++s)
    for (ActionId a = 0; a < q.n_actions; ++a) out << s << ',' << a << ',' << q(s, a) << '\n';
}

}  // namespace droco
