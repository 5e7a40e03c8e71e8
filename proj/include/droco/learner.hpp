#pragma once

// Tabular DROCO learner: expectile value regression, Huber Q regression with
// the ensemble value penalty on source records, and advantage-weighted policy
// extraction. Also the merged-data in-sample baseline.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "droco/dataset.hpp"
#include "droco/ensemble.hpp"
#include "droco/mdp.hpp"
#include "droco/operators.hpp"
#include "droco/rng.hpp"

namespace droco {

struct DrocoConfig {
  double beta = 0.5;
  double delta = 30.0;
  double tau = 0.7;
  double awr_alpha = 3.0;
  double gamma = 0.99;
  std::size_t n_members = 7;
  double smoothing_alpha = kDefaultSmoothingAlpha;
  double q_lr = 0.1;
  double v_lr = 0.1;
  std::size_t batch_src = 128;
  std::size_t batch_tar = 128;
  std::size_t steps = 50000;
  double target_update_rate = 5e-3;
  std::uint64_t seed = 0;
  std::size_t log_every = 1000;

  bool operator==(const DrocoConfig&) const = default;
};

inline void validate(const DrocoConfig& c) {
  if (!(c.beta >= 0.0)) throw ValidationError("beta must be nonnegative");
  if (!(c.delta > 0.0)) throw ValidationError("delta must be positive");
  if (!(c.tau > 0.0 && c.tau < 1.0)) throw ValidationError("tau must lie in (0,1)");
  if (!(c.awr_alpha > 0.0)) throw ValidationError("awr_alpha must be positive");
  if (!(c.gamma >= 0.0 && c.gamma < 1.0)) throw ValidationError("gamma must lie in [0,1)");
  if (c.n_members == 0) throw ValidationError("n_members must be at least 1");
  if (!(c.smoothing_alpha > 0.0)) throw ValidationError("smoothing_alpha must be positive");
  if (!(c.q_lr > 0.0) || !(c.v_lr > 0.0)) throw ValidationError("learning rates must be positive");
  if (c.batch_src == 0 || c.batch_tar == 0) throw ValidationError("batch sizes must be positive");
  if (!(c.target_update_rate > 0.0 && c.target_update_rate <= 1.0))
    throw ValidationError("target_update_rate must lie in (0,1]");
}

/// Raised when a table entry leaves the divergence envelope.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- losses -------------------------------------------------------------------

inline double expectile_weight(double u, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("tau must lie in (0,1)");
  return u < 0.0 ? 1.0 - tau : tau;
}

/// |tau - 1(u < 0)| u^2
inline double expectile_loss(double u, double tau) { return expectile_weight(u, tau) * u * u; }

inline double huber(double a, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("huber delta must be positive");
  const double m = std::abs(a);
#ifdef DROCO_MUTATE_HUBER_SIGN
  return m < delta ? 0.5 * a * a : delta * (m + 0.5 * delta);
#else
  return m < delta ? 0.5 * a * a : delta * (m - 0.5 * delta);
#endif
}

inline double huber_grad(double a, double delta) {
  if (!(delta > 0.0)) throw std::invalid_argument("huber delta must be positive");
  if (std::abs(a) < delta) return a;
  return a > 0.0 ? delta : -delta;
}

// ---- penalty and TD target ----------------------------------------------------

struct ValuePenalty {
  double gap = 0.0;    // V(s') - worst
  double worst = 0.0;  // min_i V(s'_i)
};

inline ValuePenalty penalty_terms(const TransitionRecord& rec, const TabularV& v,
                                  const EnsembleDynamics& ens, Rng& rng) {
  if (rec.domain == Domain::tar) return {0.0, v(rec.sp)};
  const auto samples = sample_set(ens, rec.s, rec.a, rng);
  const double worst = worst_sample_value(v, samples);
  return {v(rec.sp) - worst, worst};
}

/// 0 for target records; V(s') - min_i V(s'_i) over one draw per member for
/// source records.
inline double value_penalty(const TransitionRecord& rec, const TabularV& v,
                            const EnsembleDynamics& ens, std::uint64_t seed) {
  Rng rng(seed);
  return penalty_terms(rec, v, ens, rng).gap;
}

/// r + gamma (V(s') - beta penalty)
inline double td_target(const TransitionRecord& rec, const TabularV& v, double penalty,
                        double beta, double gamma) {
  return rec.r + gamma * (v(rec.sp) - beta * penalty);
}

/// Same target written as r + gamma ((1 - beta) V(s') + beta worst), which
/// reproduces the ensemble-min target bit for bit at beta = 1.
inline double td_target(const TransitionRecord& rec, const TabularV& v, const ValuePenalty& pen,
                        double beta, double gamma) {
  if (pen.gap == 0.0) return rec.r + gamma * v(rec.sp);
  return rec.r + gamma * ((1.0 - beta) * v(rec.sp) + beta * pen.worst);
}

// ---- state ----------------------------------------------------------------------

struct LossRecord {
  std::size_t step = 0;
  double v_loss = 0.0;
  double q_loss_src = 0.0;
  double q_loss_tar = 0.0;
  double mean_penalty = 0.0;

  bool operator==(const LossRecord&) const = default;
};

struct TrainState {
  TabularQ q;
  TabularQ q_target;
  TabularV v;
  TabularPolicy policy;
  ActionSupport support;
  TabularPolicy behavior;  // merged empirical behavior policy
  std::shared_ptr<const EnsembleDynamics> ensemble;
  std::size_t step = 0;
  std::vector<LossRecord> trace;

  bool same_tables(const TrainState& o) const {
    return q == o.q && q_target == o.q_target && v == o.v && policy == o.policy &&
           support == o.support && step == o.step;
  }
};

/// pi(a|s) proportional to mu(a|s) exp(alpha (Q(s,a) - V(s))) over supported
/// actions; uniform where the support is empty.
inline TabularPolicy awr_policy(const TabularQ& q, const TabularV& v,
                                const TabularPolicy& behavior, const ActionSupport& support,
                                double alpha) {
  TabularPolicy pi(q.n_states, q.n_actions);
  for (StateId s = 0; s < q.n_states; ++s) {
    if (support.empty(s)) continue;
    double top = -std::numeric_limits<double>::infinity();
    for (ActionId a = 0; a < q.n_actions; ++a)
      if (support.contains(s, a)) top = std::max(top, alpha * (q(s, a) - v(s)));
    double total = 0.0;
    auto row = pi.row(s);
    for (ActionId a = 0; a < q.n_actions; ++a) {
      row[a] = support.contains(s, a)
                   ? behavior(s, a) * std::exp(alpha * (q(s, a) - v(s)) - top)
                   : 0.0;
      total += row[a];
    }
    for (auto& x : row) x /= total;
  }
  return pi;
}

/// Mean of Q over the (s, a) pairs visited by `ds`.
inline double mean_q_over(const TabularQ& q, const OfflineDataset& ds) {
  double total = 0.0;
  std::size_t n = 0;
  for (StateId s = 0; s < q.n_states; ++s)
    for (ActionId a = 0; a < q.n_actions; ++a)
      if (ds.count(s, a) > 0) {
        total += q(s, a);
        ++n;
      }
  return n ? total / static_cast<double>(n) : 0.0;
}

enum class LearnerKind { droco, merged_baseline };

namespace detail {

inline TrainState initial_state(const OfflineDataset& ds_src, const OfflineDataset& ds_tar,
                                const DrocoConfig& cfg) {
  const auto S = ds_tar.n_states(), A = ds_tar.n_actions();
  TrainState st;
  st.q = TabularQ(S, A);
  st.q_target = TabularQ(S, A);
  st.v = TabularV(S);
  const auto all = merge(ds_src, ds_tar);
  st.support = all.support();
  st.behavior = all.behavior_policy();
  st.policy = awr_policy(st.q, st.v, st.behavior, st.support, cfg.awr_alpha);
  return st;
}

inline void guard(double x, double limit, const char* table, std::size_t index,
                  std::size_t step) {
  if (!(std::abs(x) <= limit))
    throw DivergenceError(detail::concat("divergence at step ", step, ": ", table, "[", index,
                                         "] = ", x, " exceeds ", limit));
}

inline TrainState run_learner(const OfflineDataset& ds_src, const OfflineDataset& ds_tar,
                              double r_max, const DrocoConfig& cfg, LearnerKind kind) {
  validate(cfg);
  if (ds_tar.empty()) throw ValidationError("target dataset is empty");
  if (kind == LearnerKind::droco && ds_src.empty())
    throw ValidationError("source dataset is empty");
  if (ds_src.n_states() != ds_tar.n_states() || ds_src.n_actions() != ds_tar.n_actions())
    throw ValidationError("source and target datasets cover different spaces");
  if (!(r_max > 0.0)) throw ValidationError("r_max must be positive");

  TrainState st = initial_state(ds_src, ds_tar, cfg);
  const bool droco = kind == LearnerKind::droco;
  if (droco)
    st.ensemble = std::make_shared<const EnsembleDynamics>(
        fit(ds_tar, cfg.n_members, cfg.smoothing_alpha, derive_seed(cfg.seed, "ensemble")));

  const auto A = ds_tar.n_actions();
  const double limit = 10.0 * r_max / (1.0 - cfg.gamma);
  const std::size_t b_src = ds_src.empty() ? 0 : cfg.batch_src;
  const std::size_t b_tar = cfg.batch_tar;
  const double inv_b = 1.0 / static_cast<double>(b_src + b_tar);
  const double inv_src = b_src ? 1.0 / static_cast<double>(b_src) : 0.0;
  const double inv_tar = 1.0 / static_cast<double>(b_tar);
  const double mu = cfg.target_update_rate;

  Rng batch_rng(derive_seed(cfg.seed, "batches"));
  std::vector<const TransitionRecord*> batch(b_src + b_tar);
  std::vector<double> grad_v(st.v.size());
  std::vector<double> grad_q(st.q.values.size());
  std::vector<ValuePenalty> pens(b_src + b_tar);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t i = 0; i < b_src; ++i) batch[i] = &ds_src[batch_rng.below(ds_src.size())];
    for (std::size_t i = 0; i < b_tar; ++i)
      batch[b_src + i] = &ds_tar[batch_rng.below(ds_tar.size())];

    // expectile regression of V toward Q_target
    std::fill(grad_v.begin(), grad_v.end(), 0.0);
    double v_loss = 0.0;
    for (const auto* rec : batch) {
      const double u = st.q_target(rec->s, rec->a) - st.v(rec->s);
      const double w = expectile_weight(u, cfg.tau);
      v_loss += w * u * u;
      grad_v[rec->s] -= 2.0 * w * u * inv_b;
    }
    for (StateId s = 0; s < grad_v.size(); ++s) {
      if (grad_v[s] == 0.0) continue;
      st.v(s) -= cfg.v_lr * grad_v[s];
      guard(st.v(s), limit, "V", s, step);
    }

    // penalized TD regression of Q
    std::fill(grad_q.begin(), grad_q.end(), 0.0);
    double q_loss_src = 0.0, q_loss_tar = 0.0, pen_total = 0.0;
    Rng pen_rng(derive_seed(cfg.seed, "penalty", step));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& rec = *batch[i];
      const bool source = i < b_src;
      ValuePenalty pen{0.0, st.v(rec.sp)};
      if (droco && source) pen = penalty_terms(rec, st.v, *st.ensemble, pen_rng);
      const double y = td_target(rec, st.v, pen, droco ? cfg.beta : 0.0, cfg.gamma);
      const double e = st.q(rec.s, rec.a) - y;
      const auto k = rec.s * A + rec.a;
      if (source) {
        pen_total += pen.gap;
        if (droco) {
          q_loss_src += huber(e, cfg.delta);
          grad_q[k] += huber_grad(e, cfg.delta) * inv_src;
        } else {
          q_loss_src += 0.5 * e * e;
          grad_q[k] += e * inv_src;
        }
      } else {
        q_loss_tar += 0.5 * e * e;
        grad_q[k] += e * inv_tar;
      }
    }
    for (std::size_t k = 0; k < grad_q.size(); ++k) {
      if (grad_q[k] == 0.0) continue;
      st.q.values[k] -= cfg.q_lr * grad_q[k];
      guard(st.q.values[k], limit, "Q", k, step);
    }
    for (std::size_t k = 0; k < grad_q.size(); ++k)
      st.q_target.values[k] = (1.0 - mu) * st.q_target.values[k] + mu * st.q.values[k];

    st.step = step + 1;
    if (cfg.log_every > 0 && (st.step % cfg.log_every == 0 || st.step == cfg.steps))
      st.trace.push_back({st.step, v_loss * inv_b, b_src ? q_loss_src * inv_src : 0.0,
                          q_loss_tar * inv_tar, b_src ? pen_total * inv_src : 0.0});
  }
  st.policy = awr_policy(st.q, st.v, st.behavior, st.support, cfg.awr_alpha);
  return st;
}

}  // namespace detail

/// Initial tables: zero Q, Q_target and V; policy = support-masked behavior.
inline TrainState initial_state(const OfflineDataset& ds_src, const OfflineDataset& ds_tar,
                                const DrocoConfig& cfg) {
  validate(cfg);
  return detail::initial_state(ds_src, ds_tar, cfg);
}

inline TrainState train(const OfflineDataset& ds_src, const OfflineDataset& ds_tar,
                        const FiniteMDP& mdp, const DrocoConfig& cfg) {
  return detail::run_learner(ds_src, ds_tar, mdp.r_max, cfg, LearnerKind::droco);
}

/// Same loop with beta = 0, no ensemble and squared loss on every record.
inline TrainState train_baseline_merged(const OfflineDataset& ds_src,
                                        const OfflineDataset& ds_tar, const FiniteMDP& mdp,
                                        const DrocoConfig& cfg) {
  return detail::run_learner(ds_src, ds_tar, mdp.r_max, cfg, LearnerKind::merged_baseline);
}

inline TrainState train(const OfflineDataset& ds_src, const OfflineDataset& ds_tar,
                        const FiniteMDP& mdp, const DrocoConfig& cfg, LearnerKind kind) {
  return detail::run_learner(ds_src, ds_tar, mdp.r_max, cfg, kind);
}

// ---- persistence --------------------------------------------------------------

inline nlohmann::json to_json(const DrocoConfig& c) {
  return {{"beta", c.beta},
          {"delta", c.delta},
          {"tau", c.tau},
          {"awr_alpha", c.awr_alpha},
          {"gamma", c.gamma},
          {"n_members", c.n_members},
          {"smoothing_alpha", c.smoothing_alpha},
          {"q_lr", c.q_lr},
          {"v_lr", c.v_lr},
          {"batch_src", c.batch_src},
          {"batch_tar", c.batch_tar},
          {"steps", c.steps},
          {"target_update_rate", c.target_update_rate},
          {"seed", c.seed},
          {"log_every", c.log_every}};
}

namespace detail {

inline nlohmann::json q_rows(const TabularQ& q) {
  auto out = nlohmann::json::array();
  for (StateId s = 0; s < q.n_states; ++s)
    out.push_back(std::vector<double>(q.values.begin() + static_cast<std::ptrdiff_t>(s * q.n_actions),
                                      q.values.begin() + static_cast<std::ptrdiff_t>((s + 1) * q.n_actions)));
  return out;
}

inline TabularQ q_from_rows(const nlohmann::json& rows, std::size_t S, std::size_t A) {
  TabularQ q(S, A);
  if (rows.size() != S) throw ValidationError("checkpoint: bad row count");
  for (StateId s = 0; s < S; ++s) {
    const auto r = rows[s].get<std::vector<double>>();
    if (r.size() != A) throw ValidationError("checkpoint: bad row length");
    for (ActionId a = 0; a < A; ++a) q(s, a) = r[a];
  }
  return q;
}

}  // namespace detail

inline nlohmann::json checkpoint_json(const TrainState& st) {
  const auto S = st.q.n_states, A = st.q.n_actions;
  TabularQ policy(S, A), behavior(S, A), support(S, A);
  policy.values = st.policy.probs;
  behavior.values = st.behavior.probs;
  for (StateId s = 0; s < S; ++s)
    for (ActionId a = 0; a < A; ++a) support(s, a) = st.support.contains(s, a) ? 1.0 : 0.0;
  return {{"n_states", S},
          {"n_actions", A},
          {"step", st.step},
          {"q", detail::q_rows(st.q)},
          {"q_target", detail::q_rows(st.q_target)},
          {"v", st.v.values},
          {"policy", detail::q_rows(policy)},
          {"behavior", detail::q_rows(behavior)},
          {"support", detail::q_rows(support)}};
}

/// Restores the tables; the ensemble and loss trace are not persisted.
inline TrainState state_from_json(const nlohmann::json& j) {
  const auto S = j.at("n_states").get<std::size_t>();
  const auto A = j.at("n_actions").get<std::size_t>();
  TrainState st;
  st.step = j.at("step").get<std::size_t>();
  st.q = detail::q_from_rows(j.at("q"), S, A);
  st.q_target = detail::q_from_rows(j.at("q_target"), S, A);
  st.v = TabularV(j.at("v").get<std::vector<double>>());
  if (st.v.size() != S) throw ValidationError("checkpoint: bad V length");
  st.policy = TabularPolicy(S, A);
  st.policy.probs = detail::q_from_rows(j.at("policy"), S, A).values;
  st.behavior = TabularPolicy(S, A);
  st.behavior.probs = detail::q_from_rows(j.at("behavior"), S, A).values;
  const auto mask = detail::q_from_rows(j.at("support"), S, A);
  st.support = ActionSupport(S, A, false);
  for (StateId s = 0; s < S; ++s)
    for (ActionId a = 0; a < A; ++a) st.support.set(s, a, mask(s, a) != 0.0);
  return st;
}

inline void write_loss_csv(const std::vector<LossRecord>& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << "step,v_loss,q_loss_src,q_loss_tar,mean_penalty\n" << std::setprecision(10);
  for (const auto& r : trace)
    out << r.step << ',' << r.v_loss << ',' << r.q_loss_src << ',' << r.q_loss_tar << ','
        << r.mean_penalty << '\n';
}

}  // namespace droco
