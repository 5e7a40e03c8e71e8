#pragma once

// Ensemble of categorical next-state models fit by smoothed maximum
// likelihood on bootstrap resamples of the target dataset.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "droco/dataset.hpp"
#include "droco/mdp.hpp"
#include "droco/rng.hpp"

namespace droco {

class EnsembleDynamics {
 public:
  EnsembleDynamics() = default;

  /// Wraps explicit member kernels, each laid out [s][a][s'].
  EnsembleDynamics(std::size_t n_states, std::size_t n_actions,
                   std::vector<std::vector<double>> members, double smoothing_alpha = 0.0,
                   std::string trained_on = {}, std::uint64_t seed = 0)
      : n_states_(n_states),
        n_actions_(n_actions),
        smoothing_alpha_(smoothing_alpha),
        trained_on_(std::move(trained_on)),
        seed_(seed),
        members_(std::move(members)) {
    if (members_.empty()) throw ValidationError("ensemble needs at least one member");
    for (std::size_t k = 0; k < members_.size(); ++k) {
      if (members_[k].size() != n_states_ * n_actions_ * n_states_)
        throw ValidationError(detail::concat("member ", k, " has wrong table size"));
      for (StateId s = 0; s < n_states_; ++s)
        for (ActionId a = 0; a < n_actions_; ++a)
          if (!detail::is_distribution(row(k, s, a)))
            throw ValidationError(
                detail::concat("member ", k, " row not stochastic at (s=", s, ", a=", a, ")"));
    }
    build_cdfs();
  }

  std::size_t n_members() const { return members_.size(); }
  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  double smoothing_alpha() const { return smoothing_alpha_; }
  const std::string& trained_on() const { return trained_on_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<double>& member(std::size_t k) const { return members_[k]; }

  std::span<const double> row(std::size_t k, StateId s, ActionId a) const {
    return {members_[k].data() + (s * n_actions_ + a) * n_states_, n_states_};
  }

  /// One categorical draw from member k's row.
  StateId draw(std::size_t k, StateId s, ActionId a, Rng& rng) const {
    const double* cdf = cdfs_[k].data() + (s * n_actions_ + a) * n_states_;
    const double u = rng.uniform() * cdf[n_states_ - 1];
    const auto it = std::upper_bound(cdf, cdf + n_states_, u);
    auto idx = static_cast<std::size_t>(it - cdf);
    if (idx >= n_states_) {
      idx = n_states_ - 1;
      while (idx > 0 && row(k, s, a)[idx] == 0.0) --idx;
    }
    return idx;
  }

  bool operator==(const EnsembleDynamics& o) const {
    return n_states_ == o.n_states_ && n_actions_ == o.n_actions_ &&
           smoothing_alpha_ == o.smoothing_alpha_ && trained_on_ == o.trained_on_ &&
           seed_ == o.seed_ && members_ == o.members_;
  }

 private:
  void build_cdfs() {
    cdfs_.assign(members_.size(), {});
    for (std::size_t k = 0; k < members_.size(); ++k) {
      cdfs_[k].resize(members_[k].size());
      for (std::size_t row_start = 0; row_start < members_[k].size(); row_start += n_states_) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n_states_; ++j) {
          acc += members_[k][row_start + j];
          cdfs_[k][row_start + j] = acc;
        }
      }
    }
  }

  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  double smoothing_alpha_ = 0.0;
  std::string trained_on_;
  std::uint64_t seed_ = 0;
  std::vector<std::vector<double>> members_;
  std::vector<std::vector<double>> cdfs_;
};

inline constexpr double kDefaultSmoothingAlpha = 0.1;

/// Row estimate (count(s') + alpha/|S|) / (total + alpha): a total
/// pseudo-count of alpha spread evenly, so unvisited rows are uniform.
inline void smoothed_row(std::span<const std::size_t> counts, double alpha,
                         std::span<double> out) {
  double total = 0.0;
  for (auto c : counts) total += static_cast<double>(c);
  const double spread = alpha / static_cast<double>(counts.size());
  for (std::size_t j = 0; j < counts.size(); ++j)
    out[j] = (static_cast<double>(counts[j]) + spread) / (total + alpha);
}

/// Fits n_members smoothed categorical models, member k on its own bootstrap
/// resample of the dataset.
inline EnsembleDynamics fit(const OfflineDataset& ds, std::size_t n_members,
                            double smoothing_alpha = kDefaultSmoothingAlpha,
                            std::uint64_t seed = 0) {
  if (ds.empty()) throw ValidationError("cannot fit an ensemble on an empty dataset");
  if (n_members == 0) throw ValidationError("n_members must be at least 1");
  if (!(smoothing_alpha > 0.0)) throw ValidationError("smoothing_alpha must be positive");
  const auto S = ds.n_states(), A = ds.n_actions();
  const auto n = ds.size();
  std::vector<std::vector<double>> members(n_members);
  std::vector<std::size_t> counts(S * A * S);
  for (std::size_t k = 0; k < n_members; ++k) {
    std::fill(counts.begin(), counts.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "bootstrap", k));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = ds[rng.below(n)];
      ++counts[(r.s * A + r.a) * S + r.sp];
    }
    members[k].resize(S * A * S);
    for (std::size_t base = 0; base < counts.size(); base += S)
      smoothed_row(std::span<const std::size_t>(counts.data() + base, S), smoothing_alpha,
                   std::span<double>(members[k].data() + base, S));
  }
  return {S, A, std::move(members), smoothing_alpha, ds.fingerprint(), seed};
}

/// One draw per member, in member order.
inline std::vector<StateId> sample_set(const EnsembleDynamics& ens, StateId s, ActionId a,
                                       Rng& rng) {
  if (s >= ens.n_states() || a >= ens.n_actions())
    throw std::out_of_range(detail::concat("(s=", s, ", a=", a, ") outside the ensemble"));
  std::vector<StateId> out(ens.n_members());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = ens.draw(k, s, a, rng);
  return out;
}

inline std::vector<StateId> sample_set(const EnsembleDynamics& ens, StateId s, ActionId a,
                                       std::uint64_t seed) {
  Rng rng(seed);
  return sample_set(ens, s, a, rng);
}

inline double total_variation(std::span<const double> p, std::span<const double> q) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
  return 0.5 * acc;
}

/// Max over members and (s, a) of the TV distance between member row and the
/// true kernel row; `pairs` (optional, [s][a]) limits the scan.
inline double tv_error(const EnsembleDynamics& ens, const FiniteMDP& mdp,
                       std::span<const char> pairs = {}) {
  if (ens.n_states() != mdp.n_states || ens.n_actions() != mdp.n_actions)
    throw ValidationError("ensemble and MDP dimensions differ");
  if (!pairs.empty() && pairs.size() != mdp.n_states * mdp.n_actions)
    throw ValidationError("pair mask has wrong size");
  double worst = 0.0;
  for (std::size_t k = 0; k < ens.n_members(); ++k)
    for (StateId s = 0; s < mdp.n_states; ++s)
      for (ActionId a = 0; a < mdp.n_actions; ++a) {
        if (!pairs.empty() && !pairs[s * mdp.n_actions + a]) continue;
        worst = std::max(worst, total_variation(ens.row(k, s, a), mdp.row(s, a)));
      }
  return worst;
}

// ---- JSON -------------------------------------------------------------------

inline nlohmann::json to_json(const EnsembleDynamics& ens) {
  using nlohmann::json;
  json members = json::array();
  for (std::size_t k = 0; k < ens.n_members(); ++k) {
    json per_state = json::array();
    for (StateId s = 0; s < ens.n_states(); ++s) {
      json per_action = json::array();
      for (ActionId a = 0; a < ens.n_actions(); ++a) {
        const auto r = ens.row(k, s, a);
        per_action.push_back(std::vector<double>(r.begin(), r.end()));
      }
      per_state.push_back(std::move(per_action));
    }
    members.push_back(std::move(per_state));
  }
  return {{"n_members", ens.n_members()},
          {"n_states", ens.n_states()},
          {"n_actions", ens.n_actions()},
          {"smoothing_alpha", ens.smoothing_alpha()},
          {"seed", ens.seed()},
          {"fingerprint", ens.trained_on()},
          {"members", std::move(members)}};
}

inline EnsembleDynamics ensemble_from_json(const nlohmann::json& j) {
  const auto S = j.at("n_states").get<std::size_t>();
  const auto A = j.at("n_actions").get<std::size_t>();
  std::vector<std::vector<double>> members;
  for (const auto& m : j.at("members")) {
    std::vector<double> flat;
    flat.reserve(S * A * S);
    if (m.size() != S) throw ValidationError("ensemble JSON: bad state count");
    for (const auto& per_action : m) {
      if (per_action.size() != A) throw ValidationError("ensemble JSON: bad action count");
      for (const auto& r : per_action) {
        const auto row = r.get<std::vector<double>>();
        if (row.size() != S) throw ValidationError("ensemble JSON: bad row length");
        flat.insert(flat.end(), row.begin(), row.end());
      }
    }
    members.push_back(std::move(flat));
  }
  return {S,
          A,
          std::move(members),
          j.at("smoothing_alpha").get<double>(),
          j.at("fingerprint").get<std::string>(),
          j.at("seed").get<std::uint64_t>()};
}

}  // namespace droco
