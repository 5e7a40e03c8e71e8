#pragma once

// Offline transition datasets: rollout collection, behavior policies,
// subsampling and JSON-lines persistence.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "droco/mdp.hpp"
#include "droco/planning.hpp"
#include "droco/rng.hpp"

namespace droco {

enum class Domain : std::uint8_t { src, tar };

inline const char* to_string(Domain d) { return d == Domain::src ? "src" : "tar"; }

struct TransitionRecord {
  StateId s = 0;
  ActionId a = 0;
  double r = 0.0;
  StateId sp = 0;
  Domain domain = Domain::tar;

  bool operator==(const TransitionRecord&) const = default;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error(detail::concat("line ", line, ": ", what)), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Records plus visit-count tables kept in sync on every insertion.
class OfflineDataset {
 public:
  OfflineDataset() = default;
  OfflineDataset(std::size_t n_states, std::size_t n_actions)
      : n_states_(n_states),
        n_actions_(n_actions),
        counts_(n_states * n_actions, 0),
        next_counts_(n_states * n_actions * n_states, 0) {}

  std::size_t n_states() const { return n_states_; }
  std::size_t n_actions() const { return n_actions_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const std::vector<TransitionRecord>& records() const { return records_; }
  const TransitionRecord& operator[](std::size_t i) const { return records_[i]; }

  void reserve(std::size_t n) { records_.reserve(n); }

  void add(const TransitionRecord& rec) {
    if (rec.s >= n_states_ || rec.sp >= n_states_ || rec.a >= n_actions_)
      throw std::out_of_range(detail::concat("record (", rec.s, ", ", rec.a, ", ", rec.sp,
                                             ") outside ", n_states_, "x", n_actions_));
    records_.push_back(rec);
    ++counts_[rec.s * n_actions_ + rec.a];
    ++next_counts_[(rec.s * n_actions_ + rec.a) * n_states_ + rec.sp];
  }

  std::size_t count(StateId s, ActionId a) const { return counts_[s * n_actions_ + a]; }
  std::size_t next_count(StateId s, ActionId a, StateId sp) const {
    return next_counts_[(s * n_actions_ + a) * n_states_ + sp];
  }
  std::size_t state_count(StateId s) const {
    std::size_t n = 0;
    for (ActionId a = 0; a < n_actions_; ++a) n += count(s, a);
    return n;
  }

  ActionSupport support() const {
    ActionSupport out(n_states_, n_actions_, false);
    for (StateId s = 0; s < n_states_; ++s)
      for (ActionId a = 0; a < n_actions_; ++a)
        if (count(s, a) > 0) out.set(s, a);
    return out;
  }

  /// Empirical behavior policy; rows of unvisited states are uniform.
  TabularPolicy behavior_policy() const {
    TabularPolicy pi(n_states_, n_actions_);
    for (StateId s = 0; s < n_states_; ++s) {
      const auto total = state_count(s);
      if (total == 0) continue;
      for (ActionId a = 0; a < n_actions_; ++a)
        pi(s, a) = static_cast<double>(count(s, a)) / static_cast<double>(total);
    }
    return pi;
  }

  /// 1 for every (s, a) visited at least once.
  std::vector<char> pair_mask() const {
    std::vector<char> mask(n_states_ * n_actions_, 0);
    for (std::size_t k = 0; k < counts_.size(); ++k) mask[k] = counts_[k] > 0;
    return mask;
  }

  /// FNV-1a digest of the serialized records.
  std::string fingerprint() const {
    std::uint64_t h = fnv1a(detail::concat(n_states_, "x", n_actions_));
    for (const auto& r : records_) h = fnv1a(record_line(r), h);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  static std::string record_line(const TransitionRecord& r) {
    const nlohmann::ordered_json j{
        {"s", r.s}, {"a", r.a}, {"r", r.r}, {"sp", r.sp}, {"domain", to_string(r.domain)}};
    return j.dump();
  }

  bool operator==(const OfflineDataset&) const = default;

 private:
  std::size_t n_states_ = 0;
  std::size_t n_actions_ = 0;
  std::vector<TransitionRecord> records_;
  std::vector<std::size_t> counts_;
  std::vector<std::size_t> next_counts_;
};

/// Merges two datasets over the same spaces, keeping each record's tag.
inline OfflineDataset merge(const OfflineDataset& a, const OfflineDataset& b) {
  if (a.n_states() != b.n_states() || a.n_actions() != b.n_actions())
    throw ValidationError("cannot merge datasets over different spaces");
  OfflineDataset out(a.n_states(), a.n_actions());
  out.reserve(a.size() + b.size());
  for (const auto& r : a.records()) out.add(r);
  for (const auto& r : b.records()) out.add(r);
  return out;
}

/// Episodic rollouts from the initial distribution. An episode ends at the
/// horizon or right after a transition out of an absorbing state.
inline OfflineDataset collect(const FiniteMDP& mdp, const TabularPolicy& policy, std::size_t n,
                              std::size_t horizon, std::uint64_t seed, Domain domain) {
  if (n == 0 || horizon == 0) throw std::invalid_argument("collect: n and horizon must be positive");
  validate(policy, mdp);
  OfflineDataset ds(mdp.n_states, mdp.n_actions);
  ds.reserve(n);
  Rng rng(seed);
  std::vector<char> absorbing(mdp.n_states);
  for (StateId s = 0; s < mdp.n_states; ++s) absorbing[s] = mdp.is_absorbing(s);

  while (ds.size() < n) {
    StateId s = rng.categorical(mdp.init_dist);
    for (std::size_t t = 0; t < horizon && ds.size() < n; ++t) {
      const ActionId a = rng.categorical(policy.row(s));
      const StateId sp = rng.categorical(mdp.row(s, a));
      ds.add({s, a, mdp.r(s, a), sp, domain});
      if (absorbing[s]) break;
      s = sp;
    }
  }
  return ds;
}

enum class Quality { random, medium, expert, medium_replay_mix, medium_expert_mix };

inline Quality parse_quality(const std::string& name) {
  if (name == "random") return Quality::random;
  if (name == "medium") return Quality::medium;
  if (name == "expert") return Quality::expert;
  if (name == "medium_replay_mix" || name == "medium-replay") return Quality::medium_replay_mix;
  if (name == "medium_expert_mix" || name == "medium-expert") return Quality::medium_expert_mix;
  throw std::invalid_argument("unknown data quality: " + name);
}

inline const char* to_string(Quality q) {
  switch (q) {
    case Quality::random: return "random";
    case Quality::medium: return "medium";
    case Quality::expert: return "expert";
    case Quality::medium_replay_mix: return "medium_replay_mix";
    case Quality::medium_expert_mix: return "medium_expert_mix";
  }
  return "?";
}

inline constexpr double kExpertEpsilon = 0.05;
inline constexpr double kMediumEpsilon = 0.35;

/// Component policies whose rollouts are concatenated 50/50 for the mixed
/// qualities; a single policy otherwise.
inline std::vector<TabularPolicy> behavior_components(const FiniteMDP& mdp, Quality quality) {
  const auto S = mdp.n_states, A = mdp.n_actions;
  if (quality == Quality::random) return {TabularPolicy::uniform(S, A)};
  const TabularQ q_star = optimal_q(mdp);
  auto medium = epsilon_greedy(q_star, kMediumEpsilon);
  switch (quality) {
    case Quality::medium: return {medium};
    case Quality::expert: return {epsilon_greedy(q_star, kExpertEpsilon)};
    case Quality::medium_replay_mix: return {TabularPolicy::uniform(S, A), medium};
    case Quality::medium_expert_mix: return {medium, epsilon_greedy(q_star, kExpertEpsilon)};
    default: break;
  }
  throw std::invalid_argument("unknown data quality");
}

/// Single-table behavior policy; mixed qualities return the equal-weight
/// average of their components (the state-marginal of a 50/50 mix differs,
/// use collect_quality to generate the actual mixed data).
inline TabularPolicy make_behavior(const FiniteMDP& mdp, Quality quality, std::uint64_t /*seed*/ = 0) {
  const auto parts = behavior_components(mdp, quality);
  TabularPolicy out = parts.front();
  if (parts.size() == 1) return out;
  for (std::size_t k = 0; k < out.probs.size(); ++k)
    out.probs[k] = 0.5 * (parts[0].probs[k] + parts[1].probs[k]);
  return out;
}

inline OfflineDataset collect_quality(const FiniteMDP& mdp, Quality quality, std::size_t n,
                                      std::size_t horizon, std::uint64_t seed, Domain domain) {
  const auto parts = behavior_components(mdp, quality);
  if (parts.size() == 1) return collect(mdp, parts[0], n, horizon, seed, domain);
  const std::size_t first = n / 2;
  OfflineDataset out = collect(mdp, parts[0], first, horizon, derive_seed(seed, "mix", 0), domain);
  const auto second =
      collect(mdp, parts[1], n - first, horizon, derive_seed(seed, "mix", 1), domain);
  for (const auto& r : second.records()) out.add(r);
  return out;
}

/// Uniform subsample of round(fraction * size) records without replacement,
/// kept in original order.
inline OfflineDataset subsample(const OfflineDataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("subsample fraction must lie in (0, 1]");
  const auto n = ds.size();
  const auto k = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
  OfflineDataset out(ds.n_states(), ds.n_actions());
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.add(ds[idx[i]]);
  return out;
}

// ---- JSON lines -------------------------------------------------------------

inline void save_dataset(const OfflineDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  for (const auto& r : ds.records()) out << OfflineDataset::record_line(r) << '\n';
}

inline TransitionRecord parse_record(const std::string& line, std::size_t line_no) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line_no, e.what());
  }
  try {
    TransitionRecord r;
    r.s = j.at("s").get<StateId>();
    r.a = j.at("a").get<ActionId>();
    r.r = j.at("r").get<double>();
    r.sp = j.at("sp").get<StateId>();
    const auto tag = j.at("domain").get<std::string>();
    if (tag == "src") r.domain = Domain::src;
    else if (tag == "tar") r.domain = Domain::tar;
    else throw ParseError(line_no, "unknown domain tag \"" + tag + "\"");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(line_no, e.what());
  }
}

/// Loads a JSON-lines dataset. Zero dimensions are inferred from the
/// largest indices seen.
inline OfflineDataset load_dataset(const std::string& path, std::size_t n_states = 0,
                                   std::size_t n_actions = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  std::vector<TransitionRecord> recs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    recs.push_back(parse_record(line, line_no));
  }
  std::size_t s_need = 0, a_need = 0;
  for (const auto& r : recs) {
    s_need = std::max({s_need, r.s + 1, r.sp + 1});
    a_need = std::max(a_need, r.a + 1);
  }
  if (n_states == 0) n_states = s_need;
  if (n_actions == 0) n_actions = a_need;
  if (s_need > n_states || a_need > n_actions)
    throw ValidationError(detail::concat(path, ": record indices exceed ", n_states, "x",
                                         n_actions));
  OfflineDataset ds(n_states, n_actions);
  ds.reserve(recs.size());
  for (const auto& r : recs) ds.add(r);
  return ds;
}

}  // namespace droco
