#pragma once

// Test-time evaluation under clean and perturbed target dynamics.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <algorithm>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "droco/gridworld.hpp"
#include "droco/mdp.hpp"
#include "droco/planning.hpp"
#include "droco/rng.hpp"

namespace droco {

enum class PerturbationKind { none, kinematic, morphology, min_v };
enum class Level { zero, easy, medium, hard };

inline constexpr double kJamByLevel[] = {0.0, 0.2, 0.5, 0.8};
inline constexpr double kMixByLevel[] = {0.0, 0.15, 0.35, 0.6};

inline const char* to_string(Level l) {
  static constexpr const char* names[] = {"zero", "easy", "medium", "hard"};
  return names[static_cast<int>(l)];
}

inline Level parse_level(const std::string& s) {
  if (s == "zero" || s == "0") return Level::zero;
  if (s == "easy") return Level::easy;
  if (s == "medium") return Level::medium;
  if (s == "hard") return Level::hard;
  throw std::invalid_argument("unknown perturbation level: " + s);
}

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::none;
  Level level = Level::zero;
  double scale = 0.0;  // min_v ball radius
  ActionId jammed_action = kRight;
  int quarter_turns = 1;

  static PerturbationSpec kinematic(Level l, ActionId jammed = kRight) {
    return {PerturbationKind::kinematic, l, 0.0, jammed, 1};
  }
  static PerturbationSpec morphology(Level l, int quarter_turns = 1) {
    return {PerturbationKind::morphology, l, 0.0, kRight, quarter_turns};
  }
  static PerturbationSpec min_v(double scale) {
    return {PerturbationKind::min_v, Level::zero, scale, kRight, 1};
  }

  /// Resolved numeric intensity: jam probability, mix weight or ball radius.
  double intensity() const {
    switch (kind) {
      case PerturbationKind::kinematic: return kJamByLevel[static_cast<int>(level)];
      case PerturbationKind::morphology: return kMixByLevel[static_cast<int>(level)];
      case PerturbationKind::min_v: return scale;
      default: return 0.0;
    }
  }

  std::string condition() const {
    switch (kind) {
      case PerturbationKind::kinematic: return std::string("kinematic_") + to_string(level);
      case PerturbationKind::morphology: return std::string("morphology_") + to_string(level);
      case PerturbationKind::min_v: return "min_v";
      default: return "clean";
    }
  }

  bool operator==(const PerturbationSpec&) const = default;
};

/// Parses "none", "kin:<level>", "morph:<level>" or "minq:<scale>".
inline PerturbationSpec parse_perturbation(const std::string& text) {
  if (text == "none" || text == "clean") return {};
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw std::invalid_argument("bad perturbation: " + text);
  const auto head = text.substr(0, colon), tail = text.substr(colon + 1);
  if (head == "kin" || head == "kinematic") return PerturbationSpec::kinematic(parse_level(tail));
  if (head == "morph" || head == "morphology")
    return PerturbationSpec::morphology(parse_level(tail));
  if (head == "minq" || head == "minv") {
    std::size_t used = 0;
    double scale = 0.0;
    try {
      scale = std::stod(tail, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tail.size() || !(scale >= 0.0))
      throw std::invalid_argument("bad min-value perturbation scale: " + tail);
    return PerturbationSpec::min_v(scale);
  }
  throw std::invalid_argument("unknown perturbation kind: " + head);
}

/// Every next state s' is relocated to argmin_{x: d(s',x) <= scale} V(x)
/// (lowest index on ties).
inline FiniteMDP min_v_attack(const FiniteMDP& mdp, const TabularV& v, double scale) {
  if (!(scale >= 0.0)) throw std::invalid_argument("attack scale must be nonnegative");
  if (v.size() != mdp.n_states) throw ValidationError("attack value has wrong length");
  const auto S = mdp.n_states;
  std::vector<StateId> target(S);
  for (StateId sp = 0; sp < S; ++sp) {
    StateId best = sp;
    for (StateId x = 0; x < S; ++x)
      if (mdp.d(sp, x) <= scale && (v(x) < v(best) || (v(x) == v(best) && x < best))) best = x;
    target[sp] = best;
  }
  FiniteMDP out = mdp;
  std::fill(out.kernel.begin(), out.kernel.end(), 0.0);
  for (StateId s = 0; s < S; ++s)
    for (ActionId a = 0; a < mdp.n_actions; ++a) {
      const auto src = mdp.row(s, a);
      auto dst = out.row(s, a);
      for (StateId sp = 0; sp < S; ++sp)
        if (src[sp] > 0.0) dst[target[sp]] += src[sp];
    }
  return out;
}

/// Perturbed copy of the target grid. min_v needs the evaluated agent's V.
inline FiniteMDP perturb(const GridSpec& target, const PerturbationSpec& spec,
                         const TabularV* attack_value = nullptr) {
  switch (spec.kind) {
    case PerturbationKind::none: return build_grid(target);
    case PerturbationKind::kinematic: {
      const Shift extra[] = {KinematicShift{spec.jammed_action, spec.intensity()}};
      return build_grid(target, extra);
    }
    case PerturbationKind::morphology: {
      const Shift extra[] = {MorphologyShift{spec.quarter_turns, spec.intensity()}};
      return build_grid(target, extra);
    }
    case PerturbationKind::min_v:
      if (attack_value == nullptr)
        throw std::invalid_argument("min-value perturbation needs the agent's value table");
      return min_v_attack(build_grid(target), *attack_value, spec.scale);
  }
  throw std::invalid_argument("unresolved perturbation spec");
}

// ---- evaluation -----------------------------------------------------------------

struct MonteCarlo {
  std::size_t n_episodes = 1000;
  std::size_t horizon = 1000;
  std::uint64_t seed = 0;
};

/// Exact evaluation when empty.
using EvalMode = std::optional<MonteCarlo>;

struct EvalResult {
  double mean = 0.0;
  double std = 0.0;
};

inline EvalResult evaluate(const TabularPolicy& pi, const FiniteMDP& mdp, const EvalMode& mode = {}) {
  if (!mode) return {expected_return(mdp, policy_eval_exact(mdp, pi)), 0.0};
  if (mode->horizon == 0 || mode->n_episodes == 0)
    throw std::invalid_argument("monte carlo evaluation needs positive horizon and episodes");
  validate(pi, mdp);
  Rng rng(mode->seed);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t ep = 0; ep < mode->n_episodes; ++ep) {
    StateId s = rng.categorical(mdp.init_dist);
    double ret = 0.0, discount = 1.0;
    for (std::size_t t = 0; t < mode->horizon; ++t) {
      const ActionId a = rng.categorical(pi.row(s));
      ret += discount * mdp.r(s, a);
      discount *= mdp.gamma;
      s = rng.categorical(mdp.row(s, a));
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  const double n = static_cast<double>(mode->n_episodes);
  const double mean = sum / n;
  const double var = n > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1)) : 0.0;
  return {mean, std::sqrt(var)};
}

/// Returns of the uniform-random and exact-optimal policies.
struct ScoreReference {
  double j_random = 0.0;
  double j_expert = 0.0;
};

inline ScoreReference score_reference(const FiniteMDP& mdp) {
  ScoreReference ref;
  ref.j_random = evaluate(TabularPolicy::uniform(mdp.n_states, mdp.n_actions), mdp).mean;
  ref.j_expert = evaluate(greedy_policy(optimal_q(mdp)), mdp).mean;
  return ref;
}

inline double normalized_score(double ret, const ScoreReference& ref) {
  const double span = ref.j_expert - ref.j_random;
  if (!(std::abs(span) > 1e-12)) throw std::domain_error("expert and random returns coincide");
  return 100.0 * (ret - ref.j_random) / span;
}

inline double normalized_score(double ret, const FiniteMDP& mdp) {
  return normalized_score(ret, score_reference(mdp));
}

/// 100 (clean - perturbed) / |clean - floor|.
inline double degradation_pct(double clean, double perturbed, double floor) {
  const double span = std::abs(clean - floor);
  if (clean == perturbed) return 0.0;
  return 100.0 * (clean - perturbed) / std::max(span, 1e-12);
}

// ---- reports ----------------------------------------------------------------------

struct EvalRow {
  std::string condition;
  double level_or_scale = 0.0;
  std::uint64_t seed = 0;
  double return_mean = 0.0;
  double return_std = 0.0;
  double norm_score = 0.0;
  double degradation_pct = 0.0;
};

struct EvalReport {
  ScoreReference reference;
  std::vector<EvalRow> rows;

  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> out;
    for (const auto& r : rows)
      if (std::find(out.begin(), out.end(), r.seed) == out.end()) out.push_back(r.seed);
    return out;
  }

  /// Seed-averaged degradation per condition, in first-appearance order.
  std::vector<std::pair<std::string, double>> mean_degradation() const {
    std::vector<std::pair<std::string, double>> out;
    std::map<std::string, std::pair<double, std::size_t>> acc;
    for (const auto& r : rows) {
      if (!acc.count(r.condition)) out.emplace_back(r.condition, 0.0);
      auto& [sum, n] = acc[r.condition];
      sum += r.degradation_pct;
      ++n;
    }
    for (auto& [cond, value] : out) value = acc[cond].first / static_cast<double>(acc[cond].second);
    return out;
  }

  double mean_degradation(const std::string& condition) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.condition == condition) {
        sum += r.degradation_pct;
        ++n;
      }
    if (n == 0) throw std::out_of_range("no rows for condition " + condition);
    return sum / static_cast<double>(n);
  }

  double mean_score(const std::string& condition) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (r.condition == condition) {
        sum += r.norm_score;
        ++n;
      }
    if (n == 0) throw std::out_of_range("no rows for condition " + condition);
    return sum / static_cast<double>(n);
  }

  void append(const EvalReport& o) { rows.insert(rows.end(), o.rows.begin(), o.rows.end()); }
};

inline void write_csv(const EvalReport& report, std::ostream& out) {
  out << "condition,level_or_scale,seed,return_mean,return_std,norm_score,degradation_pct\n"
      << std::setprecision(10);
  for (const auto& r : report.rows)
    out << r.condition << ',' << r.level_or_scale << ',' << r.seed << ',' << r.return_mean << ','
        << r.return_std << ',' << r.norm_score << ',' << r.degradation_pct << '\n';
}

inline void write_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  write_csv(report, out);
}

/// A policy to evaluate together with the value table a min-value attack
/// targets and the seed it is reported under.
struct SeededAgent {
  std::uint64_t seed = 0;
  TabularPolicy policy;
  TabularV value;
};

/// Clean row plus one row per spec for every agent. Monte Carlo evaluation
/// draws its episodes from a stream derived from the agent's seed.
inline EvalReport robustness_curve(std::span<const SeededAgent> agents, const GridSpec& target,
                                   std::span<const PerturbationSpec> specs,
                                   const EvalMode& mode = {}) {
  std::vector<PerturbationSpec> conditions;
  for (const auto& s : specs)
    if (s.kind != PerturbationKind::none) conditions.push_back(s);
  const FiniteMDP clean_mdp = build_grid(target);
  EvalReport report;
  report.reference = score_reference(clean_mdp);

  auto mode_for = [&](std::uint64_t seed, std::size_t index) -> EvalMode {
    if (!mode) return mode;
    MonteCarlo mc = *mode;
    mc.seed = derive_seed(mode->seed ^ seed, "evaluate", index);
    return mc;
  };

  for (const auto& agent : agents) {
    const auto clean = evaluate(agent.policy, clean_mdp, mode_for(agent.seed, 0));
    report.rows.push_back({"clean", 0.0, agent.seed, clean.mean, clean.std,
                           normalized_score(clean.mean, report.reference), 0.0});
    for (std::size_t i = 0; i < conditions.size(); ++i) {
      const auto& spec = conditions[i];
      const auto mdp = perturb(target, spec, &agent.value);
      const auto res = evaluate(agent.policy, mdp, mode_for(agent.seed, i + 1));
      report.rows.push_back({spec.condition(), spec.intensity(), agent.seed, res.mean, res.std,
                             normalized_score(res.mean, report.reference),
                             degradation_pct(clean.mean, res.mean, report.reference.j_random)});
    }
  }
  return report;
}

inline EvalReport robustness_curve(const TabularPolicy& policy, const TabularV& value,
                                   const GridSpec& target, std::span<const PerturbationSpec> specs,
                                   std::span<const std::uint64_t> seeds, const EvalMode& mode = {}) {
  std::vector<SeededAgent> agents;
  for (auto seed : seeds) agents.push_back({seed, policy, value});
  return robustness_curve(agents, target, specs, mode);
}

/// kinematic and morphology at every nonzero level.
inline std::vector<PerturbationSpec> standard_perturbations() {
  std::vector<PerturbationSpec> out;
  for (Level l : {Level::easy, Level::medium, Level::hard})
    out.push_back(PerturbationSpec::kinematic(l));
  for (Level l : {Level::easy, Level::medium, Level::hard})
    out.push_back(PerturbationSpec::morphology(l));
  return out;
}

inline constexpr double kDefaultAttackScale = 1.0;

/// The standard levels plus a min-value attack of radius kDefaultAttackScale.
inline std::vector<PerturbationSpec> evaluation_suite() {
  auto out = standard_perturbations();
  out.push_back(PerturbationSpec::min_v(kDefaultAttackScale));
  return out;
}

}  // namespace droco
