#pragma once

// End-to-end pipeline: build the domain pair, collect data, train DROCO and
// the merged baseline, evaluate under perturbations.

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "droco/dataset.hpp"
#include "droco/eval.hpp"
#include "droco/gridworld.hpp"
#include "droco/learner.hpp"
#include "droco/rng.hpp"

namespace droco {

struct ExperimentConfig {
  GridSpec target = default_grid();
  Shift source_shift = KinematicShift{kDown, 1.0};
  Quality src_quality = Quality::medium;
  Quality tar_quality = Quality::medium;
  std::size_t n_src = 20000;
  std::size_t n_tar = 20000;  // full target dataset before subsampling
  double tar_fraction = 0.1;
  std::size_t horizon = 100;
  DrocoConfig droco;
  std::vector<PerturbationSpec> perturbations = evaluation_suite();
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  EvalMode eval;
};

inline GridSpec source_spec(const ExperimentConfig& cfg) {
  GridSpec src = cfg.target;
  src.shift = cfg.source_shift;
  return src;
}

struct DomainData {
  FiniteMDP src;
  FiniteMDP tar;
  OfflineDataset ds_src;
  OfflineDataset ds_tar_full;
};

/// Datasets for one seed; the target subsample is drawn separately so that
/// every fraction shares the same full target dataset.
inline DomainData make_domain_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  auto [src, tar] = build_pair(source_spec(cfg), cfg.target);
  auto ds_src = collect_quality(src, cfg.src_quality, cfg.n_src, cfg.horizon,
                                derive_seed(seed, "collect_src"), Domain::src);
  auto ds_tar = collect_quality(tar, cfg.tar_quality, cfg.n_tar, cfg.horizon,
                                derive_seed(seed, "collect_tar"), Domain::tar);
  return {std::move(src), std::move(tar), std::move(ds_src), std::move(ds_tar)};
}

inline OfflineDataset target_subsample(const DomainData& data, double fraction,
                                       std::uint64_t seed) {
  if (fraction == 1.0) return data.ds_tar_full;
  return subsample(data.ds_tar_full, fraction, derive_seed(seed, "subsample"));
}

inline TrainState train_agent(const DomainData& data, const OfflineDataset& ds_tar,
                              const DrocoConfig& base, std::uint64_t seed, LearnerKind kind) {
  DrocoConfig cfg = base;
  cfg.seed = derive_seed(seed, "train");
  return train(data.ds_src, ds_tar, data.tar, cfg, kind);
}

inline const char* to_string(LearnerKind k) {
  return k == LearnerKind::droco ? "droco" : "baseline";
}

struct StudyRow {
  double fraction = 0.0;
  std::string algorithm;
  std::string condition;
  double mean_degradation = 0.0;
  double mean_norm_score = 0.0;
};

struct DataSizeReport {
  std::vector<double> fractions;
  std::vector<std::string> algorithms;
  std::vector<EvalReport> reports;  // [fraction][algorithm]
  std::vector<StudyRow> table;

  const EvalReport& report(double fraction, const std::string& algorithm) const {
    for (std::size_t f = 0; f < fractions.size(); ++f)
      for (std::size_t a = 0; a < algorithms.size(); ++a)
        if (fractions[f] == fraction && algorithms[a] == algorithm)
          return reports[f * algorithms.size() + a];
    throw std::out_of_range("no report for the requested fraction/algorithm");
  }
};

inline void write_csv(const DataSizeReport& report, std::ostream& out) {
  out << "fraction,algorithm,condition,mean_degradation_pct,mean_norm_score\n"
      << std::setprecision(10);
  for (const auto& r : report.table)
    out << r.fraction << ',' << r.algorithm << ',' << r.condition << ',' << r.mean_degradation
        << ',' << r.mean_norm_score << '\n';
}

/// For every fraction and seed trains the requested learners and runs the
/// robustness curve; the table holds seed-averaged degradation per condition.
inline DataSizeReport data_size_study(std::span<const double> fractions,
                                      const ExperimentConfig& cfg,
                                      std::span<const LearnerKind> learners =
                                          std::span<const LearnerKind>()) {
  static constexpr LearnerKind kBoth[] = {LearnerKind::droco, LearnerKind::merged_baseline};
  if (learners.empty()) learners = kBoth;
  for (double f : fractions)
    if (!(f > 0.0 && f <= 1.0)) throw std::invalid_argument("fractions must lie in (0, 1]");

  DataSizeReport out;
  out.fractions.assign(fractions.begin(), fractions.end());
  for (auto k : learners) out.algorithms.emplace_back(to_string(k));
  out.reports.resize(fractions.size() * learners.size());

  for (auto seed : cfg.seeds) {
    const auto data = make_domain_data(cfg, seed);
    for (std::size_t f = 0; f < fractions.size(); ++f) {
      const auto ds_tar = target_subsample(data, fractions[f], seed);
      for (std::size_t a = 0; a < learners.size(); ++a) {
        const auto st = train_agent(data, ds_tar, cfg.droco, seed, learners[a]);
        const SeededAgent agent{seed, st.policy, st.v};
        const auto rep = robustness_curve(std::span(&agent, 1), cfg.target, cfg.perturbations,
                                          cfg.eval);
        auto& slot = out.reports[f * learners.size() + a];
        slot.reference = rep.reference;
        slot.append(rep);
      }
    }
  }

  for (std::size_t f = 0; f < fractions.size(); ++f)
    for (std::size_t a = 0; a < learners.size(); ++a) {
      const auto& rep = out.reports[f * learners.size() + a];
      for (const auto& [cond, deg] : rep.mean_degradation())
        out.table.push_back({fractions[f], out.algorithms[a], cond, deg, rep.mean_score(cond)});
    }
  return out;
}

}  // namespace droco
