// Command-line entry point: gen-data, train, eval, verify, sweep.
//
// Exit codes: 0 success, 2 usage or configuration error, 3 numerical abort,
// 4 verification violations.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "droco/droco.hpp"

namespace fs = std::filesystem;
using namespace droco;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitViolation = 4;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunConfig load_or_default(const std::string& path) {
  if (path.empty()) {
    RunConfig rc;
    validate(rc);
    return rc;
  }
  if (!fs::exists(path)) throw UsageError("config file not found: " + path);
  return load_run_config(path);
}

/// <out>/<config hash>-s<seed>, where <out> is --out, the config's out_dir,
/// DROCO_OUT_DIR or "runs", in that order.
fs::path run_dir(const RunConfig& rc, std::uint64_t seed, const std::string& explicit_out) {
  if (!explicit_out.empty()) return explicit_out;
  std::string base = rc.out_dir;
  if (base.empty())
    if (const char* env = std::getenv("DROCO_OUT_DIR")) base = env;
  if (base.empty()) base = "runs";
  return fs::path(base) / (config_hash(rc) + "-s" + std::to_string(seed));
}

fs::path prepare_dir(const fs::path& dir, const RunConfig& rc) {
  fs::create_directories(dir);
  std::ofstream(dir / "config.ini") << to_text(rc);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot open for writing: " + path.string());
  out << text;
}

std::uint64_t pick_seed(const RunConfig& rc, const std::optional<std::uint64_t>& flag) {
  return flag ? *flag : rc.experiment.seeds.front();
}

// ---- gen-data -------------------------------------------------------------------

struct GenDataFlags {
  std::string config;
  std::string shift;
  std::string quality;
  std::string tar_quality;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
  std::string out;
};

int cmd_gen_data(const GenDataFlags& f) {
  RunConfig rc = load_or_default(f.config);
  auto& ex = rc.experiment;
  if (!f.shift.empty()) {
    if (f.shift == "none")
      ex.source_shift = std::monostate{};
    else if (f.shift == "kinematic")
      ex.source_shift = KinematicShift{};
    else if (f.shift == "morph")
      ex.source_shift = MorphologyShift{};
    else
      throw UsageError("--shift must be kinematic, morph or none");
  }
  try {
    if (!f.quality.empty()) ex.src_quality = ex.tar_quality = parse_quality(f.quality);
    if (!f.tar_quality.empty()) ex.tar_quality = parse_quality(f.tar_quality);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (f.n) {
    if (*f.n == 0) throw UsageError("--n must be positive");
    ex.n_src = ex.n_tar = *f.n;
  }
  const auto seed = pick_seed(rc, f.seed);
  ex.seeds = {seed};
  validate(rc);

  const auto dir = prepare_dir(run_dir(rc, seed, f.out), rc);
  const auto data = make_domain_data(ex, seed);
  save_dataset(data.ds_src, (dir / "src.jsonl").string());
  save_dataset(data.ds_tar_full, (dir / "tar.jsonl").string());
  save_json({{"src", to_json(data.src)}, {"tar", to_json(data.tar)}},
            (dir / "mdp_pair.json").string());
  std::cout << "source records: " << data.ds_src.size() << '\n'
            << "target records: " << data.ds_tar_full.size() << '\n'
            << "written to " << dir.string() << '\n';
  return kExitOk;
}

// ---- train ----------------------------------------------------------------------

struct TrainFlags {
  std::string config;
  std::string data;
  bool baseline = false;
  bool assert_identity = false;
  std::optional<std::size_t> steps;
  std::optional<double> beta;
  std::optional<std::uint64_t> seed;
  std::string out;
};

DomainData load_domain_data(const ExperimentConfig& ex, const fs::path& dir) {
  for (const char* name : {"src.jsonl", "tar.jsonl"})
    if (!fs::exists(dir / name)) throw UsageError("missing dataset " + (dir / name).string());
  auto [src, tar] = build_pair(source_spec(ex), ex.target);
  const auto S = tar.n_states, A = tar.n_actions;
  auto ds_src = load_dataset((dir / "src.jsonl").string(), S, A);
  auto ds_tar = load_dataset((dir / "tar.jsonl").string(), S, A);
  return {std::move(src), std::move(tar), std::move(ds_src), std::move(ds_tar)};
}

/// Compares the penalized target at beta = 1 with the ensemble-min target on
/// source records, sharing the member draws. Returns the mismatch count.
std::size_t identity_mismatches(const TrainState& st, const OfflineDataset& ds_src,
                                double gamma, std::uint64_t seed) {
  const auto v = support_values(st.q, st.support);
  std::vector<TransitionRecord> batch;
  for (std::size_t i = 0; i < ds_src.size() && batch.size() < 1024; ++i) batch.push_back(ds_src[i]);
  const auto targets = rcb_ensemble_backup(st.q, batch, *st.ensemble, st.support, gamma, seed);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng draw(record_seed(seed, i));
    const auto pen = penalty_terms(batch[i], v, *st.ensemble, draw);
    if (td_target(batch[i], v, pen, 1.0, gamma) != targets[i]) ++bad;
  }
  return bad;
}

int cmd_train(const TrainFlags& f) {
  RunConfig rc = load_or_default(f.config);
  auto& ex = rc.experiment;
  if (f.steps) ex.droco.steps = *f.steps;
  if (f.beta) ex.droco.beta = *f.beta;
  if (f.assert_identity) {
    if (f.baseline) throw UsageError("--assert-identity applies to DROCO training only");
    if (ex.droco.beta != 1.0) throw UsageError("--assert-identity needs beta = 1");
  }
  const auto seed = pick_seed(rc, f.seed);
  ex.seeds = {seed};
  validate(rc);

  const auto data = f.data.empty() ? make_domain_data(ex, seed) : load_domain_data(ex, f.data);
  const auto ds_tar = target_subsample(data, ex.tar_fraction, seed);
  const auto kind = f.baseline ? LearnerKind::merged_baseline : LearnerKind::droco;
  const auto dir = prepare_dir(run_dir(rc, seed, f.out), rc);
  const auto st = train_agent(data, ds_tar, ex.droco, seed, kind);

  save_json(checkpoint_json(st), (dir / "checkpoint.json").string());
  write_loss_csv(st.trace, (dir / "loss.csv").string());
  const auto clean = evaluate(st.policy, data.tar, ex.eval);
  std::cout << "learner: " << to_string(kind) << '\n'
            << "steps: " << st.step << '\n'
            << "normalized score: " << normalized_score(clean.mean, data.tar) << '\n'
            << "mean Q over source pairs: " << mean_q_over(st.q, data.ds_src) << '\n'
            << "written to " << dir.string() << '\n';

  if (f.assert_identity) {
    const auto bad = identity_mismatches(st, data.ds_src, ex.droco.gamma,
                                         derive_seed(seed, "identity"));
    if (bad) {
      std::cerr << "identity check failed on " << bad << " source records\n";
      return kExitViolation;
    }
    std::cout << "identity check passed\n";
  }
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------------

struct EvalFlags {
  std::string config;
  std::string checkpoint;
  std::vector<std::string> perturb;
  std::vector<std::uint64_t> seeds;
  std::string out;
};

int cmd_eval(const EvalFlags& f) {
  if (!fs::exists(f.checkpoint)) throw UsageError("checkpoint not found: " + f.checkpoint);
  const fs::path ckpt_dir = fs::path(f.checkpoint).parent_path();
  std::string config = f.config;
  if (config.empty() && fs::exists(ckpt_dir / "config.ini")) config = (ckpt_dir / "config.ini").string();
  RunConfig rc = load_or_default(config);
  auto& ex = rc.experiment;
  if (!f.perturb.empty()) {
    ex.perturbations.clear();
    try {
      for (const auto& p : f.perturb)
        if (auto spec = parse_perturbation(p); spec.kind != PerturbationKind::none)
          ex.perturbations.push_back(spec);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (!f.seeds.empty()) ex.seeds = f.seeds;

  const auto st = state_from_json(load_json(f.checkpoint));
  if (st.q.n_states != ex.target.n_states() || st.q.n_actions != kGridActions)
    throw UsageError("checkpoint does not match the configured grid");
  const auto report =
      robustness_curve(st.policy, st.v, ex.target, ex.perturbations, ex.seeds, ex.eval);
  const fs::path out = f.out.empty() ? ckpt_dir / "eval.csv" : fs::path(f.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_csv(report, out.string());
  for (const auto& [cond, deg] : report.mean_degradation())
    std::cout << cond << ": score " << report.mean_score(cond) << ", degradation " << deg
              << "%\n";
  std::cout << "written to " << out.string() << '\n';
  return kExitOk;
}

// ---- verify ---------------------------------------------------------------------

struct VerifyFlags {
  std::string prop = "all";
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_verify(const VerifyFlags& f) {
  VerifySummary summary;
  if (f.prop == "all") {
    if (f.trials) {
      for (const auto& id : checker_ids()) summary.results.push_back(run_checker(id, f.trials, f.seed));
    } else {
      summary = run_all(f.seed);
    }
  } else {
    const auto& ids = checker_ids();
    if (std::find(ids.begin(), ids.end(), f.prop) == ids.end())
      throw UsageError("unknown checker id: " + f.prop);
    summary.results.push_back(run_checker(f.prop, f.trials, f.seed));
  }
  print_table(summary, std::cout);
  const fs::path out = f.out.empty() ? fs::path("verify_summary.json") : fs::path(f.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_text(out, to_json(summary).dump(2) + "\n");
  std::cout << "summary written to " << out.string() << '\n';
  return summary.ok() ? kExitOk : kExitViolation;
}

// ---- sweep ----------------------------------------------------------------------

struct SweepFlags {
  std::string config;
  std::size_t jobs = 1;
  std::optional<std::size_t> steps;
  std::string out;
};

struct SweepPoint {
  double beta = 0.0;
  double delta = 0.0;
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::string status = "ok";
  double norm_score = 0.0;
  double degradation = 0.0;
  double mean_q = 0.0;
  std::string beta_monotone;
};

void run_point(const ExperimentConfig& ex, SweepPoint& p) {
  try {
    const auto data = make_domain_data(ex, p.seed);
    const auto ds_tar = target_subsample(data, p.fraction, p.seed);
    DrocoConfig cfg = ex.droco;
    cfg.beta = p.beta;
    cfg.delta = p.delta;
    const auto st = train_agent(data, ds_tar, cfg, p.seed, LearnerKind::droco);
    const SeededAgent agent{p.seed, st.policy, st.v};
    const auto rep = robustness_curve(std::span(&agent, 1), ex.target, ex.perturbations, ex.eval);
    p.norm_score = rep.mean_score("clean");
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& [cond, deg] : rep.mean_degradation())
      if (cond != "clean") total += deg, ++n;
    p.degradation = n ? total / static_cast<double>(n) : 0.0;
    p.mean_q = mean_q_over(st.q, data.ds_src);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    p.status = "failed: " + msg;
  }
}

/// Marks each (delta, fraction, seed) group by whether mean Q is
/// nonincreasing in beta.
void mark_monotone(std::vector<SweepPoint>& points) {
  for (auto& p : points) {
    std::vector<const SweepPoint*> group;
    for (const auto& o : points)
      if (o.delta == p.delta && o.fraction == p.fraction && o.seed == p.seed) group.push_back(&o);
    std::sort(group.begin(), group.end(), [](auto* a, auto* b) { return a->beta < b->beta; });
    bool failed = false, monotone = true;
    for (std::size_t i = 0; i < group.size(); ++i) {
      failed |= group[i]->status != "ok";
      if (i && group[i]->mean_q > group[i - 1]->mean_q) monotone = false;
    }
    p.beta_monotone = failed ? "" : (monotone ? "1" : "0");
  }
}

int cmd_sweep(const SweepFlags& f) {
  RunConfig rc = load_or_default(f.config);
  auto& ex = rc.experiment;
  if (rc.betas.empty() && rc.deltas.empty() && rc.fractions.empty())
    throw UsageError("sweep grid is empty: set betas, deltas or fractions in [sweep]");
  if (f.jobs == 0) throw UsageError("--jobs must be at least 1");
  if (f.steps) ex.droco.steps = *f.steps;
  validate(rc);
  const auto betas = rc.betas.empty() ? std::vector<double>{ex.droco.beta} : rc.betas;
  const auto deltas = rc.deltas.empty() ? std::vector<double>{ex.droco.delta} : rc.deltas;
  const auto fractions =
      rc.fractions.empty() ? std::vector<double>{ex.tar_fraction} : rc.fractions;

  std::vector<SweepPoint> points;
  for (double b : betas)
    for (double d : deltas)
      for (double fr : fractions)
        for (auto seed : ex.seeds) {
          SweepPoint p;
          p.beta = b, p.delta = d, p.fraction = fr, p.seed = seed;
          points.push_back(p);
        }

  std::size_t next = 0;
  std::mutex lock;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard guard(lock);
        if (next == points.size()) return;
        i = next++;
      }
      run_point(ex, points[i]);
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t j = 0; j < std::min(f.jobs, points.size()); ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  mark_monotone(points);

  const auto dir = prepare_dir(run_dir(rc, ex.seeds.front(), f.out), rc);
  std::ostringstream csv;
  csv << "beta,delta,fraction,seed,status,norm_score,degradation,mean_q,beta_monotone\n"
      << std::setprecision(10);
  std::size_t failed = 0;
  for (const auto& p : points) {
    csv << p.beta << ',' << p.delta << ',' << p.fraction << ',' << p.seed << ',' << p.status;
    if (p.status == "ok")
      csv << ',' << p.norm_score << ',' << p.degradation << ',' << p.mean_q;
    else
      csv << ",,,", ++failed;
    csv << ',' << p.beta_monotone << '\n';
  }
  write_text(dir / "sweep.csv", csv.str());
  std::cout << points.size() << " grid points, " << failed << " failed\n"
            << "written to " << (dir / "sweep.csv").string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-robust cross-domain offline RL on tabular gridworlds"};
  app.require_subcommand(1);

  GenDataFlags gen;
  auto* g = app.add_subcommand("gen-data", "collect source and target datasets");
  g->add_option("--config", gen.config, "run configuration file");
  g->add_option("--shift", gen.shift, "source shift: kinematic, morph or none");
  g->add_option("--quality", gen.quality, "behavior quality for both domains");
  g->add_option("--tar-quality", gen.tar_quality, "behavior quality for the target domain");
  g->add_option("--n", gen.n, "records per dataset");
  g->add_option("--seed", gen.seed, "root seed");
  g->add_option("--out", gen.out, "output directory");

  TrainFlags tr;
  auto* t = app.add_subcommand("train", "train DROCO or the merged baseline");
  t->add_option("--config", tr.config, "run configuration file");
  t->add_option("--data", tr.data, "directory written by gen-data");
  t->add_flag("--baseline", tr.baseline, "train the merged-data baseline");
  t->add_flag("--assert-identity", tr.assert_identity,
              "check the beta = 1 target against the ensemble-min target");
  t->add_option("--steps", tr.steps, "gradient steps");
  t->add_option("--beta", tr.beta, "value-penalty weight");
  t->add_option("--seed", tr.seed, "root seed");
  t->add_option("--out", tr.out, "output directory");

  EvalFlags ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint under perturbations");
  e->add_option("--config", ev.config, "run configuration file");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint JSON")->required();
  e->add_option("--perturb", ev.perturb, "none, kin:LEVEL, morph:LEVEL or minq:RADIUS");
  e->add_option("--seeds", ev.seeds, "evaluation seeds");
  e->add_option("--out", ev.out, "output CSV");

  VerifyFlags ve;
  auto* v = app.add_subcommand("verify", "run the randomized property checks");
  v->add_option("--prop", ve.prop, "checker id or all");
  v->add_option("--trials", ve.trials, "trials per checker (0 for defaults)");
  v->add_option("--seed", ve.seed, "root seed");
  v->add_option("--out", ve.out, "summary JSON path");

  SweepFlags sw;
  auto* s = app.add_subcommand("sweep", "train and evaluate over a beta/delta/fraction grid");
  s->add_option("--config", sw.config, "run configuration file")->required();
  s->add_option("--jobs", sw.jobs, "concurrent grid points");
  s->add_option("--steps", sw.steps, "gradient steps per grid point");
  s->add_option("--out", sw.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*v) return cmd_verify(ve);
    if (*s) return cmd_sweep(sw);
  } catch (const DivergenceError& err) {
    std::cerr << "numerical abort: " << err.what() << '\n';
    return kExitNumerical;
  } catch (const ConvergenceError& err) {
    std::cerr << "numerical abort: " << err.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
