#pragma once

// Flat sectioned key = value run configuration. Every key is typed, unknown
// sections and keys are rejected, and the canonical text form is hashed to
// name run directories.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "droco/dataset.hpp"
#include "droco/eval.hpp"
#include "droco/experiment.hpp"
#include "droco/gridworld.hpp"
#include "droco/learner.hpp"
#include "droco/rng.hpp"

namespace droco {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, const std::string& what)
      : std::runtime_error(line ? detail::concat("line ", line, ": ", what) : what) {}
};

struct RunConfig {
  ExperimentConfig experiment;
  std::string out_dir;  // empty: take the environment default
  std::vector<double> betas;
  std::vector<double> deltas;
  std::vector<double> fractions;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    auto t = trim(item);
    if (!t.empty()) out.push_back(std::move(t));
  }
  return out;
}

inline double to_double(const std::string& s, std::size_t line) {
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(line, "expected a number, got '" + s + "'");
  return x;
}

inline std::uint64_t to_uint(const std::string& s, std::size_t line) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError(line, "expected a nonnegative integer, got '" + s + "'");
  return x;
}

inline std::vector<double> to_doubles(const std::string& s, std::size_t line) {
  std::vector<double> out;
  for (const auto& item : split(s, ',')) out.push_back(to_double(item, line));
  return out;
}

/// "x,y" grid coordinates.
inline StateId to_cell(const GridSpec& g, const std::string& s, std::size_t line) {
  const auto xy = split(s, ',');
  if (xy.size() != 2) throw ConfigError(line, "expected a cell as x,y, got '" + s + "'");
  return g.cell(to_uint(xy[0], line), to_uint(xy[1], line));
}

inline std::string format_double(double x) {
  std::ostringstream out;
  out << std::setprecision(17) << x;
  return out.str();
}

template <typename T, typename F>
std::string join(const std::vector<T>& items, F&& fmt, const char* sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += fmt(items[i]);
  }
  return out;
}

inline std::string perturbation_text(const PerturbationSpec& p) {
  switch (p.kind) {
    case PerturbationKind::kinematic: return std::string("kin:") + to_string(p.level);
    case PerturbationKind::morphology: return std::string("morph:") + to_string(p.level);
    case PerturbationKind::min_v: return "minq:" + format_double(p.scale);
    default: return "none";
  }
}

}  // namespace config_detail

/// Applies one key of one section; throws ConfigError for unknown keys or
/// malformed values.
inline void apply_setting(RunConfig& rc, const std::string& section, const std::string& key,
                          const std::string& value, std::size_t line) {
  using namespace config_detail;
  auto& ex = rc.experiment;
  auto& g = ex.target;
  auto& d = ex.droco;
  auto num = [&] { return to_double(value, line); };
  auto uint = [&] { return static_cast<std::size_t>(to_uint(value, line)); };
  auto unknown = [&] { throw ConfigError(line, "unknown key '" + key + "' in [" + section + "]"); };

  if (section == "grid") {
    if (key == "width") {
      g.width = uint();
    } else if (key == "height") {
      g.height = uint();
    } else if (key == "slip_prob") {
      g.slip_prob = num();
    } else if (key == "start") {
      g.start_cell = to_cell(g, value, line);
    } else if (key == "goal") {
      g.goal_cell = to_cell(g, value, line);
    } else if (key == "hazards") {
      g.hazard_cells.clear();
      for (const auto& c : split(value, ';')) g.hazard_cells.push_back(to_cell(g, c, line));
    } else if (key == "step_reward") {
      g.step_reward = num();
    } else if (key == "goal_reward") {
      g.goal_reward = num();
    } else if (key == "hazard_reward") {
      g.hazard_reward = num();
    } else if (key == "gamma") {
      g.gamma = num();
    } else {
      unknown();
    }
  } else if (section == "source") {
    if (key == "shift") {
      if (value == "none") {
        ex.source_shift = std::monostate{};
      } else if (value == "kinematic") {
        if (!std::holds_alternative<KinematicShift>(ex.source_shift))
          ex.source_shift = KinematicShift{};
      } else if (value == "morph" || value == "morphology") {
        if (!std::holds_alternative<MorphologyShift>(ex.source_shift))
          ex.source_shift = MorphologyShift{};
      } else {
        throw ConfigError(line, "shift must be kinematic, morph or none");
      }
    } else if (key == "jammed_action" || key == "jam_prob") {
      auto* k = std::get_if<KinematicShift>(&ex.source_shift);
      if (!k) throw ConfigError(line, key + " needs shift = kinematic");
      try {
        if (key == "jammed_action")
          k->jammed_action = parse_action(value);
        else
          k->jam_prob = num();
      } catch (const std::invalid_argument& e) {
        throw ConfigError(line, e.what());
      }
    } else if (key == "quarter_turns" || key == "mix_weight") {
      auto* m = std::get_if<MorphologyShift>(&ex.source_shift);
      if (!m) throw ConfigError(line, key + " needs shift = morph");
      if (key == "quarter_turns")
        m->quarter_turns = static_cast<int>(uint());
      else
        m->mix_weight = num();
    } else {
      unknown();
    }
  } else if (section == "data") {
    try {
      if (key == "src_quality") {
        ex.src_quality = parse_quality(value);
      } else if (key == "tar_quality") {
        ex.tar_quality = parse_quality(value);
      } else if (key == "n_src") {
        ex.n_src = uint();
      } else if (key == "n_tar") {
        ex.n_tar = uint();
      } else if (key == "tar_fraction") {
        ex.tar_fraction = num();
      } else if (key == "horizon") {
        ex.horizon = uint();
      } else {
        unknown();
      }
    } catch (const std::invalid_argument& e) {
      throw ConfigError(line, e.what());
    }
  } else if (section == "droco") {
    if (key == "beta") {
      d.beta = num();
    } else if (key == "delta") {
      d.delta = num();
    } else if (key == "tau") {
      d.tau = num();
    } else if (key == "awr_alpha") {
      d.awr_alpha = num();
    } else if (key == "gamma") {
      d.gamma = num();
    } else if (key == "n_members") {
      d.n_members = uint();
    } else if (key == "smoothing_alpha") {
      d.smoothing_alpha = num();
    } else if (key == "q_lr") {
      d.q_lr = num();
    } else if (key == "v_lr") {
      d.v_lr = num();
    } else if (key == "batch_src") {
      d.batch_src = uint();
    } else if (key == "batch_tar") {
      d.batch_tar = uint();
    } else if (key == "steps") {
      d.steps = uint();
    } else if (key == "target_update_rate") {
      d.target_update_rate = num();
    } else if (key == "log_every") {
      d.log_every = uint();
    } else {
      unknown();
    }
  } else if (section == "eval") {
    if (key == "perturbations") {
      ex.perturbations.clear();
      try {
        for (const auto& p : split(value, ','))
          if (auto spec = parse_perturbation(p); spec.kind != PerturbationKind::none)
            ex.perturbations.push_back(spec);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(line, e.what());
      }
    } else if (key == "mode") {
      if (value == "exact")
        ex.eval.reset();
      else if (value == "monte_carlo")
        ex.eval = ex.eval.value_or(MonteCarlo{});
      else
        throw ConfigError(line, "mode must be exact or monte_carlo");
    } else if (key == "episodes" || key == "eval_horizon") {
      if (!ex.eval) throw ConfigError(line, key + " needs mode = monte_carlo");
      (key == "episodes" ? ex.eval->n_episodes : ex.eval->horizon) = uint();
    } else {
      unknown();
    }
  } else if (section == "run") {
    if (key == "seeds") {
      ex.seeds.clear();
      for (const auto& s : split(value, ',')) ex.seeds.push_back(to_uint(s, line));
    } else if (key == "out_dir") {
      rc.out_dir = value;
    } else {
      unknown();
    }
  } else if (section == "sweep") {
    if (key == "betas")
      rc.betas = to_doubles(value, line);
    else if (key == "deltas")
      rc.deltas = to_doubles(value, line);
    else if (key == "fractions")
      rc.fractions = to_doubles(value, line);
    else
      unknown();
  } else {
    throw ConfigError(line, "unknown section [" + section + "]");
  }
}

inline void validate(const RunConfig& rc) {
  const auto& ex = rc.experiment;
  try {
    validate(ex.target);
    GridSpec src = source_spec(ex);
    validate(src);
    validate(ex.droco);
  } catch (const ValidationError& e) {
    throw ConfigError(0, e.what());
  }
  if (ex.droco.gamma != ex.target.gamma)
    throw ConfigError(0, "droco.gamma must equal grid.gamma");
  if (ex.n_src == 0 || ex.n_tar == 0) throw ConfigError(0, "dataset sizes must be positive");
  if (ex.horizon == 0) throw ConfigError(0, "horizon must be positive");
  if (!(ex.tar_fraction > 0.0 && ex.tar_fraction <= 1.0))
    throw ConfigError(0, "tar_fraction must lie in (0,1]");
  if (ex.seeds.empty()) throw ConfigError(0, "seed list must be nonempty");
  for (double f : rc.fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError(0, "sweep fractions must lie in (0,1]");
  for (double b : rc.betas)
    if (!(b >= 0.0)) throw ConfigError(0, "sweep betas must be nonnegative");
  for (double x : rc.deltas)
    if (!(x > 0.0)) throw ConfigError(0, "sweep deltas must be positive");
}

/// Lines are "[section]", "key = value", blank, or comments starting with
/// '#' or ';'. Duplicate keys within a section are rejected.
inline RunConfig parse_run_config(std::istream& in) {
  RunConfig rc;
  std::string raw, section;
  std::map<std::string, std::size_t> seen;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto text = config_detail::trim(raw);
    if (text.empty() || text[0] == '#' || text[0] == ';') continue;
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError(line, "unterminated section header");
      section = config_detail::trim(std::string_view(text).substr(1, text.size() - 2));
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected key = value");
    if (section.empty()) throw ConfigError(line, "key outside of any section");
    const auto key = config_detail::trim(std::string_view(text).substr(0, eq));
    const auto value = config_detail::trim(std::string_view(text).substr(eq + 1));
    const auto [it, fresh] = seen.emplace(section + "." + key, line);
    if (!fresh)
      throw ConfigError(line, detail::concat("duplicate key '", key, "' (first set on line ",
                                             it->second, ")"));
    apply_setting(rc, section, key, value, line);
  }
  validate(rc);
  return rc;
}

inline RunConfig parse_run_config(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open config " + path);
  return parse_run_config(in);
}

/// Canonical text: every key written explicitly, so that parsing it back
/// gives the same configuration.
inline std::string to_text(const RunConfig& rc) {
  using config_detail::format_double;
  using config_detail::join;
  const auto& ex = rc.experiment;
  const auto& g = ex.target;
  const auto& d = ex.droco;
  auto cell = [&](StateId s) { return detail::concat(g.x_of(s), ",", g.y_of(s)); };
  std::ostringstream out;
  out << "[grid]\n"
      << "width = " << g.width << "\nheight = " << g.height
      << "\nslip_prob = " << format_double(g.slip_prob) << "\nstart = " << cell(g.start_cell)
      << "\ngoal = " << cell(g.goal_cell) << "\nhazards = " << join(g.hazard_cells, cell, "; ")
      << "\nstep_reward = " << format_double(g.step_reward)
      << "\ngoal_reward = " << format_double(g.goal_reward)
      << "\nhazard_reward = " << format_double(g.hazard_reward)
      << "\ngamma = " << format_double(g.gamma) << "\n\n[source]\n";
  if (auto* k = std::get_if<KinematicShift>(&ex.source_shift))
    out << "shift = kinematic\njammed_action = " << action_name(k->jammed_action)
        << "\njam_prob = " << format_double(k->jam_prob) << '\n';
  else if (auto* m = std::get_if<MorphologyShift>(&ex.source_shift))
    out << "shift = morph\nquarter_turns = " << m->quarter_turns
        << "\nmix_weight = " << format_double(m->mix_weight) << '\n';
  else
    out << "shift = none\n";
  out << "\n[data]\nsrc_quality = " << to_string(ex.src_quality)
      << "\ntar_quality = " << to_string(ex.tar_quality) << "\nn_src = " << ex.n_src
      << "\nn_tar = " << ex.n_tar << "\ntar_fraction = " << format_double(ex.tar_fraction)
      << "\nhorizon = " << ex.horizon << "\n\n[droco]\nbeta = " << format_double(d.beta)
      << "\ndelta = " << format_double(d.delta) << "\ntau = " << format_double(d.tau)
      << "\nawr_alpha = " << format_double(d.awr_alpha) << "\ngamma = " << format_double(d.gamma)
      << "\nn_members = " << d.n_members
      << "\nsmoothing_alpha = " << format_double(d.smoothing_alpha)
      << "\nq_lr = " << format_double(d.q_lr) << "\nv_lr = " << format_double(d.v_lr)
      << "\nbatch_src = " << d.batch_src << "\nbatch_tar = " << d.batch_tar
      << "\nsteps = " << d.steps
      << "\ntarget_update_rate = " << format_double(d.target_update_rate)
      << "\nlog_every = " << d.log_every << "\n\n[eval]\nperturbations = "
      << (ex.perturbations.empty() ? std::string("none")
                                   : join(ex.perturbations, config_detail::perturbation_text))
      << '\n';
  if (ex.eval)
    out << "mode = monte_carlo\nepisodes = " << ex.eval->n_episodes
        << "\neval_horizon = " << ex.eval->horizon << '\n';
  else
    out << "mode = exact\n";
  auto num = [](double x) { return format_double(x); };
  out << "\n[run]\nseeds = " << join(ex.seeds, [](std::uint64_t s) { return std::to_string(s); })
      << '\n';
  if (!rc.out_dir.empty()) out << "out_dir = " << rc.out_dir << '\n';
  out << "\n[sweep]\nbetas = " << join(rc.betas, num) << "\ndeltas = " << join(rc.deltas, num)
      << "\nfractions = " << join(rc.fractions, num) << '\n';
  return out.str();
}

/// 16 hex digits identifying the configuration.
inline std::string config_hash(const RunConfig& rc) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a(to_text(rc));
  return out.str();
}

}  // namespace droco
