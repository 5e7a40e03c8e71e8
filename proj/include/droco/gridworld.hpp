#pragma once

// Source/target gridworld pairs with grid analogs of kinematic and
// morphology dynamics shifts.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "droco/mdp.hpp"

namespace droco {

enum GridAction : ActionId { kUp = 0, kDown = 1, kLeft = 2, kRight = 3, kStay = 4 };
inline constexpr std::size_t kGridActions = 5;

inline const char* action_name(ActionId a) {
  static constexpr const char* names[] = {"up", "down", "left", "right", "stay"};
  return a < kGridActions ? names[a] : "?";
}

inline ActionId parse_action(const std::string& name) {
  for (ActionId a = 0; a < kGridActions; ++a)
    if (name == action_name(a)) return a;
  throw std::invalid_argument("unknown grid action: " + name);
}

/// Executed action `jammed` behaves as "stay" with probability jam_prob.
struct KinematicShift {
  ActionId jammed_action = kDown;
  double jam_prob = 1.0;
  bool operator==(const KinematicShift&) const = default;
};

/// Kernel mixed with the kernel of actions rotated by quarter_turns * 90
/// degrees clockwise.
struct MorphologyShift {
  int quarter_turns = 1;
  double mix_weight = 0.3;
  bool operator==(const MorphologyShift&) const = default;
};

using Shift = std::variant<std::monostate, KinematicShift, MorphologyShift>;

struct GridSpec {
  std::size_t width = 8;
  std::size_t height = 8;
  double slip_prob = 0.1;
  StateId start_cell = 0;
  StateId goal_cell = 7;
  double step_reward = 0.0;
  double goal_reward = 1.0;
  std::vector<StateId> hazard_cells;
  double hazard_reward = -1.0;
  double gamma = 0.99;
  Shift shift;

  std::size_t n_states() const { return width * height; }
  StateId cell(std::size_t x, std::size_t y) const { return y * width + x; }
  std::size_t x_of(StateId s) const { return s % width; }
  std::size_t y_of(StateId s) const { return s / width; }

  bool is_hazard(StateId s) const {
    return std::find(hazard_cells.begin(), hazard_cells.end(), s) != hazard_cells.end();
  }
  bool is_absorbing(StateId s) const { return s == goal_cell || is_hazard(s); }

  double r_max() const {
    return std::max({std::abs(step_reward), std::abs(goal_reward),
                     hazard_cells.empty() ? 0.0 : std::abs(hazard_reward), 1e-12});
  }
};

/// Cliff layout: start in the bottom-left corner, hazards on the rest of the
/// bottom row, goal at the right end of the row above the cliff.
inline GridSpec default_grid() {
  GridSpec g;
  g.start_cell = g.cell(0, 0);
  g.goal_cell = g.cell(g.width - 1, 1);
  for (std::size_t x = 1; x < g.width; ++x) g.hazard_cells.push_back(g.cell(x, 0));
  return g;
}

inline void validate(const GridSpec& g) {
  if (g.width == 0 || g.height == 0) throw ValidationError("grid must be nonempty");
  if (!(g.slip_prob >= 0.0 && g.slip_prob < 1.0))
    throw ValidationError("slip_prob must lie in [0,1)");
  if (g.goal_cell >= g.n_states()) throw ValidationError("goal_cell outside grid");
  if (g.start_cell >= g.n_states()) throw ValidationError("start_cell outside grid");
  for (auto h : g.hazard_cells)
    if (h >= g.n_states()) throw ValidationError("hazard cell outside grid");
  if (g.is_hazard(g.start_cell) || g.start_cell == g.goal_cell)
    throw ValidationError("start cell must not be absorbing");
  if (auto* k = std::get_if<KinematicShift>(&g.shift)) {
    if (!(k->jam_prob >= 0.0 && k->jam_prob <= 1.0))
      throw ValidationError("jam_prob must lie in [0,1]");
    if (k->jammed_action >= kGridActions) throw ValidationError("jammed action out of range");
  }
  if (auto* m = std::get_if<MorphologyShift>(&g.shift))
    if (!(m->mix_weight >= 0.0 && m->mix_weight <= 1.0))
      throw ValidationError("mix_weight must lie in [0,1]");
}

/// Direction after rotating `a` by quarter_turns * 90 degrees clockwise.
inline ActionId rotate_action(ActionId a, int quarter_turns) {
  if (a == kStay) return a;
  // clockwise cycle: up -> right -> down -> left -> up
  static constexpr ActionId cycle[] = {kUp, kRight, kDown, kLeft};
  std::size_t pos = 0;
  while (cycle[pos] != a) ++pos;
  const int k = ((quarter_turns % 4) + 4) % 4;
  return cycle[(pos + static_cast<std::size_t>(k)) % 4];
}

namespace detail {

inline StateId grid_move(const GridSpec& g, StateId s, ActionId a) {
  const auto x = g.x_of(s), y = g.y_of(s);
  switch (a) {
    case kUp: return y + 1 < g.height ? g.cell(x, y + 1) : s;
    case kDown: return y > 0 ? g.cell(x, y - 1) : s;
    case kLeft: return x > 0 ? g.cell(x - 1, y) : s;
    case kRight: return x + 1 < g.width ? g.cell(x + 1, y) : s;
    default: return s;
  }
}

}  // namespace detail

/// Builds the grid MDP, then applies the grid's own shift followed by `extra`
/// shifts. Kinematic shifts edit the executed-action effects (so slips into
/// the jammed direction are jammed too); morphology shifts mix the composed
/// kernel with its action-rotated copy.
inline FiniteMDP build_grid(const GridSpec& g, std::span<const Shift> extra = {}) {
  validate(g);
  const auto S = g.n_states();
  const auto A = kGridActions;
  FiniteMDP m = FiniteMDP::zeros(S, A, g.gamma, g.r_max());

  std::vector<Shift> shifts{g.shift};
  shifts.insert(shifts.end(), extra.begin(), extra.end());

  // effect[s][b] = next-state distribution when b is executed at s
  std::vector<double> effect(S * A * S, 0.0);
  auto eff = [&](StateId s, ActionId b) {
    return std::span<double>(effect.data() + (s * A + b) * S, S);
  };
  for (StateId s = 0; s < S; ++s)
    for (ActionId b = 0; b < A; ++b)
      eff(s, b)[g.is_absorbing(s) ? s : detail::grid_move(g, s, b)] = 1.0;

  for (const auto& shift : shifts)
    if (auto* k = std::get_if<KinematicShift>(&shift)) {
      for (StateId s = 0; s < S; ++s) {
        if (g.is_absorbing(s)) continue;
        auto jammed = eff(s, k->jammed_action);
        const auto stay = eff(s, kStay);
        for (StateId sp = 0; sp < S; ++sp)
          jammed[sp] = (1.0 - k->jam_prob) * jammed[sp] + k->jam_prob * stay[sp];
      }
    }

  const double slip_each = g.slip_prob / static_cast<double>(A);
  for (StateId s = 0; s < S; ++s)
    for (ActionId a = 0; a < A; ++a) {
      auto row = m.row(s, a);
      for (ActionId b = 0; b < A; ++b) {
        const double w = (b == a ? 1.0 - g.slip_prob : 0.0) + slip_each;
        const auto e = eff(s, b);
        for (StateId sp = 0; sp < S; ++sp) row[sp] += w * e[sp];
      }
    }

  for (const auto& shift : shifts)
    if (auto* r = std::get_if<MorphologyShift>(&shift)) {
      const FiniteMDP base = m;
      for (StateId s = 0; s < S; ++s)
        for (ActionId a = 0; a < A; ++a) {
          auto row = m.row(s, a);
          const auto own = base.row(s, a);
          const auto rotated = base.row(s, rotate_action(a, r->quarter_turns));
          for (StateId sp = 0; sp < S; ++sp)
            row[sp] = (1.0 - r->mix_weight) * own[sp] + r->mix_weight * rotated[sp];
        }
    }

  for (StateId s = 0; s < S; ++s)
    for (ActionId a = 0; a < A; ++a)
      m.r(s, a) = s == g.goal_cell ? g.goal_reward
                  : g.is_hazard(s) ? g.hazard_reward
                                   : g.step_reward;

  std::fill(m.init_dist.begin(), m.init_dist.end(), 0.0);
  m.init_dist[g.start_cell] = 1.0;

  // Manhattan distance between cells
  for (StateId i = 0; i < S; ++i)
    for (StateId j = 0; j < S; ++j)
      m.d(i, j) = static_cast<double>(
          std::abs(static_cast<long>(g.x_of(i)) - static_cast<long>(g.x_of(j))) +
          std::abs(static_cast<long>(g.y_of(i)) - static_cast<long>(g.y_of(j))));

  validate(m);
  return m;
}

/// Source and target MDPs over identical state/action spaces, rewards,
/// discount, initial distribution and metric; kernels differ only through
/// the specs' shifts.
inline std::pair<FiniteMDP, FiniteMDP> build_pair(const GridSpec& src, const GridSpec& tar) {
  const bool shared = src.width == tar.width && src.height == tar.height &&
                      src.slip_prob == tar.slip_prob && src.start_cell == tar.start_cell &&
                      src.goal_cell == tar.goal_cell && src.step_reward == tar.step_reward &&
                      src.goal_reward == tar.goal_reward &&
                      src.hazard_cells == tar.hazard_cells &&
                      src.hazard_reward == tar.hazard_reward && src.gamma == tar.gamma;
  if (!shared) throw ValidationError("grid specs differ outside their shift fields");
  return {build_grid(src), build_grid(tar)};
}

}  // namespace droco
