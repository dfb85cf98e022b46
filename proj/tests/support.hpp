#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "eapo/optim.hpp"
#include "eapo/worlds.hpp"

namespace eapo::fixture {

inline std::shared_ptr<const worlds::World> key_corridor(int cells, int panels, int horizon, bool terminal = false) {
  worlds::WorldSpec s;
  s.name = "key-corridor";
  s.cells = cells;
  s.panels = panels;
  s.horizon = horizon;
  s.failed_attempt_terminal = terminal;
  return worlds::make_world(s);
}

inline std::shared_ptr<const worlds::World> shop(int items, int attributes, int horizon, bool terminal = false) {
  worlds::WorldSpec s;
  s.name = "shop-sim";
  s.items = items;
  s.attributes = attributes;
  s.horizon = horizon;
  s.failed_attempt_terminal = terminal;
  return worlds::make_world(s);
}

inline AugmentedState start_state(const worlds::World& w, const Goal& g) {
  return AugmentedState{g, w.initial_state(), ExplorationCue::none(), MemoryState{}};
}

inline EnvAction by_name(const worlds::World& w, const std::string& name) {
  auto a = w.action_by_name(name);
  if (!a) throw Error("no action named " + name);
  return *a;
}

// Every admissible augmented action at every reachable augmented state with
// empty or consistent memory; used by exhaustive sweeps.
inline std::vector<std::pair<AugmentedState, AugmentedAction>> all_augmented_pairs(const worlds::World& w) {
  std::vector<std::pair<AugmentedState, AugmentedAction>> out;
  for (const Goal& g : w.goals())
    for (const EnvState& s : w.reachable_states()) {
      if (w.is_terminal(s)) continue;
      for (const MemoryState& m : w.consistent_memories(s))
        for (std::uint16_t c = 0; c < w.cue_count(); ++c) {
          AugmentedState st{g, s, ExplorationCue::from_code(c), m};
          for (const MemoryState& m2 : policy::memory_options(w, st))
            for (std::uint16_t c2 = 0; c2 < w.cue_count(); ++c2)
              for (const EnvAction& a : w.legal_actions(s))
                out.push_back({st, AugmentedAction{ExplorationCue::from_code(c2), m2, a}});
        }
    }
  return out;
}

// Policy with every reachable row filled with N(0, scale) logits.
inline policy::PolicyParameters random_policy(double scale, std::uint64_t seed) {
  policy::PolicyParameters p;
  p.init_scale = scale;
  p.init_seed = seed;
  return p;
}

// Synthetic trajectory over integer states; rewards are filled in with the
// given totals (task only).
inline Trajectory synthetic_trajectory(const std::vector<int>& states, const std::vector<double>& totals) {
  Trajectory t;
  std::vector<EnvState> history;
  for (std::size_t i = 0; i < totals.size(); ++i) {
    Transition tr;
    tr.s_tilde.env = EnvState{static_cast<std::uint32_t>(states[i]), {states[i]}};
    tr.s_tilde_next.env = EnvState{static_cast<std::uint32_t>(states[i + 1]), {states[i + 1]}};
    tr.step = static_cast<int>(i);
    tr.depth = visitation_depth(history, tr.s_tilde.env);
    history.push_back(tr.s_tilde.env);
    tr.reward = RewardBreakdown{totals[i], 0, 0.0, totals[i]};
    t.transitions.push_back(tr);
  }
  return t;
}

}  // namespace eapo::fixture
