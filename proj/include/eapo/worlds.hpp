#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>

#include "eapo/core.hpp"
#include "eapo/rng.hpp"

namespace eapo::worlds {

struct WorldSpec {
  std::string name = "key-corridor";
  int cells = 3;       // key-corridor N
  int panels = 2;      // key-corridor K
  int items = 2;       // shop-sim M
  int attributes = 1;  // shop-sim Q
  int horizon = 10;
  std::uint64_t seed = 0;
  bool failed_attempt_terminal = false;
  int memory_cap = static_cast<int>(kDefaultMemoryCap);
};

// Hidden facts of one episode: {key panel} or the item attribute bits.
using Hidden = std::vector<int>;

struct StepResult {
  EnvState next;
  std::optional<Fact> observation;
  bool terminal = false;
  bool success = false;
};

class World {
 public:
  explicit World(WorldSpec spec) : spec_(std::move(spec)) {
    if (spec_.horizon < 1) throw Error("horizon must be positive");
    if (spec_.memory_cap < 1 || spec_.memory_cap > 255) throw Error("memory cap out of range");
  }
  virtual ~World() = default;

  const WorldSpec& spec() const { return spec_; }
  int horizon() const { return spec_.horizon; }
  std::size_t memory_cap() const { return static_cast<std::size_t>(spec_.memory_cap); }

  virtual std::vector<Goal> goals() const = 0;
  // Every hidden assignment the episode prior can produce for this goal; the
  // prior is uniform over this list.
  virtual std::vector<Hidden> hidden_support(const Goal& goal) const = 0;
  virtual EnvState initial_state() const = 0;
  virtual EnvState state_from_id(std::uint32_t id) const = 0;
  virtual bool is_terminal(const EnvState& s) const = 0;
  virtual bool is_success(const EnvState& s) const = 0;
  // Sorted by action id; empty for terminal states.
  virtual std::vector<EnvAction> legal_actions(const EnvState& s) const = 0;
  virtual std::optional<Fact> observation_fact(const EnvState& s) const = 0;
  // Whatever the state itself reveals agrees with the hidden assignment.
  virtual bool consistent(const Goal& goal, const Hidden& hidden, const EnvState& s) const = 0;
  virtual bool fact_holds(const Hidden& hidden, const Fact& f) const = 0;
  virtual std::uint16_t cue_count() const = 0;
  virtual std::vector<Fact> fact_universe() const = 0;
  virtual std::uint16_t action_count() const = 0;
  virtual EnvAction action(std::uint16_t id) const = 0;
  virtual std::string action_name(const EnvAction& a) const = 0;
  // 1 for the actions a goal-directed agent would take given what it already
  // knows, without gathering information or undoing steps; 0 otherwise.
  virtual double reactive_preference(const AugmentedState& s, const EnvAction& a) const = 0;
  virtual std::string describe(const EnvState& s) const = 0;

  StepResult apply(const EnvState& s, const Goal& goal, const Hidden& hidden, const EnvAction& a) const {
    if (!is_legal(s, a))
      throw Error("illegal action " + action_name(a) + " in state " + describe(s));
    StepResult r = apply_legal(s, goal, hidden, a);
    r.observation = observation_fact(r.next);
    r.terminal = is_terminal(r.next);
    r.success = is_success(r.next);
    return r;
  }

  bool is_legal(const EnvState& s, const EnvAction& a) const {
    const auto legal = legal_actions(s);
    return std::find(legal.begin(), legal.end(), a) != legal.end();
  }

  std::optional<EnvAction> action_by_name(std::string_view name) const {
    for (std::uint16_t id = 0; id < action_count(); ++id) {
      const EnvAction a = action(id);
      if (action_name(a) == name) return a;
    }
    return std::nullopt;
  }

  bool memory_consistent(const Hidden& hidden, const MemoryState& m) const {
    for (const Fact& f : m.facts()) {
      if (f.source == kPreviousStateSource) continue;
      if (!fact_holds(hidden, f)) return false;
    }
    return true;
  }

  // Hidden assignments still possible given the goal, the state, and memory.
  std::vector<Hidden> posterior(const Goal& goal, const EnvState& s, const MemoryState& m) const {
    std::vector<Hidden> out;
    for (auto& h : hidden_support(goal))
      if (consistent(goal, h, s) && memory_consistent(h, m)) out.push_back(std::move(h));
    return out;
  }

  std::optional<EnvAction> inverse_action(const EnvState& prev, const EnvState& now) const {
    if (prev == now) return std::nullopt;
    for (const Goal& g : goals()) {
      for (const Hidden& h : hidden_support(g)) {
        if (!consistent(g, h, prev) || !consistent(g, h, now)) continue;
        for (const EnvAction& a : legal_actions(now)) {
          if (apply_legal(now, g, h, a).next == prev) return a;
        }
        return std::nullopt;
      }
    }
    return std::nullopt;
  }

  // All states reachable from the initial state under any goal and hidden
  // assignment, ordered by id.
  std::vector<EnvState> reachable_states() const {
    std::map<std::uint32_t, EnvState> seen;
    for (const Goal& g : goals()) {
      for (const Hidden& h : hidden_support(g)) {
        std::deque<EnvState> frontier{initial_state()};
        std::set<std::uint32_t> local{initial_state().id};
        while (!frontier.empty()) {
          EnvState s = frontier.front();
          frontier.pop_front();
          for (const EnvAction& a : legal_actions(s)) {
            EnvState n = apply_legal(s, g, h, a).next;
            if (local.insert(n.id).second) frontier.push_back(n);
          }
          seen.emplace(s.id, std::move(s));
        }
      }
    }
    std::vector<EnvState> out;
    for (auto& [id, s] : seen) out.push_back(std::move(s));
    return out;
  }

  // Memories (within the cap) that at least one goal and hidden assignment
  // consistent with `s` could have produced. Sorted.
  std::vector<MemoryState> consistent_memories(const EnvState& s) const {
    std::map<std::uint16_t, std::vector<std::uint16_t>> by_source;
    for (const Fact& f : fact_universe()) by_source[f.source].push_back(f.value);
    std::vector<std::pair<std::uint16_t, std::vector<std::uint16_t>>> sources(by_source.begin(),
                                                                              by_source.end());
    std::vector<std::pair<Goal, Hidden>> worlds;
    for (const Goal& g : goals())
      for (auto& h : hidden_support(g))
        if (consistent(g, h, s)) worlds.emplace_back(g, std::move(h));

    std::set<MemoryState> out;
    std::vector<Fact> current;
    std::function<void(std::size_t)> rec = [&](std::size_t i) {
      if (i == sources.size()) {
        if (current.size() > memory_cap()) return;
        MemoryState m = MemoryState::from_facts(current, memory_cap());
        for (const auto& [g, h] : worlds)
          if (memory_consistent(h, m)) {
            out.insert(std::move(m));
            return;
          }
        return;
      }
      rec(i + 1);
      for (std::uint16_t v : sources[i].second) {
        current.push_back(Fact{sources[i].first, v});
        rec(i + 1);
        current.pop_back();
      }
    };
    rec(0);
    return {out.begin(), out.end()};
  }

 protected:
  virtual StepResult apply_legal(const EnvState& s, const Goal& goal, const Hidden& hidden,
                                 const EnvAction& a) const = 0;

  WorldSpec spec_;
};

// ---------------------------------------------------------------------------
// Key corridor: cells 0..N-1, K panels at cell 0, one hides the key, the door
// is at the last cell. Encoding: cell, holding (0 nothing, 1 key, 2 dud),
// viewed panel (-1 none), seen value, door (0 closed, 1 open, 2 jammed).

class KeyCorridor final : public World {
 public:
  enum ActionId : std::uint16_t { kMoveLeft = 0, kMoveRight = 1, kStepBack = 2, kOpenDoor = 3, kFirstPanelAction = 4 };

  explicit KeyCorridor(WorldSpec spec) : World(std::move(spec)) {
    n_ = spec_.cells;
    k_ = spec_.panels;
    if (n_ < 2) throw Error("key-corridor needs at least 2 cells");
    if (k_ < 1) throw Error("key-corridor needs at least 1 panel");
    if (spec_.horizon < 2 * k_ + 2) throw Error("key-corridor horizon must be at least 2K+2");
    if (k_ > spec_.memory_cap) throw Error("key-corridor panel count exceeds the memory cap");
  }

  std::vector<Goal> goals() const override { return {Goal{0, "open the door"}}; }

  std::vector<Hidden> hidden_support(const Goal&) const override {
    std::vector<Hidden> out;
    for (int p = 0; p < k_; ++p) out.push_back({p});
    return out;
  }

  EnvState initial_state() const override { return make(0, 0, -1, 0, 0); }

  EnvState state_from_id(std::uint32_t id) const override {
    const int door = id % 3;
    id /= 3;
    const int seen = id % 2;
    id /= 2;
    const int view = static_cast<int>(id % (k_ + 1)) - 1;
    id /= (k_ + 1);
    const int holding = id % 3;
    id /= 3;
    if (static_cast<int>(id) >= n_) throw Error("key-corridor state id out of range");
    return make(static_cast<int>(id), holding, view, seen, door);
  }

  bool is_terminal(const EnvState& s) const override { return s.encoding[4] != 0 || s.encoding[1] == 2; }
  bool is_success(const EnvState& s) const override { return s.encoding[4] == 1; }

  std::vector<EnvAction> legal_actions(const EnvState& s) const override {
    std::vector<EnvAction> out;
    if (is_terminal(s)) return out;
    const int cell = s.encoding[0], holding = s.encoding[1], view = s.encoding[2];
    if (view >= 0) {
      out.push_back(action(kStepBack));
      out.push_back(action(pick_id(view)));
      return out;
    }
    if (cell == 0 && holding == 0) {
      out.push_back(action(kMoveRight));
      for (int p = 0; p < k_; ++p) out.push_back(action(inspect_id(p)));
      for (int p = 0; p < k_; ++p) out.push_back(action(pick_id(p)));
      return out;
    }
    if (cell > 0) {
      out.push_back(action(kMoveLeft));
      out.push_back(action(kStepBack));
    }
    if (cell < n_ - 1) out.push_back(action(kMoveRight));
    if (cell == n_ - 1) out.push_back(action(kOpenDoor));
    std::sort(out.begin(), out.end(), [](const EnvAction& a, const EnvAction& b) { return a.id < b.id; });
    return out;
  }

  std::optional<Fact> observation_fact(const EnvState& s) const override {
    if (s.encoding[2] < 0) return std::nullopt;
    return Fact{static_cast<std::uint16_t>(s.encoding[2]), static_cast<std::uint16_t>(s.encoding[3])};
  }

  bool consistent(const Goal&, const Hidden& h, const EnvState& s) const override {
    const int view = s.encoding[2];
    return view < 0 || ((h[0] == view) == (s.encoding[3] == 1));
  }

  bool fact_holds(const Hidden& h, const Fact& f) const override {
    return (h[0] == static_cast<int>(f.source)) == (f.value == 1);
  }

  std::uint16_t cue_count() const override { return static_cast<std::uint16_t>(k_ + 1); }

  std::vector<Fact> fact_universe() const override {
    std::vector<Fact> out;
    for (int p = 0; p < k_; ++p)
      for (std::uint16_t v = 0; v < 2; ++v) out.push_back(Fact{static_cast<std::uint16_t>(p), v});
    return out;
  }

  std::uint16_t action_count() const override { return static_cast<std::uint16_t>(kFirstPanelAction + 2 * k_); }

  EnvAction action(std::uint16_t id) const override {
    if (id >= action_count()) throw Error("key-corridor action id out of range");
    switch (id) {
      case kMoveLeft:
      case kMoveRight: return {id, ActionKind::move};
      case kStepBack: return {id, ActionKind::step_back};
      case kOpenDoor: return {id, ActionKind::open};
      default: return {id, id < kFirstPanelAction + k_ ? ActionKind::inspect : ActionKind::pick};
    }
  }

  std::string action_name(const EnvAction& a) const override {
    switch (a.id) {
      case kMoveLeft: return "move_left";
      case kMoveRight: return "move_right";
      case kStepBack: return "step_back";
      case kOpenDoor: return "open_door";
      default:
        if (a.id < kFirstPanelAction + k_) return "inspect_panel_" + std::to_string(a.id - kFirstPanelAction);
        return "pick_panel_" + std::to_string(a.id - kFirstPanelAction - k_);
    }
  }

  double reactive_preference(const AugmentedState& s, const EnvAction& a) const override {
    const int holding = s.env.encoding[1], view = s.env.encoding[2];
    switch (a.id) {
      case kMoveRight:
      case kOpenDoor: return holding == 1 ? 1.0 : 0.0;
      case kMoveLeft:
      case kStepBack: return holding == 0 && view < 0 ? 1.0 : 0.0;
      default: break;
    }
    if (a.id < kFirstPanelAction + k_) return 0.0;
    const int p = a.id - kFirstPanelAction - k_;
    if (view >= 0) return s.env.encoding[3] == 1 ? 1.0 : 0.0;
    const int known = known_key(s.memory);
    if (known >= 0) return p == known ? 1.0 : 0.0;
    return s.memory.contains(Fact{static_cast<std::uint16_t>(p), 0}) ? 0.0 : 1.0;
  }

  // Panel the memory pins the key to, or -1.
  int known_key(const MemoryState& m) const {
    int empty = 0, candidate = -1;
    for (const Fact& f : m.facts()) {
      if (f.source >= k_) continue;
      if (f.value == 1) return f.source;
      ++empty;
    }
    if (empty != k_ - 1) return -1;
    for (int p = 0; p < k_; ++p)
      if (!m.contains(Fact{static_cast<std::uint16_t>(p), 0})) candidate = p;
    return candidate;
  }

  std::string describe(const EnvState& s) const override {
    static constexpr const char* holding[] = {"-", "key", "dud"};
    std::string out = "cell " + std::to_string(s.encoding[0]) + " holding " + holding[s.encoding[1]];
    if (s.encoding[2] >= 0)
      out += " viewing panel " + std::to_string(s.encoding[2]) + (s.encoding[3] ? " (key)" : " (empty)");
    if (s.encoding[4] == 1) out += " door open";
    if (s.encoding[4] == 2) out += " door jammed";
    return out;
  }

  static std::uint16_t inspect_id(int p) { return static_cast<std::uint16_t>(kFirstPanelAction + p); }
  std::uint16_t pick_id(int p) const { return static_cast<std::uint16_t>(kFirstPanelAction + k_ + p); }

 protected:
  StepResult apply_legal(const EnvState& s, const Goal&, const Hidden& h, const EnvAction& a) const override {
    int cell = s.encoding[0], holding = s.encoding[1], view = s.encoding[2], seen = s.encoding[3],
        door = s.encoding[4];
    const int key = h[0];
    switch (a.id) {
      case kMoveLeft: --cell; break;
      case kMoveRight: ++cell; break;
      case kStepBack:
        if (view >= 0) {
          view = -1;
          seen = 0;
        } else {
          --cell;
        }
        break;
      case kOpenDoor:
        if (holding == 1) door = 1;
        else if (spec_.failed_attempt_terminal) door = 2;
        break;
      default:
        if (a.id < kFirstPanelAction + k_) {
          view = a.id - kFirstPanelAction;
          seen = key == view ? 1 : 0;
        } else {
          holding = (a.id - kFirstPanelAction - k_) == key ? 1 : 2;
          view = -1;
          seen = 0;
        }
    }
    return StepResult{make(cell, holding, view, seen, door), std::nullopt, false, false};
  }

 private:
  EnvState make(int cell, int holding, int view, int seen, int door) const {
    EnvState s;
    s.encoding = {cell, holding, view, seen, door};
    s.id = static_cast<std::uint32_t>((((cell * 3 + holding) * (k_ + 1) + (view + 1)) * 2 + seen) * 3 + door);
    return s;
  }

  int n_ = 0;
  int k_ = 0;
};

// ---------------------------------------------------------------------------
// Shop: M items with Q binary attributes each. The goal names the required
// attribute vector and at least one item satisfies it. Encoding: viewed
// attribute source (-1 for the listing), seen value, status (0 shopping,
// 1 bought the right item, 2 failed purchase ended the episode).

class ShopSim final : public World {
 public:
  explicit ShopSim(WorldSpec spec) : World(std::move(spec)) {
    m_ = spec_.items;
    q_ = spec_.attributes;
    if (m_ < 2) throw Error("shop-sim needs at least 2 items");
    if (q_ < 1) throw Error("shop-sim needs at least 1 attribute");
    if (spec_.horizon < 2) throw Error("shop-sim horizon must be at least 2");
    if (m_ * q_ > spec_.memory_cap) throw Error("shop-sim attribute count exceeds the memory cap");
  }

  std::vector<Goal> goals() const override {
    std::vector<Goal> out;
    for (int g = 0; g < (1 << q_); ++g) {
      std::string bits;
      for (int b = 0; b < q_; ++b) bits.push_back(((g >> b) & 1) ? '1' : '0');
      out.push_back(Goal{static_cast<std::uint16_t>(g), "want attributes " + bits});
    }
    return out;
  }

  std::vector<Hidden> hidden_support(const Goal& goal) const override {
    std::vector<Hidden> out;
    const int n = m_ * q_;
    for (int mask = 0; mask < (1 << n); ++mask) {
      Hidden h(n);
      for (int i = 0; i < n; ++i) h[i] = (mask >> i) & 1;
      bool any = false;
      for (int item = 0; item < m_ && !any; ++item) any = matches(h, item, goal);
      if (any) out.push_back(std::move(h));
    }
    return out;
  }

  EnvState initial_state() const override { return make(-1, 0, 0); }

  EnvState state_from_id(std::uint32_t id) const override {
    const int status = id % 3;
    id /= 3;
    const int seen = id % 2;
    id /= 2;
    if (static_cast<int>(id) > m_ * q_) throw Error("shop-sim state id out of range");
    return make(static_cast<int>(id) - 1, seen, status);
  }

  bool is_terminal(const EnvState& s) const override { return s.encoding[2] != 0; }
  bool is_success(const EnvState& s) const override { return s.encoding[2] == 1; }

  std::vector<EnvAction> legal_actions(const EnvState& s) const override {
    std::vector<EnvAction> out;
    if (is_terminal(s)) return out;
    const int view = s.encoding[0];
    if (view >= 0) {
      out.push_back(action(0));
      out.push_back(action(buy_id(view / q_)));
      return out;
    }
    for (int i = 0; i < m_; ++i) out.push_back(action(buy_id(i)));
    for (int src = 0; src < m_ * q_; ++src) out.push_back(action(query_id(src)));
    return out;
  }

  std::optional<Fact> observation_fact(const EnvState& s) const override {
    if (s.encoding[0] < 0) return std::nullopt;
    return Fact{static_cast<std::uint16_t>(s.encoding[0]), static_cast<std::uint16_t>(s.encoding[1])};
  }

  bool consistent(const Goal&, const Hidden& h, const EnvState& s) const override {
    return s.encoding[0] < 0 || h[s.encoding[0]] == s.encoding[1];
  }

  bool fact_holds(const Hidden& h, const Fact& f) const override {
    return f.source < h.size() && h[f.source] == static_cast<int>(f.value);
  }

  std::uint16_t cue_count() const override { return static_cast<std::uint16_t>(1 + m_ * q_); }

  std::vector<Fact> fact_universe() const override {
    std::vector<Fact> out;
    for (int src = 0; src < m_ * q_; ++src)
      for (std::uint16_t v = 0; v < 2; ++v) out.push_back(Fact{static_cast<std::uint16_t>(src), v});
    return out;
  }

  std::uint16_t action_count() const override { return static_cast<std::uint16_t>(1 + m_ + m_ * q_); }

  EnvAction action(std::uint16_t id) const override {
    if (id >= action_count()) throw Error("shop-sim action id out of range");
    if (id == 0) return {0, ActionKind::step_back};
    return {id, id <= m_ ? ActionKind::buy : ActionKind::query};
  }

  std::string action_name(const EnvAction& a) const override {
    if (a.id == 0) return "step_back";
    if (a.id <= m_) return "buy_item_" + std::to_string(a.id - 1);
    const int src = a.id - 1 - m_;
    return "query_item_" + std::to_string(src / q_) + "_attr_" + std::to_string(src % q_);
  }

  double reactive_preference(const AugmentedState& s, const EnvAction& a) const override {
    if (a.id < 1 || a.id > m_) return 0.0;
    const int item = a.id - 1;
    if (!possible_match(s, item)) return 0.0;
    for (int other = 0; other < m_; ++other)
      if (known_match(s, other)) return other == item ? 1.0 : 0.0;
    return 1.0;
  }

  // Whether memory and the current view leave `item` able / certain to match.
  bool possible_match(const AugmentedState& s, int item) const {
    for (int b = 0; b < q_; ++b)
      if (revealed(s, item * q_ + b) == 1 - ((s.goal.id >> b) & 1)) return false;
    return true;
  }
  bool known_match(const AugmentedState& s, int item) const {
    for (int b = 0; b < q_; ++b)
      if (revealed(s, item * q_ + b) != ((s.goal.id >> b) & 1)) return false;
    return true;
  }

  std::string describe(const EnvState& s) const override {
    std::string out = "listing";
    if (s.encoding[0] >= 0)
      out = "item " + std::to_string(s.encoding[0] / q_) + " attr " + std::to_string(s.encoding[0] % q_) +
            " = " + std::to_string(s.encoding[1]);
    if (s.encoding[2] == 1) out += " bought";
    if (s.encoding[2] == 2) out += " failed";
    return out;
  }

  std::uint16_t buy_id(int item) const { return static_cast<std::uint16_t>(1 + item); }
  std::uint16_t query_id(int src) const { return static_cast<std::uint16_t>(1 + m_ + src); }

 protected:
  StepResult apply_legal(const EnvState& s, const Goal& goal, const Hidden& h, const EnvAction& a) const override {
    int view = s.encoding[0], seen = s.encoding[1], status = s.encoding[2];
    if (a.id == 0) {
      view = -1;
      seen = 0;
    } else if (a.id <= m_) {
      if (matches(h, a.id - 1, goal)) status = 1;
      else if (spec_.failed_attempt_terminal) status = 2;
    } else {
      view = a.id - 1 - m_;
      seen = h[view];
    }
    return StepResult{make(view, seen, status), std::nullopt, false, false};
  }

 private:
  // Attribute value known from memory or the current view, or -1.
  int revealed(const AugmentedState& s, int src) const {
    if (s.env.encoding[0] == src) return s.env.encoding[1];
    for (std::uint16_t v = 0; v < 2; ++v)
      if (s.memory.contains(Fact{static_cast<std::uint16_t>(src), v})) return v;
    return -1;
  }

  bool matches(const Hidden& h, int item, const Goal& goal) const {
    for (int b = 0; b < q_; ++b)
      if (h[item * q_ + b] != ((goal.id >> b) & 1)) return false;
    return true;
  }

  EnvState make(int view, int seen, int status) const {
    EnvState s;
    s.encoding = {view, seen, status};
    s.id = static_cast<std::uint32_t>(((view + 1) * 2 + seen) * 3 + status);
    return s;
  }

  int m_ = 0;
  int q_ = 0;
};

// ---------------------------------------------------------------------------

using WorldFactory = std::function<std::shared_ptr<const World>(const WorldSpec&)>;

namespace detail {
inline std::map<std::string, WorldFactory>& registry() {
  static std::map<std::string, WorldFactory> r{
      {"key-corridor", [](const WorldSpec& s) { return std::make_shared<const KeyCorridor>(s); }},
      {"shop-sim", [](const WorldSpec& s) { return std::make_shared<const ShopSim>(s); }},
  };
  return r;
}
inline std::mutex& registry_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

inline void register_world(const std::string& name, WorldFactory factory) {
  std::lock_guard lock(detail::registry_mutex());
  detail::registry()[name] = std::move(factory);
}

inline std::shared_ptr<const World> make_world(const WorldSpec& spec) {
  WorldFactory f;
  {
    std::lock_guard lock(detail::registry_mutex());
    auto it = detail::registry().find(spec.name);
    if (it == detail::registry().end()) throw Error("unknown world: " + spec.name);
    f = it->second;
  }
  return f(spec);
}

class WorldInstance {
 public:
  WorldInstance(std::shared_ptr<const World> world, Goal goal, Hidden hidden, EnvState start)
      : world_(std::move(world)), goal_(std::move(goal)), hidden_(std::move(hidden)), current_(std::move(start)) {}

  const World& world() const { return *world_; }
  const std::shared_ptr<const World>& world_ptr() const { return world_; }
  const WorldSpec& spec() const { return world_->spec(); }
  const Goal& goal() const { return goal_; }
  const Hidden& hidden() const { return hidden_; }
  const EnvState& current() const { return current_; }
  int steps_used() const { return steps_used_; }

  StepResult step(const EnvAction& a) {
    StepResult r = world_->apply(current_, goal_, hidden_, a);
    current_ = r.next;
    ++steps_used_;
    return r;
  }

  // Places the episode in another state consistent with its hidden facts;
  // used by oracles that branch from the middle of an episode.
  void restore(const EnvState& s, int steps_used) {
    if (!world_->consistent(goal_, hidden_, s)) throw Error("restore: state inconsistent with hidden facts");
    current_ = s;
    steps_used_ = steps_used;
  }

 private:
  std::shared_ptr<const World> world_;
  Goal goal_;
  Hidden hidden_;
  EnvState current_;
  int steps_used_ = 0;
};

inline WorldInstance reset(std::shared_ptr<const World> world, std::uint64_t episode_seed, const Goal& goal) {
  auto support = world->hidden_support(goal);
  if (support.empty()) throw Error("goal has no hidden support");
  RngStream rng(derive_seed({world->spec().seed, episode_seed}));
  Hidden h = support[rng.below(support.size())];
  EnvState start = world->initial_state();
  return WorldInstance(std::move(world), goal, std::move(h), std::move(start));
}

inline WorldInstance reset(std::shared_ptr<const World> world, std::uint64_t episode_seed) {
  const Goal g = world->goals().front();
  return reset(std::move(world), episode_seed, g);
}

inline WorldInstance reset(const WorldSpec& spec, std::uint64_t episode_seed) {
  return reset(make_world(spec), episode_seed);
}

}  // namespace eapo::worlds
