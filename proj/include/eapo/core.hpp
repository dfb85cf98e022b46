#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace eapo {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Goal id reserved for the rollback instruction used during supervised
// fine-tuning. Worlds never hand it out.
inline constexpr std::uint16_t kRollbackGoalId = 0xFFFF;
// Fact source that records the previous environment state in rollback
// contexts; the fact value is the previous state's id.
inline constexpr std::uint16_t kPreviousStateSource = 0xFFFF;
inline constexpr std::size_t kDefaultMemoryCap = 8;

struct Goal {
  std::uint16_t id = 0;
  std::string descriptor;

  friend bool operator==(const Goal& a, const Goal& b) { return a.id == b.id; }
};

inline Goal rollback_goal() { return Goal{kRollbackGoalId, "undo the last action"}; }

struct EnvState {
  std::uint32_t id = 0;
  std::vector<std::int32_t> encoding;

  friend bool operator==(const EnvState& a, const EnvState& b) {
    return a.encoding == b.encoding;
  }
};

enum class ActionKind : std::uint8_t { move, inspect, pick, open, query, buy, step_back, terminate };

struct EnvAction {
  std::uint16_t id = 0;
  ActionKind kind = ActionKind::move;

  friend bool operator==(const EnvAction& a, const EnvAction& b) { return a.id == b.id; }
};

// A cue either names a probe target or says no exploration is intended.
// Code 0 is "none"; target t has code t + 1.
class ExplorationCue {
 public:
  ExplorationCue() = default;
  static ExplorationCue none() { return {}; }
  static ExplorationCue probe(std::uint16_t target) {
    ExplorationCue c;
    c.target_ = target;
    return c;
  }
  static ExplorationCue from_code(std::uint16_t code) {
    return code == 0 ? none() : probe(static_cast<std::uint16_t>(code - 1));
  }

  bool is_none() const { return !target_.has_value(); }
  const std::optional<std::uint16_t>& target() const { return target_; }
  std::uint16_t code() const { return target_ ? static_cast<std::uint16_t>(*target_ + 1) : 0; }

  friend bool operator==(const ExplorationCue&, const ExplorationCue&) = default;

 private:
  std::optional<std::uint16_t> target_;
};

struct Fact {
  std::uint16_t source = 0;
  std::uint16_t value = 0;

  friend auto operator<=>(const Fact&, const Fact&) = default;
};

// Sorted, duplicate-free fact set.
class MemoryState {
 public:
  MemoryState() = default;
  MemoryState(std::initializer_list<Fact> facts) {
    for (const Fact& f : facts) insert_in_place(f, kDefaultMemoryCap);
  }

  static MemoryState from_facts(std::vector<Fact> facts, std::size_t cap = kDefaultMemoryCap) {
    std::sort(facts.begin(), facts.end());
    facts.erase(std::unique(facts.begin(), facts.end()), facts.end());
    if (facts.size() > cap) throw Error("memory exceeds cap");
    MemoryState m;
    m.facts_ = std::move(facts);
    return m;
  }

  const std::vector<Fact>& facts() const { return facts_; }
  std::size_t size() const { return facts_.size(); }
  bool empty() const { return facts_.empty(); }

  bool contains(const Fact& f) const { return std::binary_search(facts_.begin(), facts_.end(), f); }

  bool includes(const MemoryState& other) const {
    return std::includes(facts_.begin(), facts_.end(), other.facts_.begin(), other.facts_.end());
  }

  MemoryState with(const Fact& f, std::size_t cap = kDefaultMemoryCap) const {
    MemoryState m = *this;
    m.insert_in_place(f, cap);
    return m;
  }

  friend bool operator==(const MemoryState&, const MemoryState&) = default;
  friend auto operator<=>(const MemoryState& a, const MemoryState& b) { return a.facts_ <=> b.facts_; }

 private:
  void insert_in_place(const Fact& f, std::size_t cap) {
    auto it = std::lower_bound(facts_.begin(), facts_.end(), f);
    if (it != facts_.end() && *it == f) return;
    if (facts_.size() >= cap) throw Error("memory exceeds cap");
    facts_.insert(it, f);
  }

  std::vector<Fact> facts_;
};

struct AugmentedState {
  Goal goal;
  EnvState env;
  ExplorationCue cue;
  MemoryState memory;

  friend bool operator==(const AugmentedState& a, const AugmentedState& b) {
    return a.goal == b.goal && a.env == b.env && a.cue == b.cue && a.memory == b.memory;
  }
};

struct AugmentedAction {
  ExplorationCue cue;
  MemoryState memory;
  EnvAction act;

  friend bool operator==(const AugmentedAction& a, const AugmentedAction& b) {
    return a.cue == b.cue && a.memory == b.memory && a.act == b.act;
  }
};

struct RewardBreakdown {
  double task = 0.0;
  int format = 0;
  double explore = 0.0;
  double total = 0.0;
};

struct Transition {
  AugmentedState s_tilde;
  AugmentedAction a_tilde;
  AugmentedState s_tilde_next;
  int step = 0;
  int depth = 0;
  std::optional<RewardBreakdown> reward;
  std::string wire;  // serialized output document for this step
};

struct Trajectory {
  std::vector<Transition> transitions;
  bool success = false;
  std::uint64_t episode_seed = 0;

  int horizon_used() const { return static_cast<int>(transitions.size()); }

  // Environment states in visiting order, including the state reached by the
  // final transition.
  std::vector<EnvState> env_states() const {
    std::vector<EnvState> out;
    out.reserve(transitions.size() + 1);
    for (const auto& t : transitions) out.push_back(t.s_tilde.env);
    if (!transitions.empty()) out.push_back(transitions.back().s_tilde_next.env);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Canonical byte encoding: goal id (u16), state id (u32), cue code (u16),
// fact count (u8), then each fact as source (u16) and value (u16). All
// integers little-endian.

namespace detail {
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint32_t get_uint(std::string_view in, std::size_t& pos, int bytes) {
  if (pos + bytes > in.size()) throw Error("truncated state encoding");
  std::uint32_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += bytes;
  return v;
}
}  // namespace detail

inline std::string encode_bytes(const AugmentedState& s) {
  std::string out;
  out.reserve(9 + 4 * s.memory.size());
  detail::put_u16(out, s.goal.id);
  detail::put_u32(out, s.env.id);
  detail::put_u16(out, s.cue.code());
  out.push_back(static_cast<char>(s.memory.size()));
  for (const Fact& f : s.memory.facts()) {
    detail::put_u16(out, f.source);
    detail::put_u16(out, f.value);
  }
  return out;
}

// Ids recovered from an encoding. Turning the state id back into a full
// EnvState needs the world.
struct DecodedState {
  std::uint16_t goal_id = 0;
  std::uint32_t state_id = 0;
  ExplorationCue cue;
  MemoryState memory;
};

inline DecodedState decode_bytes(std::string_view bytes) {
  std::size_t pos = 0;
  DecodedState d;
  d.goal_id = static_cast<std::uint16_t>(detail::get_uint(bytes, pos, 2));
  d.state_id = detail::get_uint(bytes, pos, 4);
  d.cue = ExplorationCue::from_code(static_cast<std::uint16_t>(detail::get_uint(bytes, pos, 2)));
  const auto n = detail::get_uint(bytes, pos, 1);
  std::vector<Fact> facts;
  for (std::uint32_t i = 0; i < n; ++i) {
    Fact f;
    f.source = static_cast<std::uint16_t>(detail::get_uint(bytes, pos, 2));
    f.value = static_cast<std::uint16_t>(detail::get_uint(bytes, pos, 2));
    facts.push_back(f);
  }
  if (pos != bytes.size()) throw Error("trailing bytes in state encoding");
  d.memory = MemoryState::from_facts(std::move(facts), 255);
  return d;
}

// ---------------------------------------------------------------------------

inline int visitation_depth(std::span<const EnvState> history, const EnvState& current) {
  return static_cast<int>(std::count(history.begin(), history.end(), current));
}

inline double total_of(const Transition& t) {
  if (!t.reward) throw Error("transition reward is unset");
  return t.reward->total;
}

// Discounting starts at gamma^1 for the first transition.
inline double trajectory_return(const Trajectory& traj, double gamma) {
  double sum = 0.0;
  double discount = gamma;
  for (const auto& t : traj.transitions) {
    sum += discount * total_of(t);
    discount *= gamma;
  }
  return sum;
}

inline double reward_to_go(const Trajectory& traj, int t, double gamma) {
  if (t < 0 || t >= traj.horizon_used()) throw Error("reward_to_go: step index out of range");
  double sum = 0.0;
  for (int i = traj.horizon_used() - 1; i >= t; --i) sum = total_of(traj.transitions[i]) + gamma * sum;
  return sum;
}

}  // namespace eapo
