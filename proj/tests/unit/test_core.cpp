#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace eapo;

namespace {

EnvState st(int id) { return EnvState{static_cast<std::uint32_t>(id), {id}}; }

}  // namespace

TEST(VisitationDepth, CountsPriorVisits) {
  const std::vector<EnvState> h{st(0), st(1)};
  EXPECT_EQ(visitation_depth(h, st(0)), 1);
  EXPECT_EQ(visitation_depth(std::vector<EnvState>{}, st(0)), 0);
}

TEST(VisitationDepth, MatchesIndependentRecount) {
  std::mt19937 gen(11);
  std::uniform_int_distribution<int> pick(0, 2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> seq(20);
    for (int& x : seq) x = pick(gen);
    std::vector<EnvState> history;
    int counts[3] = {0, 0, 0};
    for (int x : seq) {
      EXPECT_EQ(visitation_depth(history, st(x)), counts[x]);
      ++counts[x];
      history.push_back(st(x));
    }
  }
}

TEST(VisitationDepth, ComparesEncodingsNotIds) {
  const std::vector<EnvState> h{EnvState{5, {1, 2}}};
  EXPECT_EQ(visitation_depth(h, EnvState{5, {1, 3}}), 0);
  EXPECT_EQ(visitation_depth(h, EnvState{9, {1, 2}}), 1);
}

TEST(TrajectoryReturn, SingleTransitionIsDiscountedOnce) {
  const auto t = fixture::synthetic_trajectory({0, 1}, {2.0});
  EXPECT_DOUBLE_EQ(trajectory_return(t, 0.9), 1.8);
}

TEST(TrajectoryReturn, ZeroRewards) {
  const auto t = fixture::synthetic_trajectory({0, 1, 2, 3}, {0, 0, 0});
  EXPECT_EQ(trajectory_return(t, 0.9), 0.0);
}

TEST(TrajectoryReturn, GeometricSum) {
  const auto t = fixture::synthetic_trajectory({0, 1, 2, 3}, {1, 1, 1});
  EXPECT_DOUBLE_EQ(trajectory_return(t, 0.5), 0.875);
}

TEST(TrajectoryReturn, UnsetRewardIsAnError) {
  auto t = fixture::synthetic_trajectory({0, 1, 2}, {1, 1});
  t.transitions[1].reward.reset();
  EXPECT_THROW(trajectory_return(t, 0.9), Error);
}

TEST(RewardToGo, Examples) {
  const auto a = fixture::synthetic_trajectory({0, 1, 2, 3}, {0.3, 0.2, 1.0});
  EXPECT_DOUBLE_EQ(reward_to_go(a, 2, 0.9), 1.0);
  const auto b = fixture::synthetic_trajectory({0, 1, 2, 3}, {0, 0, 1});
  EXPECT_NEAR(reward_to_go(b, 0, 0.9), 0.81, 1e-15);
  EXPECT_THROW(reward_to_go(b, 3, 0.9), Error);
  EXPECT_THROW(reward_to_go(b, -1, 0.9), Error);
}

TEST(RewardToGo, AgreesWithReturnAndRecursion) {
  std::mt19937 gen(3);
  std::uniform_real_distribution<double> r(-1.0, 2.0);
  std::uniform_int_distribution<int> len(1, 12);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = len(gen);
    std::vector<double> totals(n);
    std::vector<int> states(n + 1);
    for (int i = 0; i < n; ++i) totals[i] = r(gen);
    for (int i = 0; i <= n; ++i) states[i] = i;
    const auto t = fixture::synthetic_trajectory(states, totals);
    const double gamma = 0.5 + 0.5 * std::uniform_real_distribution<double>(0, 1)(gen);
    // Return discounts from gamma^1, reward-to-go from gamma^0.
    EXPECT_NEAR(trajectory_return(t, gamma), gamma * reward_to_go(t, 0, gamma), 1e-12);
    for (int i = 0; i + 1 < n; ++i)
      EXPECT_NEAR(reward_to_go(t, i, gamma), totals[i] + gamma * reward_to_go(t, i + 1, gamma), 1e-12);
  }
}

TEST(MemoryState, CanonicalAndDuplicateFree) {
  const MemoryState a{Fact{1, 0}, Fact{0, 1}, Fact{1, 0}};
  const MemoryState b{Fact{0, 1}, Fact{1, 0}};
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 2u);
  AugmentedState x, y;
  x.memory = a;
  y.memory = b;
  EXPECT_EQ(encode_bytes(x), encode_bytes(y));
}

TEST(MemoryState, CapIsEnforced) {
  std::vector<Fact> many;
  for (std::uint16_t i = 0; i < 9; ++i) many.push_back(Fact{i, 0});
  EXPECT_THROW(MemoryState::from_facts(many, 8), Error);
  MemoryState m;
  for (std::uint16_t i = 0; i < 8; ++i) m = m.with(Fact{i, 1});
  EXPECT_THROW(m.with(Fact{9, 1}), Error);
  EXPECT_NO_THROW(m.with(Fact{0, 1}));
}

TEST(ExplorationCue, ExactlyOneOfTargetOrNone) {
  EXPECT_TRUE(ExplorationCue::none().is_none());
  EXPECT_FALSE(ExplorationCue::none().target().has_value());
  const auto c = ExplorationCue::probe(3);
  EXPECT_FALSE(c.is_none());
  EXPECT_EQ(*c.target(), 3);
  EXPECT_EQ(ExplorationCue::from_code(c.code()), c);
}

TEST(Encoding, ByteLayout) {
  AugmentedState s{Goal{0x0102, ""}, EnvState{0x0A0B0C0D, {}}, ExplorationCue::probe(1), MemoryState{Fact{2, 1}}};
  const std::string b = encode_bytes(s);
  const std::string expected("\x02\x01\x0D\x0C\x0B\x0A\x02\x00\x01\x02\x00\x01\x00", 13);
  EXPECT_EQ(b, expected);
}

TEST(Encoding, RoundTripsExhaustivelyOnKeyCorridor) {
  const auto w = fixture::key_corridor(3, 2, 10);
  std::set<std::string> seen;
  int count = 0;
  for (const EnvState& s : w->reachable_states())
    for (const MemoryState& m : w->consistent_memories(s))
      for (std::uint16_t c = 0; c < w->cue_count(); ++c) {
        const AugmentedState a{w->goals()[0], s, ExplorationCue::from_code(c), m};
        const std::string bytes = encode_bytes(a);
        const DecodedState d = decode_bytes(bytes);
        EXPECT_EQ(d.goal_id, a.goal.id);
        EXPECT_EQ(w->state_from_id(d.state_id), s);
        EXPECT_EQ(d.cue, a.cue);
        EXPECT_EQ(d.memory, m);
        EXPECT_TRUE(seen.insert(bytes).second);
        ++count;
      }
  EXPECT_GT(count, 100);
}

TEST(Encoding, RoundTripsOnShop) {
  const auto w = fixture::shop(2, 2, 8);
  for (const Goal& g : w->goals())
    for (const EnvState& s : w->reachable_states())
      for (const MemoryState& m : w->consistent_memories(s)) {
        const AugmentedState a{g, s, ExplorationCue::from_code(1), m};
        const DecodedState d = decode_bytes(encode_bytes(a));
        EXPECT_EQ(d.goal_id, g.id);
        EXPECT_EQ(w->state_from_id(d.state_id), s);
        EXPECT_EQ(d.memory, m);
      }
}

TEST(Encoding, StateIdsAreABijectionOverReachableStates) {
  for (const auto& w : {fixture::key_corridor(3, 2, 10), fixture::key_corridor(4, 3, 10), fixture::shop(2, 2, 8)}) {
    std::set<std::uint32_t> ids;
    for (const EnvState& s : w->reachable_states()) {
      EXPECT_TRUE(ids.insert(s.id).second);
      EXPECT_EQ(w->state_from_id(s.id), s);
      EXPECT_EQ(w->state_from_id(s.id).id, s.id);
    }
  }
}

TEST(Encoding, TruncatedBytesAreRejected) {
  AugmentedState s{Goal{1, ""}, EnvState{7, {}}, ExplorationCue::none(), MemoryState{Fact{1, 1}}};
  std::string b = encode_bytes(s);
  EXPECT_THROW(decode_bytes(b.substr(0, b.size() - 1)), Error);
  EXPECT_THROW(decode_bytes(b + "x"), Error);
}

TEST(Trajectory, RolloutsChainAndMemoryGrows) {
  const auto w = fixture::key_corridor(3, 2, 10);
  const auto p = fixture::random_policy(1.0, 5);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    RngStream rng(seed);
    const Trajectory t = optim::rollout(p, w, w->goals()[0], seed, rng);
    ASSERT_GE(t.horizon_used(), 1);
    EXPECT_LE(t.horizon_used(), w->horizon());
    std::vector<EnvState> history;
    for (int i = 0; i < t.horizon_used(); ++i) {
      const Transition& tr = t.transitions[i];
      EXPECT_EQ(tr.step, i);
      EXPECT_EQ(tr.depth, visitation_depth(history, tr.s_tilde.env));
      history.push_back(tr.s_tilde.env);
      EXPECT_TRUE(tr.a_tilde.memory.includes(tr.s_tilde.memory));
      EXPECT_EQ(tr.s_tilde_next.memory, tr.a_tilde.memory);
      if (i + 1 < t.horizon_used()) EXPECT_EQ(tr.s_tilde_next, t.transitions[i + 1].s_tilde);
    }
  }
}
