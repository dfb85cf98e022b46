#pragma once

// Exact success probabilities by enumerating every branch of the policy and
// every hidden assignment still consistent with the starting state.

#include <unordered_map>

#include "eapo/policy.hpp"
#include "eapo/worlds.hpp"

namespace eapo::worlds {

inline constexpr std::size_t kDefaultNodeBudget = 10'000'000;

struct ExactValue {
  double success = 0.0;  // probability of ending in success
  double ret = 0.0;      // expected gamma^(n-1) for success at step n
  double failure = 0.0;  // terminal failure or running out of steps
};

class ExactEvaluator {
 public:
  ExactEvaluator(const World& world, const policy::PolicyParameters& params, double gamma,
                 std::size_t node_budget = kDefaultNodeBudget)
      : world_(world), params_(params), gamma_(gamma), budget_(node_budget) {}

  // Averages uniformly over the hidden assignments consistent with the
  // state's goal, environment state and memory. `steps` is the number of
  // actions still allowed; defaults to the world horizon.
  ExactValue evaluate(const AugmentedState& from, std::optional<int> steps = std::nullopt) {
    const int k = steps.value_or(world_.horizon());
    const auto hidden = world_.posterior(from.goal, from.env, from.memory);
    if (hidden.empty()) return {};
    ExactValue sum;
    for (const Hidden& h : hidden) {
      const ExactValue v = value(h, from, k);
      sum.success += v.success;
      sum.ret += v.ret;
      sum.failure += v.failure;
    }
    sum.success /= static_cast<double>(hidden.size());
    sum.ret /= static_cast<double>(hidden.size());
    sum.failure /= static_cast<double>(hidden.size());
    return sum;
  }

  std::size_t nodes() const { return memo_.size(); }

 private:
  ExactValue value(const Hidden& h, const AugmentedState& s, int steps) {
    // A terminal start counts its outcome but earns no further return.
    if (world_.is_terminal(s.env)) {
      const bool ok = world_.is_success(s.env);
      return {ok ? 1.0 : 0.0, 0.0, ok ? 0.0 : 1.0};
    }
    if (steps <= 0) return {0.0, 0.0, 1.0};
    std::string key = encode_bytes(s);
    key.push_back(static_cast<char>(steps));
    for (int x : h) key.push_back(static_cast<char>(x));
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    if (memo_.size() >= budget_) throw Error("exact enumeration exceeded the node budget");

    ExactValue out;
    const auto legal = world_.legal_actions(s.env);
    const auto options = policy::memory_options(world_, s);
    const policy::HeadRow cue = policy::cue_row(params_, world_, s);
    for (std::size_t c = 0; c < cue.dist.prob.size(); ++c) {
      const ExplorationCue e = ExplorationCue::from_code(static_cast<std::uint16_t>(c));
      const policy::HeadRow mem = policy::memory_row(params_, cue.key, e, options.size());
      for (std::size_t m = 0; m < options.size(); ++m) {
        const policy::HeadRow act = policy::action_row(params_, world_, s, mem.key, m, legal);
        for (std::size_t a = 0; a < legal.size(); ++a) {
          const double p = cue.dist.prob[c] * mem.dist.prob[m] * act.dist.prob[a];
          if (p == 0.0) continue;
          const StepResult r = world_.apply(s.env, s.goal, h, legal[a]);
          if (r.success) {
            out.success += p;
            out.ret += p;
          } else if (r.terminal) {
            out.failure += p;
          } else {
            const ExactValue next = value(h, AugmentedState{s.goal, r.next, e, options[m]}, steps - 1);
            out.success += p * next.success;
            out.ret += p * gamma_ * next.ret;
            out.failure += p * next.failure;
          }
        }
      }
    }
    memo_.emplace(std::move(key), out);
    return out;
  }

  const World& world_;
  const policy::PolicyParameters& params_;
  double gamma_;
  std::size_t budget_;
  std::unordered_map<std::string, ExactValue> memo_;
};

inline double exact_success_probability(const World& world, const policy::PolicyParameters& params,
                                        const AugmentedState& from, std::optional<int> steps = std::nullopt,
                                        std::size_t node_budget = kDefaultNodeBudget) {
  return ExactEvaluator(world, params, 1.0, node_budget).evaluate(from, steps).success;
}

}  // namespace eapo::worlds
