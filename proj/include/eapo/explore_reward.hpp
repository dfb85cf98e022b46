#pragma once

#include <map>
#include <memory>
#include <span>

#include "eapo/core.hpp"
#include "eapo/exact.hpp"
#include "eapo/policy.hpp"
#include "eapo/rng.hpp"
#include "eapo/worlds.hpp"

namespace eapo::reward {

struct RewardWeights {
  double alpha1 = 0.5;  // format
  double alpha2 = 1.0;  // explore
  double gamma = 0.9;
  double beta = 1.0;
  double q_lr = 1e-4;
  int q_rollouts = 8;  // rollouts per Q estimate

  void validate() const {
    for (double v : {alpha1, alpha2, gamma, beta, q_lr})
      if (!std::isfinite(v)) throw Error("reward weights must be finite");
    if (alpha1 < 0 || alpha2 < 0 || beta < 0) throw Error("reward weights must be non-negative");
    if (gamma <= 0 || gamma > 1) throw Error("gamma must lie in (0, 1]");
    if (q_rollouts < 1) throw Error("q_rollouts must be at least 1");
  }
};

struct EmPair {
  ExplorationCue cue;
  MemoryState memory;

  friend bool operator==(const EmPair&, const EmPair&) = default;
};

// Admissible (cue, memory) pairs for every reachable state.
class RewardSupport {
 public:
  RewardSupport(const worlds::World& w, std::size_t cap) {
    for (const EnvState& s : w.reachable_states()) {
      Entry e;
      for (const MemoryState& m : w.consistent_memories(s))
        for (std::uint16_t c = 0; c < w.cue_count(); ++c) {
          e.index.emplace(key(ExplorationCue::from_code(c), m), e.pairs.size());
          e.pairs.push_back(EmPair{ExplorationCue::from_code(c), m});
        }
      if (e.pairs.size() > cap) throw Error("reward-model support exceeds its cap at " + w.describe(s));
      entries_.emplace(s.id, std::move(e));
    }
  }

  const std::vector<EmPair>& pairs(std::uint32_t state_id) const { return entry(state_id).pairs; }

  std::optional<std::size_t> index_of(std::uint32_t state_id, const ExplorationCue& e, const MemoryState& m) const {
    const Entry& en = entry(state_id);
    auto it = en.index.find(key(e, m));
    if (it == en.index.end()) return std::nullopt;
    return it->second;
  }

  std::vector<std::uint32_t> states() const {
    std::vector<std::uint32_t> out;
    for (const auto& [id, e] : entries_) out.push_back(id);
    return out;
  }

 private:
  struct Entry {
    std::vector<EmPair> pairs;
    std::unordered_map<std::string, std::size_t> index;
  };

  static std::string key(const ExplorationCue& e, const MemoryState& m) {
    AugmentedState s;
    s.cue = e;
    s.memory = m;
    return encode_bytes(s);
  }

  const Entry& entry(std::uint32_t id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw Error("state not in the reward-model support");
    return it->second;
  }

  std::map<std::uint32_t, Entry> entries_;
};

inline constexpr std::size_t kDefaultSupportCap = 4096;

// Categorical q(e, m | s) per environment state. Copies share the support and
// the frozen prior; only `rows` is ever written.
class RewardModelTable {
 public:
  using Rows = std::map<std::uint32_t, std::vector<double>>;

  RewardModelTable() = default;
  explicit RewardModelTable(const worlds::World& w, std::size_t support_cap = kDefaultSupportCap)
      : support_(std::make_shared<const RewardSupport>(w, support_cap)), prior_(std::make_shared<const Rows>()) {}

  const RewardSupport& support() const { return *support_; }
  const std::vector<EmPair>& pairs(const EnvState& s) const { return support_->pairs(s.id); }

  std::vector<double> logits(std::uint32_t state_id) const { return row(rows, state_id); }
  std::vector<double> prior_logits(std::uint32_t state_id) const { return row(*prior_, state_id); }

  policy::Distribution density(std::uint32_t state_id) const { return policy::softmax(logits(state_id)); }
  policy::Distribution prior(std::uint32_t state_id) const { return policy::softmax(prior_logits(state_id)); }

  // Replaces the frozen prior with the current rows; only meaningful right
  // after construction.
  void freeze_prior() { prior_ = std::make_shared<const Rows>(rows); }

  Rows rows;

 private:
  std::vector<double> row(const Rows& r, std::uint32_t id) const {
    const std::size_t n = support_->pairs(id).size();
    if (auto it = r.find(id); it != r.end()) {
      if (it->second.size() != n) throw Error("reward-model row has the wrong width");
      return it->second;
    }
    return std::vector<double>(n, 0.0);
  }

  std::shared_ptr<const RewardSupport> support_;
  std::shared_ptr<const Rows> prior_;
};

inline double q_density(const RewardModelTable& model, const EnvState& s, const ExplorationCue& e,
                        const MemoryState& m) {
  auto idx = model.support().index_of(s.id, e, m);
  if (!idx) throw Error("(cue, memory) pair is not admissible for this state");
  return model.density(s.id).prob[*idx];
}

inline double explore_value(double q1, double q2, double gamma) { return std::max(q1, gamma * gamma * q2); }

inline double explore_reward(const RewardModelTable& model, const worlds::World& w, const Transition& t,
                             double gamma) {
  const EnvState& s = t.s_tilde.env;
  const ExplorationCue& e = t.s_tilde.cue;
  const MemoryState& m = t.s_tilde.memory;
  const double q1 = q_density(model, s, e, m);
  double q2 = q1;
  if (auto f = w.observation_fact(t.s_tilde_next.env); f && !m.contains(*f) && m.size() < w.memory_cap())
    q2 = q_density(model, s, e, m.with(*f, w.memory_cap()));
  return explore_value(q1, q2, gamma);
}

inline RewardBreakdown total_reward(const RewardWeights& wt, double task, int format, double explore) {
  return RewardBreakdown{task, format, explore, task + wt.alpha1 * format + wt.alpha2 * explore};
}

// ---------------------------------------------------------------------------
// Q(s, e, m): discounted task return of the policy started from the
// augmented state, hidden facts drawn from the posterior.

namespace detail {
// Runs the policy from `s` for at most `steps` actions; returns the number of
// steps to success, or 0 on failure.
inline int run_policy(const policy::PolicyParameters& p, worlds::WorldInstance& inst, AugmentedState s, int steps,
                      RngStream& rng) {
  for (int n = 1; n <= steps; ++n) {
    if (inst.world().is_terminal(s.env)) return 0;
    const auto sample = policy::sample_augmented_action(p, inst.world(), s, rng);
    const auto r = inst.step(sample.action.act);
    if (r.success) return n;
    if (r.terminal) return 0;
    s = AugmentedState{s.goal, r.next, sample.action.cue, sample.action.memory};
  }
  return 0;
}

inline double discounted(int n, double gamma) { return n > 0 ? std::pow(gamma, n - 1) : 0.0; }
}  // namespace detail

inline double estimate_q_value(const policy::PolicyParameters& p, const std::shared_ptr<const worlds::World>& w,
                               const Goal& goal, const EnvState& s, const ExplorationCue& e, const MemoryState& m,
                               int rollouts, double gamma, RngStream& rng) {
  if (rollouts < 1) throw Error("estimate_q_value needs at least one rollout");
  if (w->is_terminal(s)) return 0.0;
  const auto hidden = w->posterior(goal, s, m);
  if (hidden.empty()) return 0.0;
  double sum = 0.0;
  for (int k = 0; k < rollouts; ++k) {
    worlds::WorldInstance inst(w, goal, hidden[rng.below(hidden.size())], s);
    sum += detail::discounted(detail::run_policy(p, inst, AugmentedState{goal, s, e, m}, w->horizon(), rng), gamma);
  }
  const double q = sum / rollouts;
  if (!std::isfinite(q)) throw Error("non-finite Q estimate");
  return q;
}

struct TrainOptions {
  double kl_strength = 1.0;
  int steps = 1;
  int samples_per_state = 4;  // (e, m) draws per state per step
};

// Ascends beta * E_q[Q] - kl_strength * KL(q || prior) on each state's row.
// Returns the per-step estimate of the objective averaged over states.
inline std::vector<double> train_reward_model(RewardModelTable& model, const policy::PolicyParameters& p,
                                              const std::shared_ptr<const worlds::World>& w,
                                              std::span<const std::pair<Goal, EnvState>> states,
                                              const RewardWeights& wt, const TrainOptions& opt, RngStream& rng) {
  std::vector<double> trace;
  if (states.empty()) return trace;
  struct Draw {
    std::size_t state;
    std::size_t pair;
    double q;
  };
  for (int step = 0; step < opt.steps; ++step) {
    std::vector<Draw> draws;
    std::vector<policy::Distribution> dists;
    for (std::size_t i = 0; i < states.size(); ++i) {
      const auto& [goal, s] = states[i];
      dists.push_back(model.density(s.id));
      const auto& pairs = model.pairs(s);
      for (int k = 0; k < opt.samples_per_state; ++k) {
        const std::size_t j = rng.categorical(dists.back().prob);
        draws.push_back({i, j, estimate_q_value(p, w, goal, s, pairs[j].cue, pairs[j].memory, wt.q_rollouts,
                                                wt.gamma, rng)});
      }
    }
    double baseline = 0.0;
    for (const Draw& d : draws) baseline += d.q;
    baseline /= static_cast<double>(draws.size());

    std::map<std::uint32_t, std::vector<double>> grad;
    std::map<std::uint32_t, double> weight;
    double objective = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) {
      const std::uint32_t id = states[i].second.id;
      const auto prior = model.prior(id);
      const double kl = policy::categorical_kl(dists[i], prior);
      double mean_q = 0.0;
      auto& g = grad[id];
      if (g.empty()) g.assign(dists[i].prob.size(), 0.0);
      weight[id] += 1.0;
      for (std::size_t k = 0; k < g.size(); ++k)
        g[k] -= opt.kl_strength * dists[i].prob[k] * (dists[i].log_prob[k] - prior.log_prob[k] - kl);
      for (const Draw& d : draws) {
        if (d.state != i) continue;
        mean_q += d.q / opt.samples_per_state;
        const double coef = wt.beta * (d.q - baseline) / opt.samples_per_state;
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += coef * ((k == d.pair ? 1.0 : 0.0) - dists[i].prob[k]);
      }
      objective += (wt.beta * mean_q - opt.kl_strength * kl) / static_cast<double>(states.size());
    }
    for (auto& [id, g] : grad) {
      auto it = model.rows.find(id);
      if (it == model.rows.end()) it = model.rows.emplace(id, model.logits(id)).first;
      for (std::size_t k = 0; k < g.size(); ++k) it->second[k] += wt.q_lr * g[k] / weight[id];
    }
    trace.push_back(objective);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Rollout-based exploratory reward: direct continuation versus stepping back
// and continuing with memory extended by the observed state.

struct OnlineReward {
  double r1 = 0.0;
  std::optional<double> r2;
  double value = 0.0;
};

inline OnlineReward online_exploratory_reward(const policy::PolicyParameters& p,
                                              const std::shared_ptr<const worlds::World>& w, const Goal& goal,
                                              const worlds::Hidden& hidden, const Transition& t, double gamma,
                                              int repetitions, RngStream& rng) {
  if (repetitions < 1) throw Error("online_exploratory_reward needs at least one repetition");
  const EnvState& s = t.s_tilde.env;
  const int budget = w->horizon() - t.step;
  const auto rollback = w->inverse_action(s, t.s_tilde_next.env);
  const bool can_refine = rollback && !w->is_terminal(t.s_tilde_next.env) && !(t.s_tilde_next.env == s) && budget >= 2;
  MemoryState refined_memory = t.s_tilde.memory;
  if (auto f = w->observation_fact(t.s_tilde_next.env); f && refined_memory.size() < w->memory_cap())
    refined_memory = refined_memory.with(*f, w->memory_cap());

  OnlineReward out;
  double r2_sum = 0.0;
  for (int k = 0; k < repetitions; ++k) {
    worlds::WorldInstance direct(w, goal, hidden, s);
    const auto first = direct.step(t.a_tilde.act);
    if (first.success) {
      out.r1 += 1.0;
    } else if (!first.terminal) {
      const int n = detail::run_policy(p, direct, t.s_tilde_next, budget - 1, rng);
      out.r1 += detail::discounted(n, gamma) * (n > 0 ? gamma : 0.0);
    }
    if (can_refine) {
      worlds::WorldInstance refined(w, goal, hidden, s);
      refined.step(t.a_tilde.act);
      refined.step(*rollback);
      const int n = detail::run_policy(p, refined, AugmentedState{goal, s, t.s_tilde.cue, refined_memory}, budget - 2, rng);
      r2_sum += n > 0 ? std::pow(gamma, n + 1) : 0.0;
    }
  }
  out.r1 /= repetitions;
  if (can_refine) out.r2 = r2_sum / repetitions;
  out.value = std::max(out.r1, out.r2.value_or(out.r1));
  return out;
}

// ---------------------------------------------------------------------------
// Variational bound on log P(success | s), with the model prior playing the
// role of the latent marginal.

struct ElboResult {
  double lower = 0.0;
  double exact = 0.0;
  double kl = 0.0;
};

inline std::vector<double> success_given_pairs(const policy::PolicyParameters& p, const RewardModelTable& model,
                                               const worlds::World& w, const Goal& goal, const EnvState& s,
                                               std::optional<int> steps = std::nullopt) {
  worlds::ExactEvaluator eval(w, p, 1.0);
  std::vector<double> out;
  for (const EmPair& pr : model.pairs(s)) out.push_back(eval.evaluate(AugmentedState{goal, s, pr.cue, pr.memory}, steps).success);
  return out;
}

inline ElboResult elbo_gap(const policy::PolicyParameters& p, const RewardModelTable& model, const worlds::World& w,
                           const Goal& goal, const EnvState& s, std::optional<int> steps = std::nullopt) {
  const auto succ = success_given_pairs(p, model, w, goal, s, steps);
  const auto q = model.density(s.id);
  const auto prior = model.prior(s.id);
  ElboResult r;
  r.kl = policy::categorical_kl(q, prior);
  double expected = 0.0, marginal = 0.0;
  for (std::size_t k = 0; k < succ.size(); ++k) {
    marginal += prior.prob[k] * succ[k];
    if (q.prob[k] > 0.0) expected += q.prob[k] * (succ[k] > 0.0 ? std::log(succ[k]) : -HUGE_VAL);
  }
  r.lower = expected - r.kl;
  r.exact = marginal > 0.0 ? std::log(marginal) : -HUGE_VAL;
  return r;
}

// p(e, m | s, success) by exact enumeration.
inline std::vector<double> exact_success_posterior(const policy::PolicyParameters& p, const RewardModelTable& model,
                                                   const worlds::World& w, const Goal& goal, const EnvState& s) {
  auto post = success_given_pairs(p, model, w, goal, s);
  const auto prior = model.prior(s.id);
  double z = 0.0;
  for (std::size_t k = 0; k < post.size(); ++k) z += post[k] *= prior.prob[k];
  if (z > 0.0)
    for (double& x : post) x /= z;
  return post;
}

}  // namespace eapo::reward
