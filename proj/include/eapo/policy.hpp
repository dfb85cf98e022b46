#pragma once

#include <array>
#include <limits>
#include <memory>
#include <span>
#include <unordered_map>

#include "eapo/core.hpp"
#include "eapo/rng.hpp"
#include "eapo/worlds.hpp"

namespace eapo::policy {

// Logit rows keyed by the canonical bytes of their conditioning context.
using Table = std::unordered_map<std::string, std::vector<double>>;

enum class Head : std::uint8_t { cue = 0, memory = 1, action = 2 };

struct PolicyParameters {
  Table cue_head;
  Table memory_head;
  Table action_head;
  // Weight of the world's reactive preference added to every action row.
  // Zero gives the plain uniform start.
  double base_prior = 0.0;
  // Rows not yet stored read as init_scale * N(0,1) noise seeded by the row
  // key; zero gives all-zero rows.
  double init_scale = 0.0;
  std::uint64_t init_seed = 0;
  std::uint64_t run_seed = 0;

  Table& table(Head h) {
    return h == Head::cue ? cue_head : h == Head::memory ? memory_head : action_head;
  }
  const Table& table(Head h) const {
    return h == Head::cue ? cue_head : h == Head::memory ? memory_head : action_head;
  }
};

enum class Role { old, reference };

struct PolicySnapshot {
  std::shared_ptr<const PolicyParameters> params;
  Role role = Role::old;

  const PolicyParameters& operator*() const { return *params; }
  const PolicyParameters* operator->() const { return params.get(); }
};

inline PolicySnapshot snapshot(const PolicyParameters& p, Role role) {
  return PolicySnapshot{std::make_shared<const PolicyParameters>(p), role};
}

// ---------------------------------------------------------------------------
// Row keys and options.

inline std::string memory_key(const std::string& state_key, const ExplorationCue& cue) {
  std::string k = state_key;
  detail::put_u16(k, cue.code());
  return k;
}

inline std::string action_key(const std::string& mem_key, std::size_t memory_choice) {
  std::string k = mem_key;
  k.push_back(static_cast<char>(memory_choice));
  return k;
}

// Keep the incoming memory, or insert the fact revealed by the current state
// when there is a new one.
inline std::vector<MemoryState> memory_options(const worlds::World& w, const AugmentedState& s) {
  std::vector<MemoryState> out{s.memory};
  if (auto f = w.observation_fact(s.env); f && !s.memory.contains(*f) && s.memory.size() < w.memory_cap())
    out.push_back(s.memory.with(*f, w.memory_cap()));
  return out;
}

inline std::vector<double> initial_row(const PolicyParameters& p, Head head, const std::string& key, std::size_t n) {
  std::vector<double> row(n, 0.0);
  if (p.init_scale != 0.0) {
    RngStream rng(derive_seed({p.init_seed, static_cast<std::uint64_t>(head), hash_bytes(key)}));
    for (double& x : row) x = p.init_scale * rng.normal();
  }
  return row;
}

inline std::vector<double> stored_row(const PolicyParameters& p, Head head, const std::string& key, std::size_t n) {
  const Table& t = p.table(head);
  if (auto it = t.find(key); it != t.end()) {
    if (it->second.size() != n) throw Error("policy row has the wrong width");
    return it->second;
  }
  return initial_row(p, head, key, n);
}

struct Distribution {
  std::vector<double> prob;
  std::vector<double> log_prob;
};

inline Distribution softmax(const std::vector<double>& logits) {
  Distribution d;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double log_z = mx + std::log(z);
  d.log_prob.resize(logits.size());
  d.prob.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    d.log_prob[i] = logits[i] - log_z;
    d.prob[i] = std::exp(d.log_prob[i]);
  }
  return d;
}

// One decision point: a head's row key, the effective logits (stored row plus
// any fixed prior) and the resulting distribution.
struct HeadRow {
  Head head = Head::cue;
  std::string key;
  std::vector<double> logits;
  Distribution dist;
};

inline HeadRow cue_row(const PolicyParameters& p, const worlds::World& w, const AugmentedState& s) {
  HeadRow r{Head::cue, encode_bytes(s), {}, {}};
  r.logits = stored_row(p, Head::cue, r.key, w.cue_count());
  r.dist = softmax(r.logits);
  return r;
}

inline HeadRow memory_row(const PolicyParameters& p, const std::string& state_key, const ExplorationCue& cue,
                          std::size_t n_options) {
  HeadRow r{Head::memory, memory_key(state_key, cue), {}, {}};
  r.logits = stored_row(p, Head::memory, r.key, n_options);
  r.dist = softmax(r.logits);
  return r;
}

inline HeadRow action_row(const PolicyParameters& p, const worlds::World& w, const AugmentedState& s,
                          const std::string& mem_key, std::size_t memory_choice,
                          const std::vector<EnvAction>& legal) {
  HeadRow r{Head::action, action_key(mem_key, memory_choice), {}, {}};
  r.logits = stored_row(p, Head::action, r.key, legal.size());
  if (p.base_prior != 0.0)
    for (std::size_t i = 0; i < legal.size(); ++i) r.logits[i] += p.base_prior * w.reactive_preference(s, legal[i]);
  r.dist = softmax(r.logits);
  return r;
}

// The three rows an augmented action passes through, with the chosen index in
// each.
struct Decision {
  std::array<HeadRow, 3> rows;
  std::array<std::size_t, 3> chosen{};

  std::array<double, 3> log_probs() const {
    return {rows[0].dist.log_prob[chosen[0]], rows[1].dist.log_prob[chosen[1]], rows[2].dist.log_prob[chosen[2]]};
  }
};

inline Decision decide(const PolicyParameters& p, const worlds::World& w, const AugmentedState& s,
                       const AugmentedAction& a) {
  Decision d;
  d.rows[0] = cue_row(p, w, s);
  if (a.cue.code() >= w.cue_count()) throw Error("cue outside the world's cue set");
  d.chosen[0] = a.cue.code();

  const auto options = memory_options(w, s);
  auto mit = std::find(options.begin(), options.end(), a.memory);
  if (mit == options.end()) throw Error("memory is not an admissible update of the incoming memory");
  d.chosen[1] = static_cast<std::size_t>(mit - options.begin());
  d.rows[1] = memory_row(p, d.rows[0].key, a.cue, options.size());

  const auto legal = w.legal_actions(s.env);
  auto ait = std::find(legal.begin(), legal.end(), a.act);
  if (ait == legal.end()) throw Error("action is not legal in " + w.describe(s.env));
  d.chosen[2] = static_cast<std::size_t>(ait - legal.begin());
  d.rows[2] = action_row(p, w, s, d.rows[1].key, d.chosen[1], legal);
  return d;
}

inline std::array<double, 3> log_probs(const PolicyParameters& p, const worlds::World& w, const AugmentedState& s,
                                       const AugmentedAction& a) {
  return decide(p, w, s, a).log_probs();
}

struct Sample {
  AugmentedAction action;
  std::array<double, 3> log_probs{};
};

inline Sample sample_augmented_action(const PolicyParameters& p, const worlds::World& w, const AugmentedState& s,
                                      RngStream& rng) {
  const auto legal = w.legal_actions(s.env);
  if (legal.empty()) throw Error("no legal action in " + w.describe(s.env));
  Sample out;
  const HeadRow cue = cue_row(p, w, s);
  const std::size_t c = rng.categorical(cue.dist.prob);
  out.action.cue = ExplorationCue::from_code(static_cast<std::uint16_t>(c));

  const auto options = memory_options(w, s);
  const HeadRow mem = memory_row(p, cue.key, out.action.cue, options.size());
  const std::size_t m = rng.categorical(mem.dist.prob);
  out.action.memory = options[m];

  const HeadRow act = action_row(p, w, s, mem.key, m, legal);
  const std::size_t a = rng.categorical(act.dist.prob);
  out.action.act = legal[a];
  out.log_probs = {cue.dist.log_prob[c], mem.dist.log_prob[m], act.dist.log_prob[a]};
  return out;
}

inline AugmentedAction greedy_augmented_action(const PolicyParameters& p, const worlds::World& w,
                                               const AugmentedState& s) {
  auto argmax = [](const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  };
  const auto legal = w.legal_actions(s.env);
  if (legal.empty()) throw Error("no legal action in " + w.describe(s.env));
  AugmentedAction out;
  const HeadRow cue = cue_row(p, w, s);
  out.cue = ExplorationCue::from_code(static_cast<std::uint16_t>(argmax(cue.logits)));
  const auto options = memory_options(w, s);
  const HeadRow mem = memory_row(p, cue.key, out.cue, options.size());
  const std::size_t m = argmax(mem.logits);
  out.memory = options[m];
  out.act = legal[argmax(action_row(p, w, s, mem.key, m, legal).logits)];
  return out;
}

inline std::array<double, 3> token_importance_weights(const PolicyParameters& p, const PolicySnapshot& old,
                                                      const worlds::World& w, const AugmentedState& s,
                                                      const AugmentedAction& a) {
  const auto lp = log_probs(p, w, s, a);
  const auto lp_old = log_probs(*old, w, s, a);
  std::array<double, 3> out{};
  for (int j = 0; j < 3; ++j) {
    if (!std::isfinite(lp_old[j])) throw Error("action has zero probability under the old policy");
    out[j] = std::exp(lp[j] - lp_old[j]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clipped surrogate with KL penalty.

struct GradientTable {
  Table cue_head;
  Table memory_head;
  Table action_head;

  Table& table(Head h) {
    return h == Head::cue ? cue_head : h == Head::memory ? memory_head : action_head;
  }
  const Table& table(Head h) const {
    return h == Head::cue ? cue_head : h == Head::memory ? memory_head : action_head;
  }
  std::size_t rows() const { return cue_head.size() + memory_head.size() + action_head.size(); }
};

struct BatchItem {
  AugmentedState s;
  AugmentedAction a;
  std::array<double, 3> advantage{};
  std::shared_ptr<const PolicyParameters> old;
};

struct SurrogateResult {
  GradientTable gradient;
  double objective = 0.0;  // surrogate minus the KL penalty
  double surrogate = 0.0;
  double kl = 0.0;
};

inline double categorical_kl(const Distribution& p, const Distribution& q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.prob.size(); ++i) kl += p.prob[i] * (p.log_prob[i] - q.log_prob[i]);
  return kl;
}

namespace detail {
inline std::vector<double>& grad_row(GradientTable& g, const HeadRow& r) {
  auto& row = g.table(r.head)[r.key];
  if (row.empty()) row.assign(r.logits.size(), 0.0);
  return row;
}
}  // namespace detail

// Objective per batch: mean over items of the token-mean clipped term, minus
// kl_lambda times the mean over items of the token-mean KL of each visited
// row against the reference policy.
inline SurrogateResult policy_gradient(const PolicyParameters& p, const worlds::World& w,
                                       std::span<const BatchItem> batch, double clip_eps, double kl_lambda,
                                       const PolicySnapshot& ref, bool with_gradient = true) {
  if (batch.empty()) throw Error("policy_gradient: empty batch");
  SurrogateResult out;
  const double scale = 1.0 / (3.0 * static_cast<double>(batch.size()));
  for (const BatchItem& item : batch) {
    for (double adv : item.advantage)
      if (!std::isfinite(adv)) throw Error("policy_gradient: non-finite advantage");
    const Decision cur = decide(p, w, item.s, item.a);
    const auto lp_old = log_probs(*item.old, w, item.s, item.a);
    const Decision refd = decide(*ref, w, item.s, item.a);
    for (int j = 0; j < 3; ++j) {
      const HeadRow& row = cur.rows[j];
      const std::size_t k = cur.chosen[j];
      const double adv = item.advantage[j];
      const double ratio = std::exp(row.dist.log_prob[k] - lp_old[j]);
      const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
      const double unclipped_term = ratio * adv;
      const double clipped_term = clipped * adv;
      out.surrogate += scale * std::min(unclipped_term, clipped_term);
      const bool active = unclipped_term <= clipped_term;

      const Distribution& rho = refd.rows[j].dist;
      const double kl = categorical_kl(row.dist, rho);
      out.kl += scale * kl;
      if (!with_gradient) continue;

      auto& g = detail::grad_row(out.gradient, row);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double pi = row.dist.prob[i];
        double d = -kl_lambda * scale * pi * (row.dist.log_prob[i] - rho.log_prob[i] - kl);
        if (active && adv != 0.0) d += scale * adv * ratio * ((i == k ? 1.0 : 0.0) - pi);
        g[i] += d;
      }
    }
  }
  out.objective = out.surrogate - kl_lambda * out.kl;
  return out;
}

// Gradient ascent on stored rows; rows missing from the table start from
// their initial value.
inline void apply_gradient(PolicyParameters& p, const GradientTable& g, double lr) {
  for (Head h : {Head::cue, Head::memory, Head::action}) {
    Table& t = p.table(h);
    for (const auto& [key, grad] : g.table(h)) {
      auto it = t.find(key);
      if (it == t.end()) it = t.emplace(key, initial_row(p, h, key, grad.size())).first;
      for (std::size_t i = 0; i < grad.size(); ++i) it->second[i] += lr * grad[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Rollback fine-tuning.

struct RollbackExample {
  EnvState s_now;
  EnvState s_prev;
  EnvAction a;
};

inline AugmentedState rollback_context(const EnvState& s_now, const EnvState& s_prev) {
  if (s_prev.id > 0xFFFF) throw Error("state id too large for a rollback fact");
  AugmentedState s;
  s.goal = rollback_goal();
  s.env = s_now;
  s.memory = MemoryState{Fact{kPreviousStateSource, static_cast<std::uint16_t>(s_prev.id)}};
  return s;
}

// Every one-step pair (s_prev -> s_now, s_prev != s_now) whose inverse action
// restores s_prev under every hidden assignment consistent with both states.
inline std::vector<RollbackExample> build_rollback_dataset(const worlds::World& w) {
  std::vector<RollbackExample> out;
  std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
  for (const EnvState& prev : w.reachable_states()) {
    for (const Goal& g : w.goals()) {
      for (const worlds::Hidden& h : w.hidden_support(g)) {
        if (!w.consistent(g, h, prev)) continue;
        for (const EnvAction& a : w.legal_actions(prev)) {
          const EnvState now = w.apply(prev, g, h, a).next;
          if (now == prev || !seen.insert({prev.id, now.id}).second) continue;
          auto inv = w.inverse_action(prev, now);
          if (!inv) continue;
          bool admitted = true;
          for (const Goal& g2 : w.goals())
            for (const worlds::Hidden& h2 : w.hidden_support(g2))
              if (w.consistent(g2, h2, prev) && w.consistent(g2, h2, now) &&
                  !(w.is_legal(now, *inv) && w.apply(now, g2, h2, *inv).next == prev))
                admitted = false;
          if (admitted) out.push_back(RollbackExample{now, prev, *inv});
        }
      }
    }
  }
  return out;
}

// Action-head row used for rollback: cue none, memory kept.
inline HeadRow rollback_row(const PolicyParameters& p, const worlds::World& w, const RollbackExample& ex,
                            const std::vector<EnvAction>& legal) {
  const AugmentedState ctx = rollback_context(ex.s_now, ex.s_prev);
  return action_row(p, w, ctx, memory_key(encode_bytes(ctx), ExplorationCue::none()), 0, legal);
}

// One gradient step on the mean negative log-likelihood; returns the loss
// before the step.
inline double sft_rollback_update(PolicyParameters& p, const worlds::World& w,
                                  std::span<const RollbackExample> dataset, double lr) {
  if (dataset.empty()) throw Error("sft_rollback_update: empty dataset");
  GradientTable g;
  double loss = 0.0;
  const double scale = 1.0 / static_cast<double>(dataset.size());
  for (const RollbackExample& ex : dataset) {
    const auto legal = w.legal_actions(ex.s_now);
    auto it = std::find(legal.begin(), legal.end(), ex.a);
    if (it == legal.end()) throw Error("rollback action is not legal");
    const std::size_t k = static_cast<std::size_t>(it - legal.begin());
    const HeadRow row = rollback_row(p, w, ex, legal);
    loss -= scale * row.dist.log_prob[k];
    auto& gr = detail::grad_row(g, row);
    for (std::size_t i = 0; i < gr.size(); ++i) gr[i] += scale * ((i == k ? 1.0 : 0.0) - row.dist.prob[i]);
  }
  apply_gradient(p, g, lr);
  return loss;
}

inline EnvAction greedy_rollback_action(const PolicyParameters& p, const worlds::World& w, const RollbackExample& ex) {
  const auto legal = w.legal_actions(ex.s_now);
  const HeadRow row = rollback_row(p, w, ex, legal);
  return legal[static_cast<std::size_t>(std::max_element(row.logits.begin(), row.logits.end()) - row.logits.begin())];
}

}  // namespace eapo::policy
