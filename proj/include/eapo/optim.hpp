#pragma once

#include <functional>
#include <map>
#include <set>

#include "eapo/core.hpp"
#include "eapo/explore_reward.hpp"
#include "eapo/metrics.hpp"
#include "eapo/policy.hpp"
#include "eapo/structured_io.hpp"
#include "eapo/worlds.hpp"

namespace eapo::optim {

enum class Mode { eapo, grpo_baseline, no_grouping_ablation, no_explore_reward_ablation, no_format_reward_ablation };

inline constexpr std::array<Mode, 5> kAllModes{Mode::eapo, Mode::grpo_baseline, Mode::no_grouping_ablation,
                                               Mode::no_explore_reward_ablation, Mode::no_format_reward_ablation};

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::eapo: return "eapo";
    case Mode::grpo_baseline: return "grpo-baseline";
    case Mode::no_grouping_ablation: return "no-grouping-ablation";
    case Mode::no_explore_reward_ablation: return "no-explore-reward-ablation";
    case Mode::no_format_reward_ablation: return "no-format-reward-ablation";
  }
  return "?";
}

inline std::optional<Mode> mode_from_string(std::string_view s) {
  for (Mode m : kAllModes)
    if (to_string(m) == s) return m;
  return std::nullopt;
}

// Flat modes put every transition of a collection into one group.
inline bool flat_grouping(Mode m) { return m == Mode::grpo_baseline || m == Mode::no_grouping_ablation; }

inline reward::RewardWeights effective_weights(Mode m, reward::RewardWeights w) {
  if (m == Mode::grpo_baseline) w.alpha1 = w.alpha2 = 0.0;
  if (m == Mode::no_explore_reward_ablation) w.alpha2 = 0.0;
  if (m == Mode::no_format_reward_ablation) w.alpha1 = 0.0;
  return w;
}

struct OptimConfig {
  int group_size = 16;
  double clip_eps = 0.2;
  double kl_lambda = 0.01;
  double lr = 1e-4;
  int epochs = 1000;
  Mode mode = Mode::eapo;
  int update_iters = 1;  // clipped updates per collection
  // Rollback fine-tuning stage; stops once the loss drops below the target.
  double sft_lr = 1e-4;
  int sft_max_steps = 1000;
  double sft_target_loss = 0.05;
  // Reward-model updates per epoch.
  int q_steps = 1;
  int q_samples = 4;
  int q_max_states = 16;
  double q_kl_strength = 1.0;
  // Initial policy shape; see PolicyParameters.
  double base_prior = 0.0;
  bool random_goals = false;
  int checkpoint_every = 50;

  void validate() const {
    if (group_size < 2) throw Error("group_size must be at least 2");
    if (epochs < 0) throw Error("epochs must be non-negative");
    if (!(clip_eps > 0 && clip_eps < 1)) throw Error("clip_eps must lie in (0, 1)");
    for (double v : {kl_lambda, lr, sft_lr, sft_target_loss, q_kl_strength, base_prior})
      if (!std::isfinite(v) || v < 0) throw Error("optimizer settings must be finite and non-negative");
    if (update_iters < 1 || sft_max_steps < 0 || q_steps < 0 || q_samples < 1 || q_max_states < 1)
      throw Error("optimizer counts out of range");
    if (checkpoint_every < 1) throw Error("checkpoint_every must be positive");
  }
};

// ---------------------------------------------------------------------------
// Rollouts.

inline std::uint64_t epoch_episode_seed(std::uint64_t run_seed, int epoch) {
  return derive_seed({run_seed, static_cast<std::uint64_t>(epoch), 0x65706973ull});
}

inline std::uint64_t epoch_stream_seed(std::uint64_t run_seed, int epoch) {
  return derive_seed({run_seed, static_cast<std::uint64_t>(epoch), 0x726f6c6cull});
}

inline Trajectory rollout(const policy::PolicyParameters& p, const std::shared_ptr<const worlds::World>& w,
                          const Goal& goal, std::uint64_t episode_seed, RngStream& rng) {
  worlds::WorldInstance inst = worlds::reset(w, episode_seed, goal);
  Trajectory traj;
  traj.episode_seed = episode_seed;
  AugmentedState s{goal, inst.current(), ExplorationCue::none(), MemoryState{}};
  std::vector<EnvState> history;
  for (int t = 0; t < w->horizon() && !w->is_terminal(s.env); ++t) {
    const auto sample = policy::sample_augmented_action(p, *w, s, rng);
    Transition tr;
    tr.s_tilde = s;
    tr.step = t;
    tr.depth = visitation_depth(history, s.env);
    tr.wire = io::serialize(*w, sample.action, w->describe(s.env));
    const auto parsed = io::parse(*w, tr.wire);
    tr.a_tilde = io::ok(parsed) ? std::get<AugmentedAction>(parsed) : sample.action;
    const auto r = inst.step(tr.a_tilde.act);
    history.push_back(s.env);
    s = AugmentedState{goal, r.next, tr.a_tilde.cue, tr.a_tilde.memory};
    tr.s_tilde_next = s;
    traj.transitions.push_back(std::move(tr));
    if (r.success) traj.success = true;
  }
  return traj;
}

inline std::vector<Trajectory> collect_group_rollouts(const policy::PolicySnapshot& old,
                                                      const std::shared_ptr<const worlds::World>& w, const Goal& goal,
                                                      std::uint64_t episode_seed, int group_size,
                                                      std::uint64_t stream_seed) {
  if (group_size < 2) throw Error("collect_group_rollouts: group size must be at least 2");
  std::vector<Trajectory> out;
  out.reserve(group_size);
  for (int i = 0; i < group_size; ++i) {
    RngStream rng(derive_seed({stream_seed, static_cast<std::uint64_t>(i)}));
    out.push_back(rollout(*old, w, goal, episode_seed, rng));
  }
  return out;
}

// Fills every transition's reward breakdown. The task component is the
// success signal discounted back from the final step; explore is read from
// `q` when one is supplied and is 0 otherwise.
inline void assign_rewards(std::vector<Trajectory>& trajs, const worlds::World& w, const reward::RewardModelTable* q,
                           const reward::RewardWeights& wt) {
  for (Trajectory& traj : trajs) {
    const int last = traj.horizon_used() - 1;
    for (Transition& t : traj.transitions) {
      const double task = traj.success ? std::pow(wt.gamma, last - t.step) : 0.0;
      const int format = io::format_reward(w, t.wire);
      const double explore = q ? reward::explore_reward(*q, w, t, wt.gamma) : 0.0;
      t.reward = reward::total_reward(wt, task, format, explore);
    }
  }
}

// ---------------------------------------------------------------------------
// Grouping and advantages.

struct GroupKey {
  bool flat = false;
  std::uint32_t state = 0;
  int depth = 0;

  friend auto operator<=>(const GroupKey&, const GroupKey&) = default;
};

struct Member {
  int trajectory = 0;
  int step = 0;
};

struct TransitionGroup {
  GroupKey key;
  std::vector<Member> members;
};

using GroupMap = std::map<GroupKey, TransitionGroup>;

inline GroupMap build_groups(std::span<const Trajectory> trajs) {
  GroupMap out;
  for (int i = 0; i < static_cast<int>(trajs.size()); ++i)
    for (const Transition& t : trajs[i].transitions) {
      const GroupKey key{false, t.s_tilde.env.id, t.depth};
      auto& g = out[key];
      g.key = key;
      g.members.push_back({i, t.step});
    }
  return out;
}

inline GroupMap build_flat_group(std::span<const Trajectory> trajs) {
  GroupMap out;
  TransitionGroup g;
  g.key = GroupKey{true, 0, 0};
  for (int i = 0; i < static_cast<int>(trajs.size()); ++i)
    for (const Transition& t : trajs[i].transitions) g.members.push_back({i, t.step});
  if (!g.members.empty()) out.emplace(g.key, std::move(g));
  return out;
}

struct AdvantageEstimate {
  double value = 0.0;
  GroupKey key;
  bool degenerate = false;
};

inline constexpr double kDegenerateSpread = 1e-8;

inline std::vector<AdvantageEstimate> normalize_advantages(const TransitionGroup& g, std::span<const double> rewards) {
  if (g.members.empty()) throw Error("normalize_advantages: empty group");
  if (rewards.size() != g.members.size()) throw Error("normalize_advantages: one reward per member required");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<AdvantageEstimate> out(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    out[i].key = g.key;
    out[i].degenerate = sd < kDegenerateSpread;
    out[i].value = out[i].degenerate ? 0.0 : (rewards[i] - mean) / sd;
  }
  return out;
}

// ---------------------------------------------------------------------------
// One epoch.

struct StepReport {
  std::vector<Trajectory> trajectories;
  std::map<int, int> group_size_histogram;
  int degenerate_groups = 0;
  double policy_objective = 0.0;
  double surrogate = 0.0;
  double kl = 0.0;
  double mean_task = 0.0;
  double mean_format = 0.0;
  double mean_explore = 0.0;
  std::size_t transitions = 0;
};

// Builds the update batch: every transition with its group-normalized
// advantage on all three tokens.
inline std::vector<policy::BatchItem> advantage_batch(const std::vector<Trajectory>& trajs, const GroupMap& groups,
                                                      const std::shared_ptr<const policy::PolicyParameters>& old,
                                                      StepReport* report = nullptr) {
  std::vector<policy::BatchItem> batch;
  for (const auto& [key, g] : groups) {
    std::vector<double> rewards;
    for (const Member& m : g.members) rewards.push_back(total_of(trajs[m.trajectory].transitions[m.step]));
    const auto adv = normalize_advantages(g, rewards);
    if (report) {
      ++report->group_size_histogram[static_cast<int>(g.members.size())];
      report->degenerate_groups += adv.front().degenerate ? 1 : 0;
    }
    for (std::size_t i = 0; i < g.members.size(); ++i) {
      const Transition& t = trajs[g.members[i].trajectory].transitions[g.members[i].step];
      batch.push_back(policy::BatchItem{t.s_tilde, t.a_tilde, {adv[i].value, adv[i].value, adv[i].value}, old});
    }
  }
  return batch;
}

inline StepReport train_step(policy::PolicyParameters& params, const reward::RewardModelTable* q,
                             const std::shared_ptr<const worlds::World>& w, const Goal& goal,
                             std::uint64_t episode_seed, const OptimConfig& cfg, const reward::RewardWeights& weights,
                             std::uint64_t stream_seed, const policy::PolicySnapshot& ref) {
  const reward::RewardWeights wt = effective_weights(cfg.mode, weights);
  const policy::PolicySnapshot old = policy::snapshot(params, policy::Role::old);
  StepReport rep;
  rep.trajectories = collect_group_rollouts(old, w, goal, episode_seed, cfg.group_size, stream_seed);
  assign_rewards(rep.trajectories, *w, wt.alpha2 > 0.0 ? q : nullptr, wt);

  for (const Trajectory& t : rep.trajectories)
    for (const Transition& tr : t.transitions) {
      rep.mean_task += tr.reward->task;
      rep.mean_format += tr.reward->format;
      rep.mean_explore += tr.reward->explore;
      ++rep.transitions;
    }
  if (rep.transitions > 0) {
    const double n = static_cast<double>(rep.transitions);
    rep.mean_task /= n;
    rep.mean_format /= n;
    rep.mean_explore /= n;
  }
  if (rep.transitions == 0) return rep;

  const GroupMap groups = flat_grouping(cfg.mode) ? build_flat_group(rep.trajectories) : build_groups(rep.trajectories);
  const auto batch = advantage_batch(rep.trajectories, groups, old.params, &rep);
  for (int it = 0; it < cfg.update_iters; ++it) {
    const auto res = policy::policy_gradient(params, *w, batch, cfg.clip_eps, cfg.kl_lambda, ref);
    if (it == 0) {
      rep.policy_objective = res.objective;
      rep.surrogate = res.surrogate;
      rep.kl = res.kl;
    }
    policy::apply_gradient(params, res.gradient, cfg.lr);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Full run: rollback fine-tuning, then reward-model and policy updates per
// epoch.

struct TrainState {
  policy::PolicyParameters policy;
  policy::PolicyParameters reference;
  reward::RewardModelTable q;
  int next_epoch = 0;
  // Non-terminal states from the latest rollouts, used to train q next epoch.
  std::vector<std::pair<Goal, EnvState>> q_states;
  std::vector<double> sft_losses;
};

inline TrainState initial_train_state(const worlds::World& w, const OptimConfig& cfg, std::uint64_t run_seed) {
  TrainState st;
  st.policy.base_prior = cfg.base_prior;
  st.policy.run_seed = run_seed;
  st.q = reward::RewardModelTable(w);
  return st;
}

inline void run_sft(TrainState& st, const worlds::World& w, const OptimConfig& cfg) {
  const auto dataset = policy::build_rollback_dataset(w);
  if (!dataset.empty()) {
    for (int i = 0; i < cfg.sft_max_steps; ++i) {
      const double loss = policy::sft_rollback_update(st.policy, w, dataset, cfg.sft_lr);
      st.sft_losses.push_back(loss);
      if (loss < cfg.sft_target_loss) break;
    }
  }
  st.reference = st.policy;
}

inline Goal sample_goal(const worlds::World& w, const OptimConfig& cfg, std::uint64_t run_seed, int epoch) {
  const auto goals = w.goals();
  if (cfg.random_goals) {
    RngStream rng(derive_seed({run_seed, static_cast<std::uint64_t>(epoch), 0x676f616cull}));
    return goals[rng.below(goals.size())];
  }
  return goals[static_cast<std::size_t>(epoch) % goals.size()];
}

inline std::vector<std::pair<Goal, EnvState>> states_for_q(const std::vector<Trajectory>& trajs,
                                                           const worlds::World& w, int cap) {
  std::vector<std::pair<Goal, EnvState>> out;
  std::set<std::pair<std::uint16_t, std::uint32_t>> seen;
  for (const Trajectory& t : trajs)
    for (const Transition& tr : t.transitions) {
      if (w.is_terminal(tr.s_tilde.env)) continue;
      if (static_cast<int>(out.size()) >= cap) return out;
      if (seen.insert({tr.s_tilde.goal.id, tr.s_tilde.env.id}).second)
        out.emplace_back(tr.s_tilde.goal, tr.s_tilde.env);
    }
  return out;
}

inline bool trains_reward_model(Mode m, const reward::RewardWeights& w) { return effective_weights(m, w).alpha2 > 0.0; }

struct EpochHooks {
  std::function<void(const metrics::MetricRow&, const StepReport&)> on_epoch;
  std::function<void(const TrainState&)> on_checkpoint;
};

inline metrics::MetricRow epoch_row(int epoch, const StepReport& rep, double q_objective) {
  metrics::MetricRow row;
  row.epoch = epoch;
  row.success_rate = metrics::success_rate(rep.trajectories);
  row.exploration_degree = metrics::exploration_degree(rep.trajectories);
  row.mean_episode_steps = metrics::average_episode_steps(rep.trajectories);
  row.reward_task = rep.mean_task;
  row.reward_format = rep.mean_format;
  row.reward_explore = rep.mean_explore;
  row.group_size_histogram = rep.group_size_histogram;
  row.policy_loss = -rep.policy_objective;
  row.reward_model_objective = q_objective;
  return row;
}

// Runs epochs [st.next_epoch, end_epoch).
inline void run_epochs(TrainState& st, const std::shared_ptr<const worlds::World>& w, const OptimConfig& cfg,
                       const reward::RewardWeights& weights, std::uint64_t run_seed, int end_epoch,
                       const EpochHooks& hooks = {}) {
  const policy::PolicySnapshot ref = policy::snapshot(st.reference, policy::Role::reference);
  const bool with_q = trains_reward_model(cfg.mode, weights);
  for (int epoch = st.next_epoch; epoch < end_epoch; ++epoch) {
    double q_objective = 0.0;
    if (with_q && !st.q_states.empty() && cfg.q_steps > 0) {
      RngStream qrng(derive_seed({run_seed, static_cast<std::uint64_t>(epoch), 0x71ull}));
      const auto trace = reward::train_reward_model(st.q, st.policy, w, st.q_states, weights,
                                                    {cfg.q_kl_strength, cfg.q_steps, cfg.q_samples}, qrng);
      q_objective = trace.back();
    }
    const reward::RewardModelTable q_snapshot = st.q;
    const Goal goal = sample_goal(*w, cfg, run_seed, epoch);
    StepReport rep = train_step(st.policy, with_q ? &q_snapshot : nullptr, w, goal, epoch_episode_seed(run_seed, epoch),
                                cfg, weights, epoch_stream_seed(run_seed, epoch), ref);
    if (with_q) st.q_states = states_for_q(rep.trajectories, *w, cfg.q_max_states);
    st.next_epoch = epoch + 1;
    if (hooks.on_epoch) hooks.on_epoch(epoch_row(epoch, rep, q_objective), rep);
    if (hooks.on_checkpoint && (st.next_epoch % cfg.checkpoint_every == 0 || st.next_epoch == end_epoch))
      hooks.on_checkpoint(st);
  }
}

inline TrainState train(const std::shared_ptr<const worlds::World>& w, const OptimConfig& cfg,
                        const reward::RewardWeights& weights, std::uint64_t run_seed, const EpochHooks& hooks = {}) {
  cfg.validate();
  weights.validate();
  TrainState st = initial_train_state(*w, cfg, run_seed);
  run_sft(st, *w, cfg);
  run_epochs(st, w, cfg, weights, run_seed, cfg.epochs, hooks);
  return st;
}

}  // namespace eapo::optim
