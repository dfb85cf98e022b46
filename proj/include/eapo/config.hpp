#pragma once

#include <fstream>
#include <set>

#include <json.hpp>

#include "eapo/explore_reward.hpp"
#include "eapo/optim.hpp"
#include "eapo/worlds.hpp"

namespace eapo::config {

using Json = nlohmann::json;

// Thrown for anything wrong with a configuration document; the CLI maps it to
// exit code 1.
struct ConfigError : Error {
  using Error::Error;
};

struct RunConfig {
  worlds::WorldSpec world;
  optim::OptimConfig optim;
  reward::RewardWeights reward;
  std::uint64_t seed = 1;

  void validate() const {
    try {
      optim.validate();
      reward.validate();
      (void)worlds::make_world(world);
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace detail {

inline void require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
}

inline void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

}  // namespace detail

inline Json to_json(const worlds::WorldSpec& s) {
  return Json{{"name", s.name},
              {"cells", s.cells},
              {"panels", s.panels},
              {"items", s.items},
              {"attributes", s.attributes},
              {"horizon", s.horizon},
              {"seed", s.seed},
              {"failed_attempt_terminal", s.failed_attempt_terminal},
              {"memory_cap", s.memory_cap}};
}

inline worlds::WorldSpec world_from_json(const Json& j) {
  const std::string w = "world";
  detail::require_object(j, w);
  detail::reject_unknown(
      j, {"name", "cells", "panels", "items", "attributes", "horizon", "seed", "failed_attempt_terminal", "memory_cap"},
      w);
  worlds::WorldSpec s;
  detail::read(j, "name", s.name, w);
  detail::read(j, "cells", s.cells, w);
  detail::read(j, "panels", s.panels, w);
  detail::read(j, "items", s.items, w);
  detail::read(j, "attributes", s.attributes, w);
  detail::read(j, "horizon", s.horizon, w);
  detail::read(j, "seed", s.seed, w);
  detail::read(j, "failed_attempt_terminal", s.failed_attempt_terminal, w);
  detail::read(j, "memory_cap", s.memory_cap, w);
  return s;
}

inline Json to_json(const optim::OptimConfig& c) {
  return Json{{"group_size", c.group_size},
              {"clip_eps", c.clip_eps},
              {"kl_lambda", c.kl_lambda},
              {"lr", c.lr},
              {"epochs", c.epochs},
              {"mode", optim::to_string(c.mode)},
              {"update_iters", c.update_iters},
              {"sft_lr", c.sft_lr},
              {"sft_max_steps", c.sft_max_steps},
              {"sft_target_loss", c.sft_target_loss},
              {"q_steps", c.q_steps},
              {"q_samples", c.q_samples},
              {"q_max_states", c.q_max_states},
              {"q_kl_strength", c.q_kl_strength},
              {"base_prior", c.base_prior},
              {"random_goals", c.random_goals},
              {"checkpoint_every", c.checkpoint_every}};
}

inline optim::OptimConfig optim_from_json(const Json& j) {
  const std::string w = "optim";
  detail::require_object(j, w);
  detail::reject_unknown(j,
                         {"group_size", "clip_eps", "kl_lambda", "lr", "epochs", "mode", "update_iters", "sft_lr",
                          "sft_max_steps", "sft_target_loss", "q_steps", "q_samples", "q_max_states",
                          "q_kl_strength", "base_prior", "random_goals", "checkpoint_every"},
                         w);
  optim::OptimConfig c;
  detail::read(j, "group_size", c.group_size, w);
  detail::read(j, "clip_eps", c.clip_eps, w);
  detail::read(j, "kl_lambda", c.kl_lambda, w);
  detail::read(j, "lr", c.lr, w);
  detail::read(j, "epochs", c.epochs, w);
  std::string mode = optim::to_string(c.mode);
  detail::read(j, "mode", mode, w);
  auto m = optim::mode_from_string(mode);
  if (!m) throw ConfigError("unknown mode '" + mode + "'");
  c.mode = *m;
  detail::read(j, "update_iters", c.update_iters, w);
  detail::read(j, "sft_lr", c.sft_lr, w);
  detail::read(j, "sft_max_steps", c.sft_max_steps, w);
  detail::read(j, "sft_target_loss", c.sft_target_loss, w);
  detail::read(j, "q_steps", c.q_steps, w);
  detail::read(j, "q_samples", c.q_samples, w);
  detail::read(j, "q_max_states", c.q_max_states, w);
  detail::read(j, "q_kl_strength", c.q_kl_strength, w);
  detail::read(j, "base_prior", c.base_prior, w);
  detail::read(j, "random_goals", c.random_goals, w);
  detail::read(j, "checkpoint_every", c.checkpoint_every, w);
  return c;
}

inline Json to_json(const reward::RewardWeights& r) {
  return Json{{"alpha1", r.alpha1}, {"alpha2", r.alpha2}, {"gamma", r.gamma},
              {"beta", r.beta},     {"q_lr", r.q_lr},     {"q_rollouts", r.q_rollouts}};
}

inline reward::RewardWeights reward_from_json(const Json& j) {
  const std::string w = "reward";
  detail::require_object(j, w);
  detail::reject_unknown(j, {"alpha1", "alpha2", "gamma", "beta", "q_lr", "q_rollouts"}, w);
  reward::RewardWeights r;
  detail::read(j, "alpha1", r.alpha1, w);
  detail::read(j, "alpha2", r.alpha2, w);
  detail::read(j, "gamma", r.gamma, w);
  detail::read(j, "beta", r.beta, w);
  detail::read(j, "q_lr", r.q_lr, w);
  detail::read(j, "q_rollouts", r.q_rollouts, w);
  return r;
}

inline Json to_json(const RunConfig& c) {
  return Json{{"world", to_json(c.world)}, {"optim", to_json(c.optim)}, {"reward", to_json(c.reward)}, {"seed", c.seed}};
}

// Missing sections and keys take their defaults; unknown keys are errors.
inline RunConfig from_json(const Json& j) {
  detail::require_object(j, "config");
  detail::reject_unknown(j, {"world", "optim", "reward", "seed"}, "config");
  RunConfig c;
  if (j.contains("world")) c.world = world_from_json(j["world"]);
  if (j.contains("optim")) c.optim = optim_from_json(j["optim"]);
  if (j.contains("reward")) c.reward = reward_from_json(j["reward"]);
  detail::read(j, "seed", c.seed, "config");
  c.validate();
  return c;
}

inline RunConfig parse(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

inline RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace eapo::config
