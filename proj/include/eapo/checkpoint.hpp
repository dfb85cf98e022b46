#pragma once

#include <filesystem>
#include <fstream>

#include "eapo/config.hpp"
#include "eapo/optim.hpp"

namespace eapo::checkpoint {

using config::Json;

inline constexpr int kSchemaVersion = 1;

inline std::string to_hex(const std::string& bytes) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 15]);
  }
  return out;
}

inline std::string from_hex(const std::string& hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw Error("bad hex digit in checkpoint key");
  };
  if (hex.size() % 2) throw Error("odd-length hex key in checkpoint");
  std::string out;
  for (std::size_t i = 0; i < hex.size(); i += 2)
    out.push_back(static_cast<char>(nibble(hex[i]) * 16 + nibble(hex[i + 1])));
  return out;
}

namespace detail {

// Sorted keys keep the file byte-stable for identical parameters.
inline Json table_to_json(const policy::Table& t) {
  std::map<std::string, const std::vector<double>*> sorted;
  for (const auto& [k, v] : t) sorted.emplace(to_hex(k), &v);
  Json out = Json::object();
  for (const auto& [k, v] : sorted) out[k] = *v;
  return out;
}

inline policy::Table table_from_json(const Json& j) {
  policy::Table t;
  for (const auto& [k, v] : j.items()) t.emplace(from_hex(k), v.get<std::vector<double>>());
  return t;
}

inline Json policy_to_json(const policy::PolicyParameters& p) {
  return Json{{"cue", table_to_json(p.cue_head)},
              {"memory", table_to_json(p.memory_head)},
              {"action", table_to_json(p.action_head)},
              {"base_prior", p.base_prior},
              {"init_scale", p.init_scale},
              {"init_seed", p.init_seed},
              {"run_seed", p.run_seed}};
}

inline policy::PolicyParameters policy_from_json(const Json& j) {
  policy::PolicyParameters p;
  p.cue_head = table_from_json(j.at("cue"));
  p.memory_head = table_from_json(j.at("memory"));
  p.action_head = table_from_json(j.at("action"));
  p.base_prior = j.at("base_prior").get<double>();
  p.init_scale = j.at("init_scale").get<double>();
  p.init_seed = j.at("init_seed").get<std::uint64_t>();
  p.run_seed = j.at("run_seed").get<std::uint64_t>();
  return p;
}

}  // namespace detail

inline Json to_json(const optim::TrainState& st, const config::RunConfig& cfg) {
  Json q = Json::object();
  for (const auto& [id, row] : st.q.rows) q[std::to_string(id)] = row;
  Json states = Json::array();
  for (const auto& [g, s] : st.q_states) states.push_back({g.id, s.id});
  return Json{{"schema_version", kSchemaVersion},
              {"config", config::to_json(cfg)},
              {"next_epoch", st.next_epoch},
              {"policy", detail::policy_to_json(st.policy)},
              {"reference", detail::policy_to_json(st.reference)},
              {"reward_model", q},
              {"q_states", states},
              {"sft_losses", st.sft_losses}};
}

struct Loaded {
  config::RunConfig config;
  optim::TrainState state;
};

inline Loaded from_json(const Json& j) {
  try {
    if (j.at("schema_version").get<int>() != kSchemaVersion) throw Error("unsupported checkpoint schema version");
    Loaded out;
    out.config = config::from_json(j.at("config"));
    const auto w = worlds::make_world(out.config.world);
    out.state = optim::initial_train_state(*w, out.config.optim, out.config.seed);
    out.state.next_epoch = j.at("next_epoch").get<int>();
    out.state.policy = detail::policy_from_json(j.at("policy"));
    out.state.reference = detail::policy_from_json(j.at("reference"));
    for (const auto& [id, row] : j.at("reward_model").items())
      out.state.q.rows.emplace(static_cast<std::uint32_t>(std::stoul(id)), row.get<std::vector<double>>());
    for (const auto& e : j.at("q_states")) {
      const Goal g{e.at(0).get<std::uint16_t>()};
      out.state.q_states.emplace_back(g, w->state_from_id(e.at(1).get<std::uint32_t>()));
    }
    out.state.sft_losses = j.at("sft_losses").get<std::vector<double>>();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed checkpoint: ") + e.what());
  }
}

// Writes through a temporary file and a rename so readers never see a
// partial file.
inline void write_atomic(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void save(const std::filesystem::path& path, const optim::TrainState& st, const config::RunConfig& cfg) {
  write_atomic(path, to_json(st, cfg).dump() + "\n");
}

inline Loaded load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

}  // namespace eapo::checkpoint
