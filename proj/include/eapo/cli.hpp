#pragma once

#include <atomic>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <thread>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "eapo/checkpoint.hpp"
#include "eapo/config.hpp"
#include "eapo/explore_reward.hpp"
#include "eapo/metrics.hpp"
#include "eapo/optim.hpp"

#ifndef EAPO_CODE_VERSION
#define EAPO_CODE_VERSION "0.1.0"
#endif

namespace eapo::cli {

namespace fs = std::filesystem;
using config::Json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kManifestSchema = 1;

inline std::string code_version() { return EAPO_CODE_VERSION; }

// Shared stderr logger; level from EAPO_LOG_LEVEL (error, info, debug).
inline std::shared_ptr<spdlog::logger> logger() {
  static const std::shared_ptr<spdlog::logger> log = [] {
    auto l = spdlog::stderr_color_mt("eapo");
    l->set_pattern("[%H:%M:%S] [%l] %v");
    l->set_level(spdlog::level::info);
    if (const char* env = std::getenv("EAPO_LOG_LEVEL")) {
      const std::string v = env;
      if (v == "error") l->set_level(spdlog::level::err);
      else if (v == "debug") l->set_level(spdlog::level::debug);
      else if (v != "info") l->warn("ignoring EAPO_LOG_LEVEL={}; expected error, info or debug", v);
    }
    return l;
  }();
  return log;
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<optim::Mode> mode;
  std::optional<int> epochs;
  std::optional<double> gamma;
};

inline void apply(config::RunConfig& cfg, const Overrides& ov) {
  if (ov.seed) cfg.seed = *ov.seed;
  if (ov.mode) cfg.optim.mode = *ov.mode;
  if (ov.epochs) cfg.optim.epochs = *ov.epochs;
  if (ov.gamma) cfg.reward.gamma = *ov.gamma;
  cfg.validate();
}

// ---------------------------------------------------------------------------
// Manifest.

class Manifest {
 public:
  Manifest(fs::path dir, const config::RunConfig& cfg) : path_(std::move(dir) / "manifest.json") {
    j_ = Json{{"schema_version", kManifestSchema},
              {"code_version", code_version()},
              {"config", config::to_json(cfg)},
              {"seed", cfg.seed},
              {"started_at", utc_now()},
              {"finished_at", nullptr},
              {"status", "incomplete"},
              {"artifacts", {{"metrics", "metrics.csv"}, {"checkpoints", Json::array()}}}};
  }

  Json& json() { return j_; }

  void add_checkpoint(const std::string& relative) {
    auto& list = j_["artifacts"]["checkpoints"];
    if (std::find(list.begin(), list.end(), relative) == list.end()) list.push_back(relative);
  }

  void fail(const std::string& message) {
    j_["status"] = "incomplete";
    j_["error"] = message;
    j_["finished_at"] = utc_now();
    write();
  }

  // Marks the run complete only when every declared artifact exists.
  void complete() {
    const fs::path dir = path_.parent_path();
    if (!fs::exists(dir / j_["artifacts"]["metrics"].get<std::string>())) throw Error("metrics.csv is missing");
    for (const auto& c : j_["artifacts"]["checkpoints"])
      if (!fs::exists(dir / c.get<std::string>())) throw Error("checkpoint " + c.get<std::string>() + " is missing");
    j_["status"] = "complete";
    j_["finished_at"] = utc_now();
    write();
  }

  void write() const { checkpoint::write_atomic(path_, j_.dump(2) + "\n"); }

 private:
  fs::path path_;
  Json j_;
};

// ---------------------------------------------------------------------------
// Training.

namespace detail {

inline std::string checkpoint_name(int epoch) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "checkpoints/epoch_%06d.json", epoch);
  return buf;
}

// The run config must match the checkpoint's apart from the epoch budget and
// checkpoint cadence.
inline void check_resumable(const config::RunConfig& run, const config::RunConfig& saved) {
  auto strip = [](const config::RunConfig& c) {
    Json j = config::to_json(c);
    j["optim"].erase("epochs");
    j["optim"].erase("checkpoint_every");
    return j;
  };
  if (strip(run) != strip(saved)) throw config::ConfigError("config differs from the checkpoint's config");
}

// Keeps the rows of epochs before `next_epoch`; a missing row is an error.
inline void truncate_metrics(const fs::path& path, int next_epoch) {
  const auto rows = metrics::read_csv(path.string());
  std::string text = std::string(metrics::kCsvHeader) + "\n";
  int expected = 0;
  for (const auto& r : rows) {
    if (r.epoch >= next_epoch) break;
    if (r.epoch != expected) throw Error("metrics.csv has a gap before epoch " + std::to_string(expected));
    ++expected;
  }
  if (expected != next_epoch) throw Error("metrics.csv ends before the checkpoint epoch");
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  for (int i = 0; i < next_epoch && std::getline(in, line); ++i) text += line + "\n";
  checkpoint::write_atomic(path, text);
}

}  // namespace detail

// Runs one training cell into `out`. Returns an exit code; the manifest is
// left incomplete on failure.
inline int run_training(const config::RunConfig& cfg, const fs::path& out,
                        const std::optional<fs::path>& resume = std::nullopt) {
  auto log = logger();
  try {
    fs::create_directories(out / "checkpoints");
  } catch (const fs::filesystem_error& e) {
    log->error("cannot create output directory {}: {}", out.string(), e.what());
    return kExitRuntime;
  }
  Manifest manifest(out, cfg);
  try {
    manifest.write();
    const auto world = worlds::make_world(cfg.world);
    const fs::path metrics_path = out / "metrics.csv";
    optim::TrainState st;
    if (resume) {
      auto loaded = checkpoint::load(*resume);
      detail::check_resumable(cfg, loaded.config);
      st = std::move(loaded.state);
      detail::truncate_metrics(metrics_path, st.next_epoch);
      manifest.json()["resumed_from"] = fs::absolute(*resume).string();
      for (const auto& entry : fs::directory_iterator(out / "checkpoints"))
        if (entry.path().extension() == ".json")
          manifest.add_checkpoint("checkpoints/" + entry.path().filename().string());
      log->info("resuming {} at epoch {}", out.string(), st.next_epoch);
    } else {
      st = optim::initial_train_state(*world, cfg.optim, cfg.seed);
      optim::run_sft(st, *world, cfg.optim);
      checkpoint::write_atomic(metrics_path, std::string(metrics::kCsvHeader) + "\n");
      log->info("rollback fine-tuning: {} steps, final loss {:.4g}", st.sft_losses.size(),
                st.sft_losses.empty() ? 0.0 : st.sft_losses.back());
    }
    manifest.json()["sft"] = {{"steps", st.sft_losses.size()},
                              {"final_loss", st.sft_losses.empty() ? 0.0 : st.sft_losses.back()}};
    manifest.write();

    std::ofstream csv(metrics_path, std::ios::app | std::ios::binary);
    if (!csv) throw Error("cannot append to " + metrics_path.string());
    int last_saved = -1;
    optim::EpochHooks hooks;
    hooks.on_epoch = [&](const metrics::MetricRow& row, const optim::StepReport&) {
      csv << metrics::to_csv_line(row) << "\n";
      csv.flush();
      if (!csv) throw Error("write failed for metrics.csv");
      log->debug("epoch {} success {:.3f} exploration {:.3f}", row.epoch, row.success_rate, row.exploration_degree);
      if ((row.epoch + 1) % 50 == 0)
        log->info("{} epoch {} success {:.3f} exploration {:.3f}", out.filename().string(), row.epoch,
                  row.success_rate, row.exploration_degree);
    };
    auto save = [&](const optim::TrainState& s) {
      const std::string name = detail::checkpoint_name(s.next_epoch);
      checkpoint::save(out / name, s, cfg);
      manifest.add_checkpoint(name);
      manifest.write();
      last_saved = s.next_epoch;
    };
    hooks.on_checkpoint = save;
    optim::run_epochs(st, world, cfg.optim, cfg.reward, cfg.seed, cfg.optim.epochs, hooks);
    if (last_saved != st.next_epoch) save(st);
    csv.close();
    manifest.complete();
    return kExitOk;
  } catch (const config::ConfigError& e) {
    log->error("config error: {}", e.what());
    manifest.fail(e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    log->error("run failed: {}", e.what());
    try {
      manifest.fail(e.what());
    } catch (const std::exception&) {
    }
    return kExitRuntime;
  }
}

struct TrainArgs {
  std::string config_path;
  fs::path out;
  Overrides overrides;
  std::optional<fs::path> resume;
};

inline int cmd_train(const TrainArgs& a) {
  config::RunConfig cfg;
  try {
    cfg = config::load(a.config_path);
    apply(cfg, a.overrides);
  } catch (const std::exception& e) {
    std::cerr << "eapo: config error: " << e.what() << "\n";
    return kExitConfig;
  }
  return run_training(cfg, a.out, a.resume);
}

// ---------------------------------------------------------------------------
// Ablation.

struct AblateArgs {
  std::string config_path;
  std::vector<std::string> modes;
  std::vector<std::uint64_t> seeds;
  fs::path out;
  Overrides overrides;  // seed and mode overrides are ignored
  unsigned jobs = 0;    // 0: one per hardware thread
};

inline fs::path cell_dir(const fs::path& out, optim::Mode m, std::uint64_t seed) {
  return out / optim::to_string(m) / ("seed_" + std::to_string(seed));
}

inline int cmd_ablate(const AblateArgs& a) {
  auto log = logger();
  config::RunConfig base;
  std::vector<optim::Mode> modes;
  try {
    base = config::load(a.config_path);
    Overrides ov = a.overrides;
    ov.seed.reset();
    ov.mode.reset();
    apply(base, ov);
    for (const auto& name : a.modes) {
      auto m = optim::mode_from_string(name);
      if (!m) throw config::ConfigError("unknown mode '" + name + "'");
      modes.push_back(*m);
    }
    if (modes.empty() || a.seeds.empty()) throw config::ConfigError("ablation needs at least one mode and one seed");
  } catch (const std::exception& e) {
    std::cerr << "eapo: config error: " << e.what() << "\n";
    return kExitConfig;
  }

  struct Cell {
    optim::Mode mode;
    std::uint64_t seed;
    int exit = -1;
  };
  std::vector<Cell> cells;
  for (auto m : modes)
    for (auto s : a.seeds) cells.push_back({m, s});

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      config::RunConfig cfg = base;
      cfg.optim.mode = cells[i].mode;
      cfg.seed = cells[i].seed;
      cells[i].exit = run_training(cfg, cell_dir(a.out, cells[i].mode, cells[i].seed));
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const unsigned jobs = std::min<std::size_t>(a.jobs ? a.jobs : hw, cells.size());
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  int status = kExitOk;
  Json summary = Json::array();
  std::string comparison = std::string("mode,seed,") + metrics::kCsvHeader + "\n";
  for (const Cell& c : cells) {
    const fs::path dir = cell_dir(a.out, c.mode, c.seed);
    summary.push_back({{"mode", optim::to_string(c.mode)},
                       {"seed", c.seed},
                       {"exit_code", c.exit},
                       {"status", c.exit == kExitOk ? "complete" : "failed"},
                       {"dir", fs::relative(dir, a.out).string()}});
    if (c.exit != kExitOk) {
      log->error("cell {} seed {} failed with exit code {}", optim::to_string(c.mode), c.seed, c.exit);
      status = kExitRuntime;
      continue;
    }
    std::ifstream in(dir / "metrics.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line))
      if (!line.empty()) comparison += optim::to_string(c.mode) + "," + std::to_string(c.seed) + "," + line + "\n";
  }
  try {
    fs::create_directories(a.out);
    checkpoint::write_atomic(a.out / "comparison.csv", comparison);
    checkpoint::write_atomic(a.out / "ablation.json", Json{{"cells", summary}}.dump(2) + "\n");
  } catch (const std::exception& e) {
    log->error("cannot write ablation outputs: {}", e.what());
    return kExitRuntime;
  }
  return status;
}

// ---------------------------------------------------------------------------
// Reward audit: learned explore reward against the rollout-based reward.

struct AuditSample {
  Transition transition;
  Goal goal;
  worlds::Hidden hidden;
};

// Transitions from fresh episodes of `p`, in a fixed order.
inline std::vector<AuditSample> audit_samples(const policy::PolicyParameters& p,
                                              const std::shared_ptr<const worlds::World>& w, int count,
                                              std::uint64_t seed) {
  std::vector<AuditSample> out;
  const auto goals = w->goals();
  for (std::uint64_t e = 0; static_cast<int>(out.size()) < count; ++e) {
    if (e > static_cast<std::uint64_t>(count) * 100) throw Error("audit: episodes produce no transitions");
    const Goal goal = goals[e % goals.size()];
    const std::uint64_t episode_seed = derive_seed({seed, e, 0x61756474ull});
    const worlds::Hidden hidden = worlds::reset(w, episode_seed, goal).hidden();
    RngStream rng(derive_seed({seed, e, 0x726f6c6cull}));
    const Trajectory t = optim::rollout(p, w, goal, episode_seed, rng);
    for (const Transition& tr : t.transitions) {
      if (static_cast<int>(out.size()) >= count) break;
      out.push_back({tr, goal, hidden});
    }
  }
  return out;
}

struct AuditRow {
  int k = 0;
  double spearman = 0.0;
  int transitions = 0;
  double mean_learned = 0.0;
  double mean_online = 0.0;
};

inline std::vector<AuditRow> reward_audit(const policy::PolicyParameters& p, const reward::RewardModelTable& q,
                                          const std::shared_ptr<const worlds::World>& w, double gamma,
                                          const std::vector<int>& k_values, int samples, std::uint64_t seed) {
  const auto data = audit_samples(p, w, samples, seed);
  std::vector<double> learned;
  for (const auto& d : data) learned.push_back(reward::explore_reward(q, *w, d.transition, gamma));
  std::vector<AuditRow> rows;
  for (int k : k_values) {
    std::vector<double> online;
    for (std::size_t i = 0; i < data.size(); ++i) {
      RngStream rng(derive_seed({seed, static_cast<std::uint64_t>(k), i, 0x6f6e6c6eull}));
      online.push_back(
          reward::online_exploratory_reward(p, w, data[i].goal, data[i].hidden, data[i].transition, gamma, k, rng)
              .value);
    }
    AuditRow r;
    r.k = k;
    r.transitions = static_cast<int>(data.size());
    r.spearman = metrics::spearman(learned, online);
    for (double v : learned) r.mean_learned += v / static_cast<double>(data.size());
    for (double v : online) r.mean_online += v / static_cast<double>(data.size());
    rows.push_back(r);
  }
  return rows;
}

struct AuditArgs {
  fs::path checkpoint;
  std::vector<int> k_values{1, 2, 4, 6, 8, 10};
  int samples = 200;
  std::uint64_t seed = 1;
  fs::path out;
};

inline int cmd_reward_audit(const AuditArgs& a) {
  auto log = logger();
  if (!fs::exists(a.checkpoint)) {
    std::cerr << "eapo: checkpoint not found: " << a.checkpoint.string() << "\n";
    return kExitConfig;
  }
  if (a.k_values.empty() || a.samples < 2) {
    std::cerr << "eapo: config error: audit needs at least one K and two samples\n";
    return kExitConfig;
  }
  for (int k : a.k_values)
    if (k < 1) {
      std::cerr << "eapo: config error: K must be at least 1\n";
      return kExitConfig;
    }
  checkpoint::Loaded loaded;
  try {
    loaded = checkpoint::load(a.checkpoint);
  } catch (const std::exception& e) {
    std::cerr << "eapo: cannot load checkpoint: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    const auto w = worlds::make_world(loaded.config.world);
    const auto rows =
        reward_audit(loaded.state.policy, loaded.state.q, w, loaded.config.reward.gamma, a.k_values, a.samples, a.seed);
    std::string csv = "k,spearman,transitions,mean_learned,mean_online\n";
    for (const auto& r : rows)
      csv += std::to_string(r.k) + "," + metrics::format_real(r.spearman) + "," + std::to_string(r.transitions) +
             "," + metrics::format_real(r.mean_learned) + "," + metrics::format_real(r.mean_online) + "\n";
    fs::create_directories(a.out);
    checkpoint::write_atomic(a.out / "audit.csv", csv);
    for (const auto& r : rows) log->info("K={} spearman {:.3f}", r.k, r.spearman);
    return kExitOk;
  } catch (const std::exception& e) {
    log->error("audit failed: {}", e.what());
    return kExitRuntime;
  }
}

}  // namespace eapo::cli
