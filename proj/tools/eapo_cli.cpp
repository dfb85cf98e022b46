// eapo: train, ablate and audit runs from a JSON config.
#include <CLI11.hpp>

#include "eapo/cli.hpp"

namespace {

using eapo::cli::Overrides;

void add_overrides(CLI::App* cmd, Overrides& ov, std::string& mode, bool with_seed_and_mode) {
  if (with_seed_and_mode) {
    cmd->add_option("--seed", ov.seed, "Run seed (overrides the config)");
    cmd->add_option("--mode", mode, "Optimizer mode (overrides the config)");
  }
  cmd->add_option("--epochs-override", ov.epochs, "Number of epochs")->check(CLI::NonNegativeNumber);
  cmd->add_option("--gamma-override", ov.gamma, "Discount factor");
}

// "1..5" or "1,2,7".
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  if (auto dots = text.find(".."); dots != std::string::npos) {
    const auto lo = std::stoull(text.substr(0, dots)), hi = std::stoull(text.substr(dots + 2));
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
    return out;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(std::stoull(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exploration-aware policy optimization on small enumerable worlds"};
  app.require_subcommand(1);

  eapo::cli::TrainArgs train;
  std::string train_mode, resume;
  auto* t = app.add_subcommand("train", "Rollback fine-tuning followed by reinforcement learning");
  t->add_option("--config", train.config_path, "JSON config")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  t->add_option("--resume", resume, "Checkpoint to resume from");
  add_overrides(t, train.overrides, train_mode, true);

  eapo::cli::AblateArgs ablate;
  std::string seeds = "1..5";
  auto* a = app.add_subcommand("ablate", "Cross product of modes and seeds with a joined comparison CSV");
  a->add_option("--config", ablate.config_path, "JSON config")->required();
  a->add_option("--out", ablate.out, "Output directory")->required();
  a->add_option("--modes", ablate.modes, "Modes to compare")->delimiter(',')->required();
  a->add_option("--seeds", seeds, "Seeds as a..b or a comma list")->capture_default_str();
  a->add_option("--jobs", ablate.jobs, "Concurrent cells (0: hardware threads)");
  std::string unused_mode;
  add_overrides(a, ablate.overrides, unused_mode, false);

  eapo::cli::AuditArgs audit;
  auto* r = app.add_subcommand("reward-audit", "Rank correlation of the learned explore reward with rollouts");
  r->add_option("--checkpoint", audit.checkpoint, "Checkpoint with policy and reward model")->required();
  r->add_option("--k", audit.k_values, "Rollout repetitions to test")->delimiter(',')->capture_default_str();
  r->add_option("--samples", audit.samples, "Transitions to sample")->capture_default_str();
  r->add_option("--seed", audit.seed, "Sampling seed")->capture_default_str();
  r->add_option("--out", audit.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : eapo::cli::kExitConfig;
  }

  if (*t) {
    if (!train_mode.empty()) {
      train.overrides.mode = eapo::optim::mode_from_string(train_mode);
      if (!train.overrides.mode) {
        std::cerr << "eapo: config error: unknown mode '" << train_mode << "'\n";
        return eapo::cli::kExitConfig;
      }
    }
    if (!resume.empty()) train.resume = resume;
    return eapo::cli::cmd_train(train);
  }
  if (*a) {
    try {
      ablate.seeds = parse_seeds(seeds);
    } catch (const std::exception&) {
      std::cerr << "eapo: config error: bad --seeds '" << seeds << "'\n";
      return eapo::cli::kExitConfig;
    }
    return eapo::cli::cmd_ablate(ablate);
  }
  return eapo::cli::cmd_reward_audit(audit);
}
