#pragma once

#include <cstdio>
#include <fstream>
#include <algorithm>
#include <map>
#include <sstream>
#include <unordered_map>

#include "eapo/core.hpp"

namespace eapo::metrics {

struct MetricRow {
  int epoch = 0;
  double success_rate = 0.0;
  double exploration_degree = 0.0;
  double mean_episode_steps = 0.0;
  double reward_task = 0.0;
  double reward_format = 0.0;
  double reward_explore = 0.0;
  std::map<int, int> group_size_histogram;  // group size -> number of groups
  double policy_loss = 0.0;
  double reward_model_objective = 0.0;
};

namespace detail {
struct StateIdHash {
  std::size_t operator()(std::uint32_t id) const { return id; }
};
}  // namespace detail

// Fraction of distinct states in `visits` that occur at least twice.
inline double revisit_fraction(const std::vector<EnvState>& visits) {
  if (visits.empty()) return 0.0;
  std::unordered_map<std::uint32_t, int, detail::StateIdHash> count;
  for (const EnvState& s : visits) ++count[s.id];
  int revisited = 0;
  for (const auto& [id, c] : count) revisited += c >= 2 ? 1 : 0;
  return static_cast<double>(revisited) / static_cast<double>(count.size());
}

// Mean over trajectories of the revisit fraction of each trajectory's own
// states. With `pooled`, all visits of the batch are counted together.
inline double exploration_degree(std::span<const Trajectory> batch, bool pooled = false) {
  if (batch.empty()) throw Error("exploration_degree: empty batch");
  if (pooled) {
    std::vector<EnvState> all;
    for (const auto& t : batch)
      for (auto& s : t.env_states()) all.push_back(std::move(s));
    return revisit_fraction(all);
  }
  double sum = 0.0;
  for (const auto& t : batch) sum += revisit_fraction(t.env_states());
  return sum / static_cast<double>(batch.size());
}

inline double average_episode_steps(std::span<const Trajectory> batch) {
  if (batch.empty()) throw Error("average_episode_steps: empty batch");
  double sum = 0.0;
  for (const auto& t : batch) sum += t.horizon_used();
  return sum / static_cast<double>(batch.size());
}

inline double success_rate(std::span<const Trajectory> batch) {
  if (batch.empty()) throw Error("success_rate: empty batch");
  double sum = 0.0;
  for (const auto& t : batch) sum += t.success ? 1.0 : 0.0;
  return sum / static_cast<double>(batch.size());
}

struct SeriesStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population
};

inline SeriesStats seed_aggregate(std::span<const std::vector<double>> runs) {
  SeriesStats out;
  if (runs.empty()) return out;
  const std::size_t n = runs.front().size();
  for (const auto& r : runs)
    if (r.size() != n) throw Error("seed_aggregate: series lengths differ");
  out.mean.assign(n, 0.0);
  out.stddev.assign(n, 0.0);
  const double k = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < n; ++i) {
    double m = 0.0;
    for (const auto& r : runs) m += r[i];
    m /= k;
    double v = 0.0;
    for (const auto& r : runs) v += (r[i] - m) * (r[i] - m);
    out.mean[i] = m;
    out.stddev[i] = std::sqrt(v / k);
  }
  return out;
}

// Ranks starting at 1; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = r;
    i = j + 1;
  }
  return rank;
}

// Pearson correlation of the average ranks. Returns 0 when either series is
// constant, where the correlation is undefined.
inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman: series lengths differ");
  if (x.size() < 2) throw Error("spearman: need at least two points");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// CSV: one header row, fields in declaration order, 6 significant digits.

inline constexpr const char* kCsvHeader =
    "epoch,success_rate,exploration_degree,mean_episode_steps,reward_task,reward_format,reward_explore,"
    "group_size_histogram,policy_loss,reward_model_objective";

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v == 0.0 ? 0.0 : v);
  return buf;
}

inline std::string format_histogram(const std::map<int, int>& h) {
  std::string out;
  for (const auto& [size, count] : h) {
    if (!out.empty()) out += ";";
    out += std::to_string(size) + ":" + std::to_string(count);
  }
  return out;
}

inline std::string to_csv_line(const MetricRow& r) {
  std::string out = std::to_string(r.epoch);
  for (double v : {r.success_rate, r.exploration_degree, r.mean_episode_steps, r.reward_task, r.reward_format,
                   r.reward_explore})
    out += "," + format_real(v);
  out += "," + format_histogram(r.group_size_histogram);
  out += "," + format_real(r.policy_loss);
  out += "," + format_real(r.reward_model_objective);
  return out;
}

inline MetricRow parse_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  if (cells.size() != 10) throw Error("metrics row has " + std::to_string(cells.size()) + " fields");
  try {
    MetricRow r;
    r.epoch = std::stoi(cells[0]);
    r.success_rate = std::stod(cells[1]);
    r.exploration_degree = std::stod(cells[2]);
    r.mean_episode_steps = std::stod(cells[3]);
    r.reward_task = std::stod(cells[4]);
    r.reward_format = std::stod(cells[5]);
    r.reward_explore = std::stod(cells[6]);
    std::stringstream hs(cells[7]);
    std::string pair;
    while (std::getline(hs, pair, ';')) {
      const auto colon = pair.find(':');
      if (colon == std::string::npos) throw Error("bad histogram entry");
      r.group_size_histogram[std::stoi(pair.substr(0, colon))] = std::stoi(pair.substr(colon + 1));
    }
    r.policy_loss = std::stod(cells[8]);
    r.reward_model_objective = std::stod(cells[9]);
    return r;
  } catch (const std::logic_error&) {
    throw Error("malformed metrics row: " + line);
  }
}

inline std::vector<MetricRow> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw Error("unexpected metrics header in " + path);
  std::vector<MetricRow> rows;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(parse_csv_line(line));
  return rows;
}

}  // namespace eapo::metrics
