#pragma once

#include <algorithm>
#include <cctype>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <tuple>
#include <vector>

#include "eapo/structured_io.hpp"

namespace eapo::fixture {

// Independent acceptor: the tag occurrences in the document must be exactly
// the eight block tags in order, separated by whitespace only, and each body
// must parse under its own small grammar.
class ReferenceAcceptor {
 public:
  explicit ReferenceAcceptor(const worlds::World& w) : w_(w) {}

  std::optional<AugmentedAction> accept(const std::string& doc) const {
    static const std::vector<std::string> tags{"<think>",  "</think>",  "<explore>", "</explore>",
                                               "<memory>", "</memory>", "<action>",  "</action>"};
    std::vector<std::pair<std::size_t, int>> found;
    for (std::size_t i = 0; i < doc.size(); ++i)
      for (int t = 0; t < 8; ++t)
        if (doc.compare(i, tags[t].size(), tags[t]) == 0) found.push_back({i, t});
    if (found.size() != 8) return std::nullopt;
    for (int t = 0; t < 8; ++t)
      if (found[t].second != t) return std::nullopt;
    auto blank = [&](std::size_t a, std::size_t b) {
      for (std::size_t i = a; i < b; ++i)
        if (!std::isspace(static_cast<unsigned char>(doc[i]))) return false;
      return true;
    };
    if (!blank(0, found[0].first)) return std::nullopt;
    for (int b = 0; b < 3; ++b)
      if (!blank(found[2 * b + 1].first + tags[2 * b + 1].size(), found[2 * b + 2].first)) return std::nullopt;
    if (!blank(found[7].first + tags[7].size(), doc.size())) return std::nullopt;
    auto body = [&](int b) {
      const std::size_t from = found[2 * b].first + tags[2 * b].size();
      return doc.substr(from, found[2 * b + 1].first - from);
    };

    AugmentedAction out;
    const std::string cue = squeeze(body(1));
    std::smatch m;
    if (cue == "none") {
      out.cue = ExplorationCue::none();
    } else if (std::regex_match(cue, m, std::regex(R"(probe\((\d{1,9})\))"))) {
      const auto k = std::stoul(m[1]);
      if (k + 1 >= w_.cue_count()) return std::nullopt;
      out.cue = ExplorationCue::probe(static_cast<std::uint16_t>(k));
    } else {
      return std::nullopt;
    }

    const std::string mem = squeeze(body(2));
    if (!mem.empty()) {
      if (!std::regex_match(mem, std::regex(R"(\d{1,9}:\d{1,9}(;\d{1,9}:\d{1,9})*)"))) return std::nullopt;
      std::vector<Fact> facts;
      const auto universe = w_.fact_universe();
      std::regex item(R"((\d+):(\d+))");
      for (auto it = std::sregex_iterator(mem.begin(), mem.end(), item); it != std::sregex_iterator(); ++it) {
        const auto src = std::stoul((*it)[1]), val = std::stoul((*it)[2]);
        if (src > 0xFFFF || val > 0xFFFF) return std::nullopt;
        const Fact f{static_cast<std::uint16_t>(src), static_cast<std::uint16_t>(val)};
        if (std::find(universe.begin(), universe.end(), f) == universe.end()) return std::nullopt;
        facts.push_back(f);
      }
      if (facts.size() > w_.memory_cap()) return std::nullopt;
      out.memory = MemoryState::from_facts(facts, w_.memory_cap());
    }

    const std::string act = body(3);
    const std::string open = "\\boxed{";
    const auto b = act.find(open);
    if (b == std::string::npos) return std::nullopt;
    const auto e = act.find('}', b + open.size());
    if (e == std::string::npos) return std::nullopt;
    if (act.find(open, b + open.size()) != std::string::npos) return std::nullopt;
    const std::string expr = squeeze(act.substr(b + open.size(), e - b - open.size()));
    if (!std::regex_match(expr, m, std::regex(R"(([A-Za-z_]\w*)(\((\d{1,9})\))?)"))) return std::nullopt;
    std::string name = m[1];
    if (m[3].matched) name += "_" + std::to_string(std::stoul(m[3]));
    auto a = w_.action_by_name(name);
    if (!a) return std::nullopt;
    out.act = *a;
    return out;
  }

 private:
  static std::string squeeze(const std::string& s) {
    std::string out;
    for (char c : s)
      if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
    return out;
  }

  const worlds::World& w_;
};

inline std::vector<AugmentedAction> all_actions(const worlds::World& w) {
  std::vector<AugmentedAction> out;
  const auto universe = w.fact_universe();
  for (std::uint32_t mask = 0; mask < (1u << universe.size()); ++mask) {
    std::vector<Fact> facts;
    for (std::size_t i = 0; i < universe.size(); ++i)
      if (mask >> i & 1) facts.push_back(universe[i]);
    if (facts.size() > w.memory_cap()) continue;
    const auto mem = MemoryState::from_facts(facts, w.memory_cap());
    for (std::uint16_t c = 0; c < w.cue_count(); ++c)
      for (std::uint16_t id = 0; id < w.action_count(); ++id)
        out.push_back(AugmentedAction{ExplorationCue::from_code(c), mem, w.action(id)});
  }
  return out;
}

inline const std::vector<std::string> kMutationTokens{"<think>",  "</think>",  "<explore>", "</explore>", "<memory>",
                                                     "</memory>", "<action>", "</action>",  "\\boxed{",   "}",
                                                     "probe(",   "none",      ";",          ":",          "x"};

// Applies one to three random edits: token deletion, block swap, token
// insertion, random byte, truncation, or a retargeted boxed name.
inline std::string mutate(const worlds::World& w, std::string doc, std::mt19937_64& gen) {
  auto below = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(gen); };
  const int edits = 1 + static_cast<int>(below(3));
  for (int k = 0; k < edits; ++k) {
    switch (below(6)) {
      case 0: {  // delete a token occurrence
        const auto& t = kMutationTokens[below(kMutationTokens.size())];
        if (auto p = doc.find(t); p != std::string::npos) doc.erase(p, t.size());
        break;
      }
      case 1: {  // swap two blocks
        const int a = static_cast<int>(below(4)), b = static_cast<int>(below(4));
        const auto pa = doc.find(kMutationTokens[2 * a]), pb = doc.find(kMutationTokens[2 * b]);
        const auto ea = doc.find(kMutationTokens[2 * a + 1]), eb = doc.find(kMutationTokens[2 * b + 1]);
        if (a == b || pa == std::string::npos || pb == std::string::npos || ea == std::string::npos ||
            eb == std::string::npos || ea < pa || eb < pb)
          break;
        const auto [lo, lo_end, hi, hi_end] =
            pa < pb ? std::tuple{pa, ea + kMutationTokens[2 * a + 1].size(), pb, eb + kMutationTokens[2 * b + 1].size()}
                    : std::tuple{pb, eb + kMutationTokens[2 * b + 1].size(), pa, ea + kMutationTokens[2 * a + 1].size()};
        if (lo_end > hi) break;
        doc = doc.substr(0, lo) + doc.substr(hi, hi_end - hi) + doc.substr(lo_end, hi - lo_end) +
              doc.substr(lo, lo_end - lo) + doc.substr(hi_end);
        break;
      }
      case 2: {  // duplicate a token
        const auto& t = kMutationTokens[below(kMutationTokens.size())];
        doc.insert(below(doc.size() + 1), t);
        break;
      }
      case 3:  // random byte
        doc.insert(doc.begin() + static_cast<long>(below(doc.size() + 1)), static_cast<char>(below(256)));
        break;
      case 4:  // truncate
        doc.resize(below(doc.size() + 1));
        break;
      default: {  // retarget the boxed name
        if (auto p = doc.find("\\boxed{"); p != std::string::npos) {
          const auto e = doc.find('}', p);
          if (e != std::string::npos)
            doc.replace(p + 7, e - p - 7, w.action_name(w.action(static_cast<std::uint16_t>(below(w.action_count())))) +
                                              (below(2) ? "" : "(" + std::to_string(below(3)) + ")"));
        }
      }
    }
  }
  return doc;
}

}  // namespace eapo::fixture
