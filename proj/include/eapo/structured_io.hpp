#pragma once

// Tagged output template. A document is four blocks in this order, separated
// by whitespace only:
//
//   <think> ... </think>
//   <explore> none | probe(k) </explore>
//   <memory> src:val; src:val </memory>
//   <action> The final action is \boxed{name} </action>
//
// The boxed expression is an action name with an optional integer argument,
// e.g. inspect_panel_1 or inspect_panel(1); whitespace inside it is ignored.
//
// Error classification, first error in document order wins:
//   missing-tag        the expected open tag is absent from the document, or
//                      non-tag text sits where it should start
//   misordered-tag     a later block's tag appears first, a stray close tag,
//                      or text after the action block
//   unclosed-tag       a block (or the boxed marker) is never closed, or
//                      another block opens inside it
//   duplicate-tag      a block or boxed marker appears twice
//   missing-boxed      the action block has no boxed marker
//   unparseable-action a block body does not parse (cue, memory, or action)

#include <array>
#include <cctype>
#include <charconv>
#include <string>
#include <string_view>
#include <variant>

#include "eapo/core.hpp"
#include "eapo/worlds.hpp"

namespace eapo::io {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kExploreOpen = "<explore>";
inline constexpr std::string_view kExploreClose = "</explore>";
inline constexpr std::string_view kMemoryOpen = "<memory>";
inline constexpr std::string_view kMemoryClose = "</memory>";
inline constexpr std::string_view kActionOpen = "<action>";
inline constexpr std::string_view kActionClose = "</action>";
inline constexpr std::string_view kBoxedOpen = "\\boxed{";
inline constexpr std::string_view kBoxedClose = "}";
inline constexpr std::string_view kActionPreamble = "The final action is ";

enum class ParseErrorKind { missing_tag, misordered_tag, unclosed_tag, missing_boxed, unparseable_action, duplicate_tag };

inline std::string_view to_string(ParseErrorKind k) {
  switch (k) {
    case ParseErrorKind::missing_tag: return "missing-tag";
    case ParseErrorKind::misordered_tag: return "misordered-tag";
    case ParseErrorKind::unclosed_tag: return "unclosed-tag";
    case ParseErrorKind::missing_boxed: return "missing-boxed";
    case ParseErrorKind::unparseable_action: return "unparseable-action";
    case ParseErrorKind::duplicate_tag: return "duplicate-tag";
  }
  return "?";
}

struct ParseError {
  ParseErrorKind kind;
  std::size_t position;

  friend bool operator==(const ParseError&, const ParseError&) = default;
};

using ParseResult = std::variant<AugmentedAction, ParseError>;

inline bool ok(const ParseResult& r) { return std::holds_alternative<AugmentedAction>(r); }

namespace detail {

inline constexpr std::array<std::string_view, 4> kOpenTags{kThinkOpen, kExploreOpen, kMemoryOpen, kActionOpen};
inline constexpr std::array<std::string_view, 4> kCloseTags{kThinkClose, kExploreClose, kMemoryClose,
                                                            kActionClose};

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

inline std::size_t skip_space(std::string_view s, std::size_t pos) {
  while (pos < s.size() && is_space(s[pos])) ++pos;
  return pos;
}

inline std::string strip_space(std::string_view s) {
  std::string out;
  for (char c : s)
    if (!is_space(c)) out.push_back(c);
  return out;
}

inline std::string escape(std::string_view text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::optional<std::uint32_t> to_uint(std::string_view s) {
  if (s.empty() || s.size() > 9) return std::nullopt;
  std::uint32_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

// Index of the tag that starts at `pos`, or -1.
inline int tag_at(std::string_view doc, std::size_t pos, const std::array<std::string_view, 4>& tags) {
  for (int i = 0; i < 4; ++i)
    if (doc.substr(pos).starts_with(tags[i])) return i;
  return -1;
}

inline std::size_t first_of(std::string_view doc, std::size_t from, std::size_t to,
                            const std::array<std::string_view, 4>& tags, int skip) {
  std::size_t best = std::string_view::npos;
  for (int i = 0; i < 4; ++i) {
    if (i == skip) continue;
    const auto p = doc.find(tags[i], from);
    if (p < to && p < best) best = p;
  }
  return best;
}

inline std::size_t clamp_pos(std::string_view doc, std::size_t pos) {
  return doc.empty() ? 0 : std::min(pos, doc.size() - 1);
}

inline std::optional<ExplorationCue> parse_cue(const worlds::World& w, std::string_view body) {
  const std::string s = strip_space(body);
  if (s == "none") return ExplorationCue::none();
  if (!s.starts_with("probe(") || !s.ends_with(")")) return std::nullopt;
  auto v = to_uint(std::string_view(s).substr(6, s.size() - 7));
  if (!v || *v + 1 >= w.cue_count()) return std::nullopt;
  return ExplorationCue::probe(static_cast<std::uint16_t>(*v));
}

inline std::optional<MemoryState> parse_memory(const worlds::World& w, std::string_view body) {
  const std::string s = strip_space(body);
  if (s.empty()) return MemoryState{};
  const auto universe = w.fact_universe();
  std::vector<Fact> facts;
  std::string_view rest = s;
  while (true) {
    const auto semi = rest.find(';');
    const std::string_view item = rest.substr(0, semi);
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) return std::nullopt;
    auto src = to_uint(item.substr(0, colon));
    auto val = to_uint(item.substr(colon + 1));
    if (!src || !val || *src > 0xFFFF || *val > 0xFFFF) return std::nullopt;
    const Fact f{static_cast<std::uint16_t>(*src), static_cast<std::uint16_t>(*val)};
    if (std::find(universe.begin(), universe.end(), f) == universe.end()) return std::nullopt;
    facts.push_back(f);
    if (semi == std::string_view::npos) break;
    rest = rest.substr(semi + 1);
  }
  if (facts.size() > w.memory_cap()) return std::nullopt;
  return MemoryState::from_facts(std::move(facts), w.memory_cap());
}

inline std::optional<EnvAction> parse_action_name(const worlds::World& w, std::string_view expr) {
  std::string s = strip_space(expr);
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return std::nullopt;
  std::size_t i = 0;
  while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_')) ++i;
  std::string name = s.substr(0, i);
  if (i < s.size()) {
    if (s[i] != '(' || s.back() != ')') return std::nullopt;
    auto arg = to_uint(std::string_view(s).substr(i + 1, s.size() - i - 2));
    if (!arg) return std::nullopt;
    name += "_" + std::to_string(*arg);
  }
  return w.action_by_name(name);
}

}  // namespace detail

inline std::string serialize_cue(const ExplorationCue& c) {
  return c.is_none() ? std::string("none") : "probe(" + std::to_string(*c.target()) + ")";
}

inline std::string serialize_memory(const MemoryState& m) {
  std::string out;
  for (const Fact& f : m.facts()) {
    if (!out.empty()) out += "; ";
    out += std::to_string(f.source) + ":" + std::to_string(f.value);
  }
  return out;
}

inline std::string serialize(const worlds::World& w, const AugmentedAction& a, std::string_view think) {
  std::string out;
  out += kThinkOpen;
  out += " " + detail::escape(think) + " ";
  out += kThinkClose;
  out += "\n";
  out += kExploreOpen;
  out += " " + serialize_cue(a.cue) + " ";
  out += kExploreClose;
  out += "\n";
  out += kMemoryOpen;
  if (!a.memory.empty()) out += " " + serialize_memory(a.memory) + " ";
  out += kMemoryClose;
  out += "\n";
  out += kActionOpen;
  out += " ";
  out += kActionPreamble;
  out += kBoxedOpen;
  out += w.action_name(a.act);
  out += kBoxedClose;
  out += " ";
  out += kActionClose;
  return out;
}

inline ParseResult parse(const worlds::World& w, std::string_view doc) {
  using detail::kCloseTags;
  using detail::kOpenTags;
  auto fail = [&](ParseErrorKind k, std::size_t pos) { return ParseResult(ParseError{k, detail::clamp_pos(doc, pos)}); };

  AugmentedAction out;
  std::size_t pos = detail::skip_space(doc, 0);
  for (int i = 0; i < 4; ++i) {
    if (!doc.substr(pos).starts_with(kOpenTags[i])) {
      const int open = detail::tag_at(doc, pos, kOpenTags);
      if (open >= 0 && open < i) return fail(ParseErrorKind::duplicate_tag, pos);
      if (doc.find(kOpenTags[i]) == std::string_view::npos) return fail(ParseErrorKind::missing_tag, pos);
      if (open > i || detail::tag_at(doc, pos, kCloseTags) >= 0) return fail(ParseErrorKind::misordered_tag, pos);
      return fail(ParseErrorKind::missing_tag, pos);
    }
    const std::size_t body_start = pos + kOpenTags[i].size();
    const std::size_t close = doc.find(kCloseTags[i], body_start);
    if (close == std::string_view::npos) return fail(ParseErrorKind::unclosed_tag, pos);
    if (detail::first_of(doc, body_start, close, kOpenTags, -1) != std::string_view::npos)
      return fail(ParseErrorKind::unclosed_tag, pos);
    if (auto stray = detail::first_of(doc, body_start, close, kCloseTags, i); stray != std::string_view::npos)
      return fail(ParseErrorKind::misordered_tag, stray);
    const std::string_view body = doc.substr(body_start, close - body_start);

    if (i == 1) {
      auto cue = detail::parse_cue(w, body);
      if (!cue) return fail(ParseErrorKind::unparseable_action, body_start);
      out.cue = *cue;
    } else if (i == 2) {
      auto mem = detail::parse_memory(w, body);
      if (!mem) return fail(ParseErrorKind::unparseable_action, body_start);
      out.memory = std::move(*mem);
    } else if (i == 3) {
      const auto boxed = body.find(kBoxedOpen);
      if (boxed == std::string_view::npos) return fail(ParseErrorKind::missing_boxed, body_start);
      const std::size_t expr_start = boxed + kBoxedOpen.size();
      const auto end = body.find(kBoxedClose, expr_start);
      if (end == std::string_view::npos) return fail(ParseErrorKind::unclosed_tag, body_start + boxed);
      if (auto again = body.find(kBoxedOpen, expr_start); again != std::string_view::npos)
        return fail(ParseErrorKind::duplicate_tag, body_start + again);
      auto act = detail::parse_action_name(w, body.substr(expr_start, end - expr_start));
      if (!act) return fail(ParseErrorKind::unparseable_action, body_start + expr_start);
      out.act = *act;
    }
    pos = detail::skip_space(doc, close + kCloseTags[i].size());
  }
  if (pos < doc.size()) {
    if (detail::tag_at(doc, pos, kOpenTags) >= 0) return fail(ParseErrorKind::duplicate_tag, pos);
    return fail(ParseErrorKind::misordered_tag, pos);
  }
  return out;
}

inline int format_reward(const worlds::World& w, std::string_view doc) { return ok(parse(w, doc)) ? 1 : 0; }

}  // namespace eapo::io
