#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "rrr/errors.hpp"
#include "rrr/judgment.hpp"
#include "rrr/text.hpp"

namespace rrr {

enum class SegmentKind { Reasoning, Search, Information, Answer };

inline std::string_view to_string(SegmentKind k) {
    switch (k) {
        case SegmentKind::Reasoning: return "reasoning";
        case SegmentKind::Search: return "search";
        case SegmentKind::Information: return "information";
        case SegmentKind::Answer: return "answer";
    }
    return "?";
}

/// One span of a trajectory. `text` is the tag-stripped payload, `raw` the
/// verbatim span including tags so the original context reconstructs
/// byte-for-byte.
struct Segment {
    SegmentKind kind;
    std::string text;
    std::string raw;
};

struct SearchQuery { std::string query; };
struct FinalAnswer { std::string answer; };
using ParsedAction = std::variant<std::monostate, SearchQuery, FinalAnswer>;

namespace detail {

/// Locates the first well-formed `<open>payload</close>` pair whose payload is
/// non-empty after trimming. Tag matching is case-sensitive and literal;
/// unclosed tags and empty payloads are skipped as plain text.
struct TagSpan {
    size_t begin = 0;   // offset of '<open>'
    size_t end = 0;     // one past '</close>'
    std::string payload;
};

inline std::optional<TagSpan> find_tag(std::string_view s, std::string_view open,
                                       std::string_view close) {
    size_t pos = 0;
    while (pos < s.size()) {
        size_t b = s.find(open, pos);
        if (b == std::string_view::npos) return std::nullopt;
        size_t inner = b + open.size();
        size_t e = s.find(close, inner);
        if (e == std::string_view::npos) return std::nullopt;  // unclosed: plain text
        std::string payload = text::trim(s.substr(inner, e - inner));
        if (!payload.empty()) {
            return TagSpan{b, e + close.size(), std::move(payload)};
        }
        pos = e + close.size();  // empty payload: keep scanning
    }
    return std::nullopt;
}

/// Span-level parse used by the orchestrator to slice an emission into
/// segments. `prefix` is the text before the acted-upon tag; text after the
/// tag is discarded by callers.
struct ActionSpan {
    ParsedAction action;
    std::string prefix;     // trimmed text preceding the tag span ("" for none)
    std::string raw_span;   // verbatim tag span including tags
};

inline ActionSpan parse_action_span(std::string_view emission) {
    auto answer = find_tag(emission, "<answer>", "</answer>");
    if (answer) {
        return {FinalAnswer{answer->payload},
                text::trim(emission.substr(0, answer->begin)),
                std::string(emission.substr(answer->begin, answer->end - answer->begin))};
    }
    auto search = find_tag(emission, "<search>", "</search>");
    if (search) {
        return {SearchQuery{search->payload},
                text::trim(emission.substr(0, search->begin)),
                std::string(emission.substr(search->begin, search->end - search->begin))};
    }
    return {std::monostate{}, text::trim(emission), std::string()};
}

}  // namespace detail

/// Extracts at most one action from a Generator emission. A well-formed
/// `<answer>` anywhere in the emission wins over any `<search>`; with neither,
/// the emission is plain reasoning. Malformed tags never abort.
inline ParsedAction parse_action(std::string_view emission) {
    return detail::parse_action_span(emission).action;
}

/// Single left-to-right pass deciding the trajectory grammar
///   (Reasoning? Search Information)* Reasoning? Answer
/// Exactly one Answer, final, and every Search immediately followed by one
/// Information block.
inline bool validate_format(std::span<const Segment> trajectory) {
    size_t i = 0;
    const size_t n = trajectory.size();
    while (true) {
        if (i < n && trajectory[i].kind == SegmentKind::Reasoning) ++i;
        if (i >= n) return false;
        if (trajectory[i].kind == SegmentKind::Answer) return i == n - 1;
        if (trajectory[i].kind != SegmentKind::Search) return false;
        ++i;
        if (i >= n || trajectory[i].kind != SegmentKind::Information) return false;
        ++i;
    }
}

inline bool validate_format(const std::vector<Segment>& trajectory) {
    return validate_format(std::span<const Segment>(trajectory));
}

/// Renders the system-injected information block:
///   <information>[Doc i] {annotation} (Relevance score: {s})...</information>
/// Entries appear in the given order, one line each. Doc indices are printed
/// verbatim; callers pass display (1-based retrieval) positions.
inline std::string render_information(
    std::span<const std::pair<int, RerankerJudgment>> judgments) {
    if (judgments.empty()) throw EmptySelection();
    std::string out = "<information>";
    bool first = true;
    for (const auto& [idx, j] : judgments) {
        if (!first) out.push_back('\n');
        first = false;
        out += "[Doc " + std::to_string(idx) + "] " + j.annotation +
               " (Relevance score: " + std::to_string(j.score) + ")";
    }
    out += "</information>";
    return out;
}

inline std::string render_information(const std::vector<std::pair<int, RerankerJudgment>>& judgments) {
    return render_information(std::span<const std::pair<int, RerankerJudgment>>(judgments));
}

}  // namespace rrr
