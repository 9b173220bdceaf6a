#pragma once

#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rrr/errors.hpp"
#include "rrr/eval.hpp"
#include "rrr/model_client.hpp"
#include "rrr/prompts.hpp"
#include "rrr/reranker.hpp"
#include "rrr/retrieval.hpp"
#include "rrr/stats.hpp"
#include "rrr/trajectory.hpp"

namespace rrr {

struct RunConfig {
    int n_docs = 15;
    int top_k = 3;
    int max_turns = 5;
    SamplingParams generator{1.0, 0.95, 1024};
    SamplingParams reranker{0.6, 0.95, 256};
    bool resample_on_parse_failure = false;
};

enum class TrajectoryStatus { Answered, TurnLimit, Failed };

inline std::string to_string(TrajectoryStatus s) {
    switch (s) {
        case TrajectoryStatus::Answered: return "answered";
        case TrajectoryStatus::TurnLimit: return "turn_limit";
        default: return "failed";
    }
}

struct TrajectoryState {
    std::string question;
    std::vector<Segment> segments;
    std::vector<RerankRound> rounds;   // one per search turn
    std::vector<Document> retrieved;   // raw retrieval output, all turns, in order
    int turns_used = 0;
    TrajectoryStatus status = TrajectoryStatus::Failed;
    std::string answer;                // non-empty only when Answered
    std::string fail_reason;
};

inline std::string make_base_context(const PromptTemplate& tmpl, const std::string& question) {
    return tmpl.render({{"question", question}});
}

inline void append_segment(std::string& context, const Segment& seg) {
    context += "\n" + seg.raw;
}

namespace detail {

/// Generation halts on "</search>"/"</answer>" and the marker itself is cut
/// from the text, so the tag being written arrives unclosed. Restores the
/// closing tag of the rightmost dangling opener; anything else passes through.
inline void reclose_stopped_tag(std::string& text) {
    const size_t s_open = text.rfind("<search>");
    const size_t s_close = text.rfind("</search>");
    const size_t a_open = text.rfind("<answer>");
    const size_t a_close = text.rfind("</answer>");
    const bool s_dangling =
        s_open != std::string::npos && (s_close == std::string::npos || s_close < s_open);
    const bool a_dangling =
        a_open != std::string::npos && (a_close == std::string::npos || a_close < a_open);
    if (s_dangling && (!a_dangling || s_open > a_open))
        text += "</search>";
    else if (a_dangling)
        text += "</answer>";
}

}  // namespace detail

inline CompletionResponse generate_step(Backend& generator, const std::string& context,
                                        const SamplingParams& sampling, CallStats* stats) {
    CompletionRequest req;
    req.prompt = context;
    req.temperature = sampling.temperature;
    req.top_p = sampling.top_p;
    req.max_tokens = sampling.max_tokens;
    req.stop = {"</search>", "</answer>"};
    CompletionResponse resp = generator.complete(req);
    if (stats) {
        ++stats->generator_calls;
        stats->completion_tokens += detail::count_tokens(resp);
    }
    // A Length cut mid-tag must stay malformed: closing it would fabricate a
    // truncated query or answer.
    if (resp.finish_reason == FinishReason::Stop) detail::reclose_stopped_tag(resp.text);
    return resp;
}

inline RerankOptions rerank_options(const RunConfig& cfg) {
    RerankOptions opts;
    opts.top_k = cfg.top_k;
    opts.temperature = cfg.reranker.temperature;
    opts.top_p = cfg.reranker.top_p;
    opts.max_tokens = cfg.reranker.max_tokens;
    opts.resample_on_parse_failure = cfg.resample_on_parse_failure;
    return opts;
}

/// Builds the injected information segment from a rerank round: selected
/// docs in selection order, displayed with 1-based retrieval positions.
inline Segment info_segment_from_round(const RerankRound& round) {
    std::vector<std::pair<int, RerankerJudgment>> entries;
    entries.reserve(round.selected.size());
    for (int idx : round.selected)
        entries.emplace_back(idx + 1, round.judgments[static_cast<size_t>(idx)]);
    std::string raw = render_information(entries);
    // strip "<information>" / "</information>"
    std::string inner = raw.substr(13, raw.size() - 27);
    return Segment{SegmentKind::Information, std::move(inner), std::move(raw)};
}

/// Runs one question to completion: generate, act, retrieve, rerank, inject,
/// repeat. An actionless emission gets one free retry within its turn; a
/// second in a row fails the trajectory. A search on the final turn still
/// completes its injection before the turn-limit exit, so the transcript
/// never ends on a bare query.
inline TrajectoryState run_trajectory(Backend& generator, Backend& reranker_backend,
                                      const Retriever& retriever,
                                      const PromptTemplate& generator_tmpl,
                                      const PromptTemplate& reranker_tmpl,
                                      const std::string& question, const RunConfig& cfg,
                                      CallStats* stats = nullptr) {
    TrajectoryState t;
    t.question = question;
    std::string context = make_base_context(generator_tmpl, question);
    const RerankOptions ropts = rerank_options(cfg);

    for (int turn = 1; turn <= cfg.max_turns; ++turn) {
        t.turns_used = turn;
        CompletionResponse emission = generate_step(generator, context, cfg.generator, stats);
        detail::ActionSpan span = detail::parse_action_span(emission.text);
        if (std::holds_alternative<std::monostate>(span.action)) {
            // one free retry: the actionless emission joins the context as
            // reasoning and the same turn generates again
            if (!span.prefix.empty()) {
                Segment reasoning{SegmentKind::Reasoning, span.prefix, span.prefix};
                append_segment(context, reasoning);
                t.segments.push_back(std::move(reasoning));
            }
            emission = generate_step(generator, context, cfg.generator, stats);
            span = detail::parse_action_span(emission.text);
        }
        if (!span.prefix.empty() && !std::holds_alternative<std::monostate>(span.action)) {
            Segment reasoning{SegmentKind::Reasoning, span.prefix, span.prefix};
            append_segment(context, reasoning);
            t.segments.push_back(std::move(reasoning));
        }
        if (std::holds_alternative<FinalAnswer>(span.action)) {
            Segment ans{SegmentKind::Answer, std::get<FinalAnswer>(span.action).answer,
                        span.raw_span};
            append_segment(context, ans);
            t.segments.push_back(std::move(ans));
            t.status = TrajectoryStatus::Answered;
            t.answer = std::get<FinalAnswer>(span.action).answer;
            return t;
        }
        if (std::holds_alternative<std::monostate>(span.action)) {
            if (!span.prefix.empty()) {
                Segment reasoning{SegmentKind::Reasoning, span.prefix, span.prefix};
                append_segment(context, reasoning);
                t.segments.push_back(std::move(reasoning));
            }
            t.status = TrajectoryStatus::Failed;
            t.fail_reason = "two consecutive emissions without an action tag";
            return t;
        }

        const std::string& query = std::get<SearchQuery>(span.action).query;
        Segment search{SegmentKind::Search, query, span.raw_span};
        append_segment(context, search);
        t.segments.push_back(std::move(search));

        RetrievalResult retrieved = retriever.search(query, cfg.n_docs);
        if (stats) stats->retrieved_docs += static_cast<int64_t>(retrieved.docs.size());
        for (const auto& [doc, score] : retrieved.docs) t.retrieved.push_back(doc);
        if (retrieved.docs.empty()) {
            t.status = TrajectoryStatus::Failed;
            t.fail_reason = "retrieval returned no documents";
            return t;
        }
        RerankRound round;
        try {
            round = rerank(reranker_backend, reranker_tmpl, question, retrieved, ropts, stats);
        } catch (const AllJudgmentsFailed&) {
            t.status = TrajectoryStatus::Failed;
            t.fail_reason = "all reranker judgments failed";
            return t;
        }
        Segment info = info_segment_from_round(round);
        append_segment(context, info);
        t.segments.push_back(std::move(info));
        t.rounds.push_back(std::move(round));
    }
    t.status = TrajectoryStatus::TurnLimit;
    t.fail_reason = "turn limit reached without an answer";
    return t;
}

// Hierarchical reward: answer quality dominates, format next, a bare parsed
// answer still beats silence.
inline constexpr double kRewardFull = 1.0;
inline constexpr double kRewardAnswerOnly = 0.8;
inline constexpr double kRewardFormatOnly = 0.2;
inline constexpr double kRewardParsedOnly = 0.1;

inline double reward_from_flags(bool correct, bool format_ok, bool parsed) {
    if (correct && format_ok) return kRewardFull;
    if (correct) return kRewardAnswerOnly;
    if (format_ok) return kRewardFormatOnly;
    if (parsed) return kRewardParsedOnly;
    return 0.0;
}

inline double compute_reward(const TrajectoryState& t, const std::vector<std::string>& golds) {
    const bool parsed = t.status == TrajectoryStatus::Answered;
    const bool format_ok = validate_format(t.segments);
    const bool correct = parsed && exact_match(t.answer, golds);
    return reward_from_flags(correct, format_ok, parsed);
}

inline nlohmann::json segment_to_json(const Segment& s) {
    return {{"kind", std::string(to_string(s.kind))}, {"text", s.text}, {"raw", s.raw}};
}

inline nlohmann::json trajectory_to_json(const TrajectoryState& t) {
    nlohmann::json segments = nlohmann::json::array();
    for (const auto& s : t.segments) segments.push_back(segment_to_json(s));
    nlohmann::json rounds = nlohmann::json::array();
    for (const auto& r : t.rounds) rounds.push_back(round_to_json(r));
    return {{"question", t.question},
            {"status", to_string(t.status)},
            {"answer", t.answer},
            {"fail_reason", t.fail_reason},
            {"turns_used", t.turns_used},
            {"segments", std::move(segments)},
            {"rounds", std::move(rounds)}};
}

inline void write_transcripts_jsonl(const std::vector<TrajectoryState>& trajectories,
                                    const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for write: " + path);
    for (const auto& t : trajectories) out << trajectory_to_json(t).dump() << "\n";
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace rrr
