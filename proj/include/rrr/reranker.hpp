#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rrr/errors.hpp"
#include "rrr/judgment.hpp"
#include "rrr/model_client.hpp"
#include "rrr/prompts.hpp"
#include "rrr/retrieval.hpp"
#include "rrr/stats.hpp"
#include "rrr/text.hpp"

namespace rrr {

namespace detail {

inline int64_t count_tokens(const CompletionResponse& resp) {
    if (!resp.token_logprobs.empty())
        return static_cast<int64_t>(resp.token_logprobs.size());
    int64_t n = 0;
    bool in_tok = false;
    for (char c : resp.text) {
        if (text::is_space(c)) {
            in_tok = false;
        } else if (!in_tok) {
            in_tok = true;
            ++n;
        }
    }
    return n;
}

}  // namespace detail

inline constexpr const char* kScoreMarker = "Relevance score:";

/// Extracts annotation + score + score-token logprob from a reranker
/// response. The last "Relevance score:" occurrence is authoritative; the
/// score must be an integer in [1,5] and only whitespace, '.', or ')' may
/// follow it. The annotation is the text before the marker (a wrapping '('
/// dropped) and must be non-empty. Any violation yields the fallback
/// judgment: score 1, logit -inf, parse_ok false.
inline RerankerJudgment parse_judgment(const CompletionResponse& resp, int doc_index) {
    RerankerJudgment fail;
    fail.doc_index = doc_index;
    fail.annotation = text::trim(resp.text);

    size_t marker = resp.text.rfind(kScoreMarker);
    if (marker == std::string::npos) return fail;

    size_t pos = marker + std::string_view(kScoreMarker).size();
    while (pos < resp.text.size() && text::is_space(resp.text[pos])) ++pos;
    size_t digits_begin = pos;
    while (pos < resp.text.size() && resp.text[pos] >= '0' && resp.text[pos] <= '9') ++pos;
    if (pos == digits_begin) return fail;
    const std::string digits = resp.text.substr(digits_begin, pos - digits_begin);
    for (size_t i = pos; i < resp.text.size(); ++i) {
        char c = resp.text[i];
        if (!text::is_space(c) && c != '.' && c != ')') return fail;
    }
    if (digits.size() > 1) return fail;  // rules out 0-padded and multi-digit scores
    const int score = digits[0] - '0';
    if (score < 1 || score > 5) return fail;

    std::string annotation = text::trim(resp.text.substr(0, marker));
    if (!annotation.empty() && annotation.back() == '(')
        annotation = text::trim(annotation.substr(0, annotation.size() - 1));
    if (annotation.empty()) return fail;

    RerankerJudgment j;
    j.doc_index = doc_index;
    j.annotation = std::move(annotation);
    j.score = score;
    j.parse_ok = true;
    for (auto it = resp.token_logprobs.rbegin(); it != resp.token_logprobs.rend(); ++it) {
        if (text::trim(it->token) == digits) {
            j.logit = it->logprob;
            break;
        }
    }
    return j;
}

struct RerankOptions {
    int top_k = 3;
    double temperature = 0.6;
    double top_p = 0.95;
    int max_tokens = 256;
    bool resample_on_parse_failure = false;
};

/// Judges one document. Renders the template with {question}, {query},
/// {title}, {document}; requests logprobs so the score token's confidence is
/// available for tie-breaking.
inline RerankerJudgment judge_document(Backend& backend, const PromptTemplate& tmpl,
                                       const std::string& question, const std::string& query,
                                       const Document& doc, int doc_index,
                                       const RerankOptions& opts, CallStats* stats = nullptr) {
    CompletionRequest req;
    req.prompt = tmpl.render({{"question", question},
                              {"query", query},
                              {"title", doc.title},
                              {"document", doc.text}});
    req.temperature = opts.temperature;
    req.top_p = opts.top_p;
    req.max_tokens = opts.max_tokens;
    req.want_logprobs = true;

    CompletionResponse resp = backend.complete(req);
    if (stats) {
        ++stats->judge_calls;
        const int64_t tokens = detail::count_tokens(resp);
        stats->completion_tokens += tokens;
        stats->reranker_tokens += tokens;
    }
    RerankerJudgment j = parse_judgment(resp, doc_index);
    if (!j.parse_ok && opts.resample_on_parse_failure) {
        resp = backend.complete(req);
        if (stats) {
            ++stats->judge_calls;
            const int64_t tokens = detail::count_tokens(resp);
            stats->completion_tokens += tokens;
            stats->reranker_tokens += tokens;
        }
        j = parse_judgment(resp, doc_index);
    }
    return j;
}

/// Top-k selection over parsed judgments only; may return fewer than k.
/// Order: score desc, logit desc, doc_index asc.
inline std::vector<int> select_top_k(const std::vector<RerankerJudgment>& judgments, int k) {
    std::vector<const RerankerJudgment*> ok;
    for (const auto& j : judgments)
        if (j.parse_ok) ok.push_back(&j);
    std::sort(ok.begin(), ok.end(),
              [](const RerankerJudgment* a, const RerankerJudgment* b) {
                  return judgment_before(*a, *b);
              });
    if (ok.size() > static_cast<size_t>(k)) ok.resize(static_cast<size_t>(k));
    std::vector<int> selected;
    selected.reserve(ok.size());
    for (const auto* j : ok) selected.push_back(j->doc_index);
    return selected;
}

/// One full rerank pass over a retrieval result.
struct RerankRound {
    std::string query;
    std::vector<RerankerJudgment> judgments;  // retrieval order, one per doc
    std::vector<int> selected;                // doc_index values, best first
    int s_max = 0;                            // top judgment's score
    double l_of_smax = -std::numeric_limits<double>::infinity();  // its logit
};

/// Judges every retrieved document pointwise, then selects. Throws
/// AllJudgmentsFailed when not a single judgment parses.
inline RerankRound rerank(Backend& backend, const PromptTemplate& tmpl,
                          const std::string& question, const RetrievalResult& retrieved,
                          const RerankOptions& opts, CallStats* stats = nullptr) {
    RerankRound round;
    round.query = retrieved.query;
    for (size_t i = 0; i < retrieved.docs.size(); ++i)
        round.judgments.push_back(judge_document(backend, tmpl, question, retrieved.query,
                                                 retrieved.docs[i].first, static_cast<int>(i),
                                                 opts, stats));
    round.selected = select_top_k(round.judgments, opts.top_k);
    if (round.selected.empty()) throw AllJudgmentsFailed(retrieved.query);
    const RerankerJudgment& best = round.judgments[static_cast<size_t>(round.selected.front())];
    round.s_max = best.score;
    round.l_of_smax = best.logit;
    if (stats) ++stats->rerank_rounds;
    return round;
}

inline nlohmann::json judgment_to_json(const RerankerJudgment& j) {
    nlohmann::json out = {{"doc_index", j.doc_index},
                          {"annotation", j.annotation},
                          {"score", j.score},
                          {"parse_ok", j.parse_ok}};
    if (std::isfinite(j.logit)) out["logit"] = j.logit;
    return out;
}

inline nlohmann::json round_to_json(const RerankRound& r) {
    nlohmann::json judgments = nlohmann::json::array();
    for (const auto& j : r.judgments) judgments.push_back(judgment_to_json(j));
    nlohmann::json out = {{"query", r.query},
                          {"judgments", std::move(judgments)},
                          {"selected", r.selected},
                          {"s_max", r.s_max}};
    if (std::isfinite(r.l_of_smax)) out["l_of_smax"] = r.l_of_smax;
    return out;
}

}  // namespace rrr
