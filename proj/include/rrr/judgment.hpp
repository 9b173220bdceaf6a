#pragma once

#include <limits>
#include <string>

namespace rrr {

/// One document's verbal annotation as produced by the reranker model.
/// `doc_index` is the document's position in the retrieval result (0-based).
/// On parse failure the documented fallback applies: score 1, logit -inf,
/// parse_ok false.
struct RerankerJudgment {
    int doc_index = 0;
    std::string annotation;
    int score = 1;                 // 1..5 when parse_ok
    double logit = -std::numeric_limits<double>::infinity();  // logprob of the score token
    bool parse_ok = false;
};

/// Selection order: score desc, then logit desc, then doc_index asc.
/// The logit tie-break prioritizes the response generated with higher
/// confidence; the index tie-break keeps runs reproducible.
inline bool judgment_before(const RerankerJudgment& a, const RerankerJudgment& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.logit != b.logit) return a.logit > b.logit;
    return a.doc_index < b.doc_index;
}

}  // namespace rrr
