#pragma once

#include <cstdint>

namespace rrr {

/// Call accounting shared by the orchestrator and the schedulers. Token
/// counts come from backend logprobs when present, otherwise from a
/// whitespace split of the completion text.
struct CallStats {
    int64_t generator_calls = 0;
    int64_t rerank_rounds = 0;
    int64_t judge_calls = 0;        // individual reranker invocations, one per (query, doc)
    int64_t retrieved_docs = 0;
    int64_t completion_tokens = 0;  // all backends
    int64_t reranker_tokens = 0;    // subset of completion_tokens spent on judgments

    CallStats& operator+=(const CallStats& o) {
        generator_calls += o.generator_calls;
        rerank_rounds += o.rerank_rounds;
        judge_calls += o.judge_calls;
        retrieved_docs += o.retrieved_docs;
        completion_tokens += o.completion_tokens;
        reranker_tokens += o.reranker_tokens;
        return *this;
    }
};

}  // namespace rrr
