#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rrr/errors.hpp"
#include "rrr/eval.hpp"
#include "rrr/model_client.hpp"
#include "rrr/orchestrator.hpp"
#include "rrr/prompts.hpp"
#include "rrr/reranker.hpp"
#include "rrr/retrieval.hpp"
#include "rrr/stats.hpp"
#include "rrr/trajectory.hpp"

namespace rrr {

struct TtsConfig {
    int budget_n = 5;      // total completion budget, shared with the answer pool
    double alpha = 7.5;    // survival sharpness
    uint64_t seed = 0;     // survival draw stream
};

/// Splits an effective budget over branches in rank order: floor share for
/// everyone, remainder to the first `effective % n` branches. Zero-share
/// branches starve out.
inline std::vector<int> allocate_budget(int effective, int n_branches) {
    if (n_branches <= 0) throw NoActiveBranches();
    if (effective < 0) effective = 0;
    const int base = effective / n_branches;
    const int extra = effective % n_branches;
    std::vector<int> m(static_cast<size_t>(n_branches), base);
    for (int i = 0; i < extra; ++i) ++m[static_cast<size_t>(i)];
    return m;
}

/// P(survive) = (s / s_best)^alpha. At alpha >= 1e6 the power underflows for
/// any ratio < 1, so the draw is short-circuited to exact 0/1: only branches
/// matching the best score live.
inline double survival_probability(int s_max, int s_best, double alpha) {
    if (s_best <= 0) return 0.0;
    if (s_max >= s_best) return 1.0;
    if (alpha >= 1e6) return 0.0;
    return std::pow(static_cast<double>(s_max) / static_cast<double>(s_best), alpha);
}

/// Deterministic uniform stream for survival draws: top 53 bits of
/// mt19937_64 scaled to [0,1). Never std::uniform_real_distribution, whose
/// output is implementation-defined.
class SurvivalRng {
public:
    explicit SurvivalRng(uint64_t seed) : eng_(seed) {}
    double next_uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

private:
    std::mt19937_64 eng_;
};

struct VoteOutcome {
    std::string answer;  // first raw answer of the winning bucket
    std::string key;     // its normalized form
    int count = 0;
};

/// Majority vote over normalized answers. Ties go to the bucket whose first
/// member arrived earliest.
inline VoteOutcome majority_vote(const std::vector<std::string>& pool) {
    if (pool.empty()) throw NoAnswer();
    struct Bucket {
        int count = 0;
        size_t first = 0;
        std::string raw;
    };
    std::map<std::string, Bucket> buckets;
    for (size_t i = 0; i < pool.size(); ++i) {
        const std::string key = normalize_answer(pool[i]);
        auto [it, inserted] = buckets.try_emplace(key);
        if (inserted) {
            it->second.first = i;
            it->second.raw = pool[i];
        }
        ++it->second.count;
    }
    const Bucket* best = nullptr;
    std::string best_key;
    for (const auto& [key, b] : buckets) {
        if (!best || b.count > best->count || (b.count == best->count && b.first < best->first)) {
            best = &b;
            best_key = key;
        }
    }
    return VoteOutcome{best->raw, best_key, best->count};
}

/// Queries deduplicated within one scheduler iteration: first occurrence
/// fixes the slot order, repeats return the same slot so the caller can
/// overwrite per-slot payload (last emission wins).
class UniqueQueryTable {
public:
    size_t upsert(const std::string& query) {
        auto [it, inserted] = index_.try_emplace(query, order_.size());
        if (inserted) order_.push_back(query);
        return it->second;
    }
    const std::vector<std::string>& queries() const { return order_; }
    size_t size() const { return order_.size(); }

private:
    std::vector<std::string> order_;
    std::map<std::string, size_t> index_;
};

struct ScheduleResult {
    bool answered = false;            // false: pool was empty at termination
    std::string final_answer;
    VoteOutcome vote;
    std::vector<std::string> pool;    // raw answers in arrival order
    std::vector<Document> retrieved;  // raw retrieval output across all rounds
    int iterations = 0;
    CallStats stats;
    std::vector<nlohmann::json> trace;  // per-iteration records, then a final record
};

namespace detail {

/// Shared tail of both schedulers: vote if anything answered, and close the
/// trace with the outcome. An empty pool is a failed run, not an exception,
/// so the caller still gets the stats and the trace.
inline void finish_schedule(ScheduleResult& result) {
    if (!result.pool.empty()) {
        result.vote = majority_vote(result.pool);
        result.final_answer = result.vote.answer;
        result.answered = true;
    }
    result.trace.push_back({{"final",
                             {{"answered", result.answered},
                              {"answer", result.vote.answer},
                              {"key", result.vote.key},
                              {"count", result.vote.count},
                              {"pool", result.pool},
                              {"iterations_run", result.iterations}}}});
}

}  // namespace detail

namespace detail {

struct TtsBranch {
    std::string context;
    std::string query;  // creating query, "" for the root
    int s_max = 0;
    double logit = -std::numeric_limits<double>::infinity();
};

inline void write_trace_jsonl(const std::vector<nlohmann::json>& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for write: " + path);
    for (const auto& rec : trace) out << rec.dump() << "\n";
    if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

/// Relevance-guided scaling. Each iteration re-splits the remaining budget
/// over the live branches (best relevance first), expands them, dedupes the
/// emitted queries globally so each is reranked once, then keeps each branch
/// with probability (s_max / s_best)^alpha. Answers retire budget into the
/// pool; the vote runs when the budget, the branches, or the turn cap runs
/// out. An empty pool yields answered = false, never an exception.
inline ScheduleResult run_relevance_guided(Backend& generator, Backend& reranker_backend,
                                           const Retriever& retriever,
                                           const PromptTemplate& generator_tmpl,
                                           const PromptTemplate& reranker_tmpl,
                                           const std::string& question, const RunConfig& cfg,
                                           const TtsConfig& tts) {
    ScheduleResult result;
    SurvivalRng rng(tts.seed);
    const RerankOptions ropts = rerank_options(cfg);

    std::vector<detail::TtsBranch> branches;
    branches.push_back({make_base_context(generator_tmpl, question), "", 0,
                        -std::numeric_limits<double>::infinity()});

    for (int iteration = 0; iteration < cfg.max_turns; ++iteration) {
        if (branches.empty()) break;
        const int effective = tts.budget_n - static_cast<int>(result.pool.size());
        if (effective <= 0) break;

        std::stable_sort(branches.begin(), branches.end(),
                         [](const detail::TtsBranch& a, const detail::TtsBranch& b) {
                             if (a.s_max != b.s_max) return a.s_max > b.s_max;
                             return a.logit > b.logit;
                         });
        std::vector<int> alloc = allocate_budget(effective, static_cast<int>(branches.size()));

        nlohmann::json record;
        record["iteration"] = iteration;
        record["budget"] = effective;
        nlohmann::json allocations = nlohmann::json::array();
        for (size_t i = 0; i < branches.size(); ++i)
            allocations.push_back({{"branch", branches[i].query}, {"m", alloc[i]}});
        record["allocations"] = std::move(allocations);

        // expansion: every continuation answers, searches, or dies
        UniqueQueryTable table;
        std::vector<detail::TtsBranch> children;  // slot-indexed via table
        nlohmann::json answers = nlohmann::json::array();
        int dead = 0;
        for (size_t i = 0; i < branches.size(); ++i) {
            for (int rep = 0; rep < alloc[i]; ++rep) {
                CompletionResponse emission =
                    generate_step(generator, branches[i].context, cfg.generator, &result.stats);
                rrr::detail::ActionSpan span = rrr::detail::parse_action_span(emission.text);
                if (std::holds_alternative<FinalAnswer>(span.action)) {
                    const std::string& ans = std::get<FinalAnswer>(span.action).answer;
                    result.pool.push_back(ans);
                    answers.push_back(ans);
                    continue;
                }
                if (std::holds_alternative<std::monostate>(span.action)) {
                    ++dead;
                    continue;
                }
                const std::string& query = std::get<SearchQuery>(span.action).query;
                detail::TtsBranch child;
                child.context = branches[i].context;
                if (!span.prefix.empty())
                    append_segment(child.context,
                                   Segment{SegmentKind::Reasoning, span.prefix, span.prefix});
                append_segment(child.context, Segment{SegmentKind::Search, query, span.raw_span});
                child.query = query;
                size_t slot = table.upsert(query);
                if (slot == children.size())
                    children.push_back(std::move(child));
                else
                    children[slot] = std::move(child);  // duplicate query: last emission wins
            }
        }
        record["answers"] = std::move(answers);
        record["dead"] = dead;

        // one global rerank per unique query
        nlohmann::json child_records = nlohmann::json::array();
        std::vector<char> viable(children.size(), 0);
        for (size_t slot = 0; slot < children.size(); ++slot) {
            detail::TtsBranch& child = children[slot];
            RetrievalResult retrieved = retriever.search(child.query, cfg.n_docs);
            result.stats.retrieved_docs += static_cast<int64_t>(retrieved.docs.size());
            for (const auto& [doc, score] : retrieved.docs) result.retrieved.push_back(doc);
            if (retrieved.docs.empty()) {
                child_records.push_back({{"query", child.query}, {"dropped", "no_documents"}});
                continue;
            }
            RerankRound round;
            try {
                round = rerank(reranker_backend, reranker_tmpl, question, retrieved, ropts,
                               &result.stats);
            } catch (const AllJudgmentsFailed&) {
                child_records.push_back({{"query", child.query}, {"dropped", "rerank_failed"}});
                continue;
            }
            child.s_max = round.s_max;
            child.logit = round.l_of_smax;
            append_segment(child.context, info_segment_from_round(round));
            viable[slot] = 1;
            child_records.push_back({{"query", child.query}, {"s_max", child.s_max}});
        }

        int s_best = 0;
        for (size_t slot = 0; slot < children.size(); ++slot)
            if (viable[slot]) s_best = std::max(s_best, children[slot].s_max);

        // survival draws in slot order; one uniform per viable child
        std::vector<detail::TtsBranch> survivors;
        for (size_t slot = 0; slot < children.size(); ++slot) {
            if (!viable[slot]) continue;
            const double p = survival_probability(children[slot].s_max, s_best, tts.alpha);
            const double u = rng.next_uniform();
            const bool z = u < p;
            auto& rec = child_records[slot];  // one record per slot, same order
            if (std::isfinite(children[slot].logit)) rec["l"] = children[slot].logit;
            rec["p_survive"] = p;
            rec["z"] = z ? 1 : 0;
            if (z) survivors.push_back(std::move(children[slot]));
        }
        record["children"] = std::move(child_records);
        if (s_best > 0) record["s_best"] = s_best;
        record["pool_size"] = result.pool.size();
        result.trace.push_back(std::move(record));
        ++result.iterations;
        branches = std::move(survivors);
    }

    detail::finish_schedule(result);
    return result;
}

/// Naive majority vote: n_branches chains advance in lockstep with no
/// pruning and no budget re-allocation. With unique_extraction, identical
/// queries within one turn share a single rerank round; without it, every
/// branch pays for its own round even on duplicate queries.
inline ScheduleResult run_naive_mv(Backend& generator, Backend& reranker_backend,
                                   const Retriever& retriever,
                                   const PromptTemplate& generator_tmpl,
                                   const PromptTemplate& reranker_tmpl,
                                   const std::string& question, const RunConfig& cfg,
                                   int n_branches, bool unique_extraction) {
    if (n_branches <= 0) throw NoActiveBranches();
    ScheduleResult result;
    const RerankOptions ropts = rerank_options(cfg);

    std::vector<detail::TtsBranch> branches(
        static_cast<size_t>(n_branches),
        detail::TtsBranch{make_base_context(generator_tmpl, question), "", 0,
                          -std::numeric_limits<double>::infinity()});
    std::vector<char> live(branches.size(), 1);

    for (int turn = 1; turn <= cfg.max_turns; ++turn) {
        int n_live = 0;
        for (char l : live) n_live += l;
        if (n_live == 0) break;

        nlohmann::json record;
        record["turn"] = turn;
        record["live"] = n_live;
        nlohmann::json answers = nlohmann::json::array();
        int dead = 0;

        // expansion phase: one emission per live branch
        std::vector<std::pair<size_t, std::string>> searches;  // (branch, query)
        for (size_t i = 0; i < branches.size(); ++i) {
            if (!live[i]) continue;
            CompletionResponse emission =
                generate_step(generator, branches[i].context, cfg.generator, &result.stats);
            rrr::detail::ActionSpan span = rrr::detail::parse_action_span(emission.text);
            if (!span.prefix.empty())
                append_segment(branches[i].context,
                               Segment{SegmentKind::Reasoning, span.prefix, span.prefix});
            if (std::holds_alternative<FinalAnswer>(span.action)) {
                const std::string& ans = std::get<FinalAnswer>(span.action).answer;
                result.pool.push_back(ans);
                answers.push_back(ans);
                live[i] = 0;
                continue;
            }
            if (std::holds_alternative<std::monostate>(span.action)) {
                ++dead;
                live[i] = 0;
                continue;
            }
            const std::string& query = std::get<SearchQuery>(span.action).query;
            append_segment(branches[i].context,
                           Segment{SegmentKind::Search, query, span.raw_span});
            searches.emplace_back(i, query);
        }

        // rerank phase
        auto run_round = [&](const std::string& query) -> std::optional<RerankRound> {
            RetrievalResult retrieved = retriever.search(query, cfg.n_docs);
            result.stats.retrieved_docs += static_cast<int64_t>(retrieved.docs.size());
            for (const auto& [doc, score] : retrieved.docs) result.retrieved.push_back(doc);
            if (retrieved.docs.empty()) return std::nullopt;
            try {
                return rerank(reranker_backend, reranker_tmpl, question, retrieved, ropts,
                              &result.stats);
            } catch (const AllJudgmentsFailed&) {
                return std::nullopt;
            }
        };
        nlohmann::json queries = nlohmann::json::array();
        if (unique_extraction) {
            UniqueQueryTable table;
            for (const auto& [i, q] : searches) table.upsert(q);
            std::map<std::string, std::optional<Segment>> info;
            for (const auto& q : table.queries()) {
                queries.push_back(q);
                auto round = run_round(q);
                info[q] = round ? std::optional<Segment>(info_segment_from_round(*round))
                                : std::nullopt;
            }
            for (const auto& [i, q] : searches) {
                const auto& seg = info[q];
                if (seg)
                    append_segment(branches[i].context, *seg);
                else
                    live[i] = 0;
            }
        } else {
            for (const auto& [i, q] : searches) {
                queries.push_back(q);
                auto round = run_round(q);
                if (round)
                    append_segment(branches[i].context, info_segment_from_round(*round));
                else
                    live[i] = 0;
            }
        }

        record["queries"] = std::move(queries);
        record["answers"] = std::move(answers);
        record["dead"] = dead;
        record["pool_size"] = result.pool.size();
        result.trace.push_back(std::move(record));
        ++result.iterations;
    }

    detail::finish_schedule(result);
    return result;
}

inline void write_trace_jsonl(const ScheduleResult& result, const std::string& path) {
    detail::write_trace_jsonl(result.trace, path);
}

}  // namespace rrr
