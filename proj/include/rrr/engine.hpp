#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rrr/config.hpp"
#include "rrr/distill.hpp"
#include "rrr/errors.hpp"
#include "rrr/eval.hpp"
#include "rrr/http_backend.hpp"
#include "rrr/model_client.hpp"
#include "rrr/orchestrator.hpp"
#include "rrr/prompts.hpp"
#include "rrr/reranker.hpp"
#include "rrr/retrieval.hpp"
#include "rrr/retrieval_client.hpp"
#include "rrr/stats.hpp"
#include "rrr/tts.hpp"

namespace rrr {

// Built-in prompt texts, used whenever a config does not point at prompt
// files. The rendered placeholders are the contract; the wording is not.
inline constexpr const char* kDefaultGeneratorPrompt =
    "You are a research assistant that answers questions by searching a document "
    "collection.\n"
    "Think step by step. When you need evidence, emit <search>your query</search> and "
    "stop.\n"
    "Retrieved passages arrive inside <information>...</information> blocks; each line "
    "gives [Doc i], an annotation, and (Relevance score: s) on a 1-5 scale.\n"
    "When the evidence suffices, emit <answer>the final short answer</answer>.\n"
    "\n"
    "Question: {question}\n";

inline constexpr const char* kDefaultRerankerPrompt =
    "Judge whether the document helps answer the search query.\n"
    "Reply with one sentence saying what the document contributes, then end with\n"
    "\"Relevance score: s\" where s is an integer from 1 (useless) to 5 (decisive).\n"
    "\n"
    "Question: {question}\n"
    "Query: {query}\n"
    "Title: {title}\n"
    "Document: {document}\n";

inline constexpr const char* kDefaultJudgePrompt =
    "Decide whether the passages below contain the answer to the question.\n"
    "Reply with exactly one word, yes or no.\n"
    "\n"
    "Question: {question}\n"
    "Gold answers: {gold}\n"
    "Passages:\n"
    "{context}\n";

struct QaItem {
    std::string id;
    std::string question;
    std::vector<std::string> golds;
};

/// Dataset rows: {"id","question","golden_answers"}. Every row must carry a
/// non-empty gold list or it could never be scored.
inline std::vector<QaItem> load_dataset_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset: " + path);
    std::vector<QaItem> items;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("dataset line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.contains("question"))
            throw IoError("dataset line " + std::to_string(line_no) + ": missing question");
        QaItem item;
        item.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>()
                                                          : j["id"].dump())
                                   : std::to_string(line_no);
        item.question = j["question"].get<std::string>();
        if (j.contains("golden_answers"))
            for (const auto& g : j["golden_answers"]) item.golds.push_back(g.get<std::string>());
        if (item.golds.empty())
            throw IoError("dataset line " + std::to_string(line_no) + ": empty golden_answers");
        items.push_back(std::move(item));
    }
    if (items.empty()) throw IoError("dataset has no rows: " + path);
    return items;
}

enum class RunMode { Single, RelevanceGuided, NaiveUnique, NaiveFull };

inline std::string to_string(RunMode m) {
    switch (m) {
        case RunMode::Single: return "single";
        case RunMode::RelevanceGuided: return "tts";
        case RunMode::NaiveUnique: return "naive-mv-uqe";
        default: return "naive-mv-full";
    }
}

inline RunMode run_mode_from_string(const std::string& s) {
    if (s == "single") return RunMode::Single;
    if (s == "tts") return RunMode::RelevanceGuided;
    if (s == "naive-mv-uqe") return RunMode::NaiveUnique;
    if (s == "naive-mv-full") return RunMode::NaiveFull;
    throw ConfigError("mode",
                      "unknown mode: " + s + " (expected single|tts|naive-mv-uqe|naive-mv-full)");
}

struct EvalRecord {
    std::string id;
    std::string question;
    std::string answer;
    std::vector<std::string> golds;
    std::string status;
    int turns = 0;
    bool em = false;
    double f1 = 0.0;
    bool ra_r = false;
    bool has_l = false;  // judge verdict parsed for this record
    bool ra_l = false;
    double reward = 0.0;
    CallStats stats;
    std::vector<nlohmann::json> trace;  // per-question trace lines, not in the report
};

inline nlohmann::json stats_to_json(const CallStats& s) {
    return {{"generator_calls", s.generator_calls},
            {"rerank_rounds", s.rerank_rounds},
            {"judge_calls", s.judge_calls},
            {"retrieved_docs", s.retrieved_docs},
            {"completion_tokens", s.completion_tokens},
            {"reranker_tokens", s.reranker_tokens}};
}

inline nlohmann::json eval_record_to_json(const EvalRecord& r) {
    nlohmann::json out = {{"question_id", r.id},
                          {"question", r.question},
                          {"prediction", r.answer},
                          {"gold", r.golds},
                          {"status", r.status},
                          {"turns", r.turns},
                          {"em", r.em ? 1 : 0},
                          {"f1", r.f1},
                          {"ra_r", r.ra_r ? 1 : 0},
                          {"reward", r.reward},
                          {"stats", stats_to_json(r.stats)}};
    if (r.has_l) out["ra_l"] = r.ra_l ? 1 : 0;
    return out;
}

/// Owns the wired-up backends, retriever, and prompt templates for one
/// configured engine. `scripted` means every live dependency is local and
/// deterministic, so reports pin wall_time_s to zero.
struct EngineRuntime {
    std::unique_ptr<Backend> generator;
    std::unique_ptr<Backend> reranker;
    std::unique_ptr<Backend> judge;
    std::unique_ptr<Retriever> retriever;
    PromptTemplate generator_tmpl;
    PromptTemplate reranker_tmpl;
    PromptTemplate judge_tmpl;
    bool scripted = false;
};

namespace detail {

inline std::unique_ptr<Backend> make_backend(const BackendConfig& b, const std::string& name) {
    if (b.kind == "scripted")
        return std::make_unique<ScriptedBackend>(load_script_jsonl(b.script), name);
    if (b.kind == "http") return std::make_unique<HttpBackend>(b.http);
    return nullptr;
}

inline PromptTemplate load_prompt(const std::string& path, const char* fallback) {
    if (path.empty()) return PromptTemplate(fallback);
    return PromptTemplate::from_file(path);
}

}  // namespace detail

inline EngineRuntime make_runtime(const EngineConfig& cfg, bool need_retriever = true) {
    EngineRuntime rt;
    rt.generator = detail::make_backend(cfg.generator, "generator");
    rt.reranker = detail::make_backend(cfg.reranker, "reranker");
    rt.judge = detail::make_backend(cfg.judge, "judge");
    if (cfg.eval.ra == "judge" && !rt.judge)
        throw ConfigError("backends.judge", "required when eval.ra is judge");

    if (need_retriever) {
        if (cfg.retrieval.kind == "remote") {
            rt.retriever = std::make_unique<RemoteRetriever>(cfg.retrieval.remote);
        } else {
            if (!cfg.retrieval.index.empty() &&
                std::filesystem::exists(cfg.retrieval.index)) {
                rt.retriever = std::make_unique<Bm25Index>(Bm25Index::load(cfg.retrieval.index));
            } else if (!cfg.retrieval.corpus.empty()) {
                rt.retriever = std::make_unique<Bm25Index>(
                    Bm25Index::build(load_corpus_jsonl(cfg.retrieval.corpus), cfg.retrieval.params));
            } else {
                throw ConfigError("retrieval", "need corpus or index for bm25 retrieval");
            }
        }
    }

    rt.generator_tmpl = detail::load_prompt(cfg.prompts.generator, kDefaultGeneratorPrompt);
    rt.reranker_tmpl = detail::load_prompt(cfg.prompts.reranker, kDefaultRerankerPrompt);
    rt.judge_tmpl = detail::load_prompt(cfg.prompts.judge, kDefaultJudgePrompt);

    auto is_local = [](const BackendConfig& b) { return b.kind.empty() || b.kind == "scripted"; };
    rt.scripted = is_local(cfg.generator) && is_local(cfg.reranker) && is_local(cfg.judge) &&
                  cfg.retrieval.kind == "bm25";
    return rt;
}

/// Startup probe: every remote dependency must answer over HTTP before work
/// begins. Any response counts, even an error status; only a transport-level
/// failure (refused, unroutable, timed out) is fatal.
inline void probe_connectivity(const EngineConfig& cfg) {
    auto reachable = [](const std::string& base_url, int timeout_ms) {
        httplib::Client cli(base_url);
        cli.set_connection_timeout(std::chrono::milliseconds(timeout_ms));
        cli.set_read_timeout(std::chrono::milliseconds(timeout_ms));
        auto res = cli.Get("/");
        return static_cast<bool>(res);
    };
    auto check_backend = [&](const BackendConfig& b, const char* which) {
        if (b.kind == "http" && !reachable(b.http.base_url, b.http.timeout_ms))
            throw BackendTimeout(std::string(which) + " unreachable at " + b.http.base_url);
    };
    check_backend(cfg.generator, "generator backend");
    check_backend(cfg.reranker, "reranker backend");
    check_backend(cfg.judge, "judge backend");
    if (cfg.retrieval.kind == "remote" &&
        !reachable(cfg.retrieval.remote.base_url, cfg.retrieval.remote.timeout_ms))
        throw RetrieverUnavailable("unreachable at " + cfg.retrieval.remote.base_url);
}

namespace detail {

/// Fills both attribution arms from the raw retrieved documents. No
/// documents means no attribution; the judge is consulted only when
/// configured, and an unparseable verdict drops the record from the judge
/// arm rather than failing the question.
inline void attribution(EngineRuntime& rt, const EngineConfig& cfg, const QaItem& item,
                        const std::vector<Document>& docs, EvalRecord& rec) {
    if (docs.empty()) {
        rec.ra_r = false;
        if (cfg.eval.ra == "judge") {
            rec.has_l = true;
            rec.ra_l = false;
        }
        return;
    }
    rec.ra_r = ra_rule(item.golds, docs);
    if (cfg.eval.ra == "judge") {
        try {
            rec.ra_l = ra_judge(*rt.judge, rt.judge_tmpl, item.question, item.golds, docs);
            rec.has_l = true;
        } catch (const JudgeParseError& e) {
            std::cerr << "warning: " << item.id << ": " << e.what() << "\n";
            rec.has_l = false;
        }
    }
}

}  // namespace detail

/// Runs one question under the chosen mode and scores it. Dependency
/// failures (exhausted scripts, dead backends) propagate; an unanswered
/// question is an ordinary failed record.
inline EvalRecord run_question(EngineRuntime& rt, const EngineConfig& cfg, RunMode mode,
                               const QaItem& item) {
    if (!rt.generator) throw ConfigError("backends.generator", "backend not configured");
    if (!rt.reranker) throw ConfigError("backends.reranker", "backend not configured");
    EvalRecord rec;
    rec.id = item.id;
    rec.question = item.question;
    rec.golds = item.golds;

    if (mode == RunMode::Single) {
        TrajectoryState t = run_trajectory(*rt.generator, *rt.reranker, *rt.retriever,
                                           rt.generator_tmpl, rt.reranker_tmpl, item.question,
                                           cfg.run, &rec.stats);
        rec.answer = t.answer;
        rec.status = to_string(t.status);
        rec.turns = t.turns_used;
        rec.em = t.status == TrajectoryStatus::Answered && exact_match(t.answer, item.golds);
        rec.f1 = t.status == TrajectoryStatus::Answered ? f1(t.answer, item.golds) : 0.0;
        detail::attribution(rt, cfg, item, t.retrieved, rec);
        rec.reward = compute_reward(t, item.golds);
        for (const auto& seg : t.segments) rec.trace.push_back(segment_to_json(seg));
        return rec;
    }

    ScheduleResult s;
    if (mode == RunMode::RelevanceGuided)
        s = run_relevance_guided(*rt.generator, *rt.reranker, *rt.retriever, rt.generator_tmpl,
                                 rt.reranker_tmpl, item.question, cfg.run, cfg.tts);
    else
        s = run_naive_mv(*rt.generator, *rt.reranker, *rt.retriever, rt.generator_tmpl,
                         rt.reranker_tmpl, item.question, cfg.run, cfg.tts.budget_n,
                         mode == RunMode::NaiveUnique);
    rec.stats = s.stats;
    rec.turns = s.iterations;
    rec.status = s.answered ? "answered" : "failed";
    if (s.answered) {
        rec.answer = s.final_answer;
        rec.em = exact_match(s.final_answer, item.golds);
        rec.f1 = f1(s.final_answer, item.golds);
    }
    detail::attribution(rt, cfg, item, s.retrieved, rec);
    // Voted answers have no single trajectory to grade for format; a correct
    // vote earns the full reward, an incorrect one only the parse floor.
    rec.reward = reward_from_flags(rec.em, rec.em, s.answered);
    rec.trace = s.trace;
    return rec;
}

struct RunReport {
    std::string dataset;
    std::string mode;
    size_t n_questions = 0;
    double em = 0.0;
    double f1_score = 0.0;
    double ra_r = 0.0;
    double ra_l = 0.0;       // mean over judge-scored records only
    int64_t ra_l_n = 0;      // how many records the judge arm covers
    CueSummary cue_summary;
    double avg_reward = 0.0;
    double avg_generator_calls = 0.0;
    double avg_reranker_calls = 0.0;   // individual judgments per question
    double avg_reranker_tokens = 0.0;  // completion tokens per reranker call
    CallStats stats;
    std::vector<EvalRecord> records;
    double wall_time_s = 0.0;
};

inline nlohmann::json cue_to_json(const CueSummary& c) {
    return {{"cue_r", c.r.defined ? nlohmann::json(c.r.value) : nlohmann::json()},
            {"cue_l", c.l.defined ? nlohmann::json(c.l.value) : nlohmann::json()},
            {"counts",
             {{"accurate_r", c.counts.accurate_r},
              {"correct_and_accurate_r", c.counts.correct_and_accurate_r},
              {"accurate_l", c.counts.accurate_l},
              {"correct_and_accurate_l", c.counts.correct_and_accurate_l}}}};
}

/// The effective run parameters, echoed so every report is self-describing.
inline nlohmann::json config_echo_json(const EngineConfig& cfg) {
    return {{"n_docs", cfg.run.n_docs},
            {"top_k", cfg.run.top_k},
            {"max_turns", cfg.run.max_turns},
            {"generator_sampling",
             {{"temperature", cfg.run.generator.temperature},
              {"top_p", cfg.run.generator.top_p},
              {"max_tokens", cfg.run.generator.max_tokens}}},
            {"reranker_sampling",
             {{"temperature", cfg.run.reranker.temperature},
              {"top_p", cfg.run.reranker.top_p},
              {"max_tokens", cfg.run.reranker.max_tokens}}},
            {"resample_on_parse_failure", cfg.run.resample_on_parse_failure},
            {"alpha", cfg.tts.alpha},
            {"budget_N", cfg.tts.budget_n},
            {"seed", cfg.tts.seed}};
}

inline nlohmann::json report_to_json(const RunReport& r, const EngineConfig& cfg) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& rec : r.records) records.push_back(eval_record_to_json(rec));
    return {{"dataset", r.dataset},
            {"mode", r.mode},
            {"n_questions", r.n_questions},
            {"em", r.em},
            {"f1", r.f1_score},
            {"ra_r", r.ra_r},
            {"ra_l", r.ra_l_n > 0 ? nlohmann::json(r.ra_l) : nlohmann::json()},
            {"cue", cue_to_json(r.cue_summary)},
            {"avg_reward", r.avg_reward},
            {"avg_generator_calls", r.avg_generator_calls},
            {"avg_reranker_calls", r.avg_reranker_calls},
            {"avg_reranker_tokens", r.avg_reranker_tokens},
            {"stats", stats_to_json(r.stats)},
            {"config_echo", config_echo_json(cfg)},
            {"records", std::move(records)},
            {"wall_time_s", r.wall_time_s}};
}

/// Scores a dataset. Scripted runtimes always execute sequentially and
/// report wall_time_s = 0.0 so identical invocations serialize to identical
/// bytes; live runtimes honor `parallel` across questions. Every question
/// reaches a terminal status, so all averages cover the full dataset.
inline RunReport run_dataset(EngineRuntime& rt, const EngineConfig& cfg, RunMode mode,
                             const std::vector<QaItem>& items, const std::string& dataset_label,
                             int parallel = 1) {
    RunReport report;
    report.dataset = dataset_label;
    report.mode = to_string(mode);
    report.n_questions = items.size();
    report.records.resize(items.size());

    const auto start = std::chrono::steady_clock::now();
    if (rt.scripted || parallel <= 1) {
        for (size_t i = 0; i < items.size(); ++i)
            report.records[i] = run_question(rt, cfg, mode, items[i]);
    } else {
        std::atomic<size_t> next{0};
        std::exception_ptr first_error;
        std::mutex err_mu;
        auto worker = [&]() {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= items.size()) return;
                try {
                    report.records[i] = run_question(rt, cfg, mode, items[i]);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        };
        std::vector<std::thread> threads;
        const size_t n_threads = std::min(static_cast<size_t>(parallel), items.size());
        for (size_t t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
        if (first_error) std::rethrow_exception(first_error);
    }
    const auto elapsed = std::chrono::steady_clock::now() - start;

    std::vector<CueRecord> cue_records;
    for (const auto& rec : report.records) {
        report.em += rec.em ? 1.0 : 0.0;
        report.f1_score += rec.f1;
        report.ra_r += rec.ra_r ? 1.0 : 0.0;
        if (rec.has_l) {
            report.ra_l += rec.ra_l ? 1.0 : 0.0;
            ++report.ra_l_n;
        }
        report.avg_reward += rec.reward;
        report.stats += rec.stats;
        cue_records.push_back({rec.em, rec.ra_r, rec.has_l, rec.ra_l});
    }
    const double n = static_cast<double>(items.size());
    report.em /= n;
    report.f1_score /= n;
    report.ra_r /= n;
    if (report.ra_l_n > 0) report.ra_l /= static_cast<double>(report.ra_l_n);
    report.avg_reward /= n;
    report.avg_generator_calls = static_cast<double>(report.stats.generator_calls) / n;
    report.avg_reranker_calls = static_cast<double>(report.stats.judge_calls) / n;
    report.avg_reranker_tokens =
        report.stats.judge_calls > 0
            ? static_cast<double>(report.stats.reranker_tokens) /
                  static_cast<double>(report.stats.judge_calls)
            : 0.0;
    report.cue_summary = cue(cue_records);
    report.wall_time_s =
        rt.scripted ? 0.0 : std::chrono::duration<double>(elapsed).count();
    return report;
}

/// Per-question trace lines in dataset order, each tagged with its question
/// id: segments for single mode, scheduler iteration records otherwise.
inline void write_run_trace(const RunReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for write: " + path);
    for (const auto& rec : report.records) {
        for (const auto& line : rec.trace) {
            nlohmann::json l = line;
            l["id"] = rec.id;
            out << l.dump() << "\n";
        }
    }
    if (!out) throw IoError("write failed: " + path);
}

namespace detail {

/// Candidate lists: JSONL {"id": query id, "docs": [doc id...]}, resolved
/// against the local corpus.
inline std::map<std::string, std::vector<std::string>> load_candidates_jsonl(
    const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open candidates: " + path);
    std::map<std::string, std::vector<std::string>> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            nlohmann::json j = nlohmann::json::parse(line);
            auto& ids = out[j.at("id").get<std::string>()];
            for (const auto& d : j.at("docs")) ids.push_back(d.get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw IoError("candidates line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace detail

/// Ranking quality before vs after verbal reranking, macro-averaged.
/// Candidates come from eval.candidates when given, else from the retriever
/// at eval.rerank_depth. The reranked order is the judgment order with
/// unparsed docs appended in their original positions. Qrels rows naming
/// docs outside a query's candidate pool are warned about and dropped, so
/// the ideal ranking is always achievable from the pool.
inline nlohmann::json run_rerank_eval(EngineRuntime& rt, const EngineConfig& cfg,
                                      const std::vector<QaItem>& items) {
    if (!rt.reranker) throw ConfigError("backends.reranker", "backend not configured");
    const auto qrels = load_qrels_trec(cfg.eval.qrels);
    RerankOptions ropts = rerank_options(cfg.run);
    ropts.top_k = cfg.eval.rerank_depth;

    std::map<std::string, std::vector<std::string>> cand;
    std::unordered_map<std::string, const Document*> by_id;
    if (!cfg.eval.candidates.empty()) {
        cand = detail::load_candidates_jsonl(cfg.eval.candidates);
        const auto* index = dynamic_cast<const Bm25Index*>(rt.retriever.get());
        if (!index)
            throw ConfigError("eval.candidates", "candidate lists need a local bm25 corpus");
        for (const auto& d : index->docs()) by_id[d.id] = &d;
    }

    nlohmann::json records = nlohmann::json::array();
    double sum_before = 0.0, sum_after = 0.0;
    CallStats stats;
    for (const auto& item : items) {
        RetrievalResult retrieved;
        if (auto ci = cand.find(item.id); ci != cand.end()) {
            retrieved.query = item.question;
            for (const auto& docid : ci->second) {
                auto it = by_id.find(docid);
                if (it == by_id.end())
                    throw ConfigError("eval.candidates", "unknown doc id: " + docid);
                retrieved.docs.emplace_back(*it->second, 0.0);
            }
        } else {
            retrieved = rt.retriever->search(item.question, cfg.eval.rerank_depth);
        }
        stats.retrieved_docs += static_cast<int64_t>(retrieved.docs.size());
        std::vector<std::string> before_ids;
        for (const auto& [doc, score] : retrieved.docs) before_ids.push_back(doc.id);

        std::vector<std::string> after_ids;
        if (!retrieved.docs.empty()) {
            RerankRound round =
                rerank(*rt.reranker, rt.reranker_tmpl, item.question, retrieved, ropts, &stats);
            std::vector<char> placed(retrieved.docs.size(), 0);
            for (int idx : round.selected) {
                after_ids.push_back(retrieved.docs[static_cast<size_t>(idx)].first.id);
                placed[static_cast<size_t>(idx)] = 1;
            }
            for (size_t i = 0; i < retrieved.docs.size(); ++i)
                if (!placed[i]) after_ids.push_back(retrieved.docs[i].first.id);
        }

        std::map<std::string, int> judged;
        bool has_judgments = false;
        if (auto qi = qrels.find(item.id); qi != qrels.end()) {
            has_judgments = true;
            const std::set<std::string> known(before_ids.begin(), before_ids.end());
            for (const auto& [docid, rel] : qi->second) {
                if (known.count(docid))
                    judged[docid] = rel;
                else
                    std::cerr << "warning: qrels for " << item.id << " reference unknown doc "
                              << docid << "; treated as relevance 0\n";
            }
        }
        const double before = ndcg_at_k(before_ids, judged, cfg.eval.ndcg_cutoff);
        const double after = ndcg_at_k(after_ids, judged, cfg.eval.ndcg_cutoff);
        sum_before += before;
        sum_after += after;
        records.push_back({{"id", item.id},
                           {"ndcg_before", before},
                           {"ndcg_after", after},
                           {"judged", has_judgments}});
    }
    const double n = static_cast<double>(items.size());
    return {{"n_queries", items.size()},
            {"cutoff", cfg.eval.ndcg_cutoff},
            {"depth", cfg.eval.rerank_depth},
            {"ndcg_before", sum_before / n},
            {"ndcg_after", sum_after / n},
            {"stats", stats_to_json(stats)},
            {"records", std::move(records)}};
}

/// Teacher-call collection over (question x top-m docs) pairs, resumable at
/// the pair cursor, followed by the filtered deterministic split. Writes
/// triplets.jsonl (full ledger), train.jsonl / holdout.jsonl (SFT pairs),
/// and stats.json; returns the stats document.
inline nlohmann::json run_distill(EngineRuntime& rt, const EngineConfig& cfg,
                                  const std::vector<QaItem>& items, const std::string& out_dir,
                                  uint64_t seed) {
    if (!rt.reranker) throw ConfigError("backends.reranker", "teacher backend not configured");
    std::filesystem::create_directories(out_dir);
    const std::string triplets_path = (std::filesystem::path(out_dir) / "triplets.jsonl").string();
    TripletWriter writer(triplets_path);

    // pair order is deterministic: dataset order, then retrieval rank
    std::vector<std::pair<const QaItem*, Document>> pairs;
    for (const auto& item : items) {
        RetrievalResult r = rt.retriever->search(item.question, cfg.eval.distill_top_m);
        for (auto& [doc, score] : r.docs) pairs.emplace_back(&item, std::move(doc));
    }

    CallStats stats;
    size_t next = writer.resume().next_pair;
    const size_t resumed_at = next;
    for (; next < pairs.size(); ++next) {
        const auto& [item, doc] = pairs[next];
        writer.append(collect_pair(*rt.reranker, rt.reranker_tmpl, item->question, doc,
                                   cfg.run.reranker, &stats),
                      next + 1);
    }

    const auto triplets = load_triplets_jsonl(triplets_path);
    const StatusCounts counts = count_statuses(triplets);
    SplitResult split = filter_and_split(triplets, cfg.eval.train_fraction, seed);
    const std::string train_path = (std::filesystem::path(out_dir) / "train.jsonl").string();
    const std::string holdout_path = (std::filesystem::path(out_dir) / "holdout.jsonl").string();
    write_sft_jsonl(split.train, train_path);
    write_sft_jsonl(split.holdout, holdout_path);

    nlohmann::json summary = {
        {"pairs_total", pairs.size()},
        {"resumed_at", resumed_at},
        {"teacher_calls", stats.judge_calls},
        {"counts",
         {{"accepted", counts.accepted},
          {"rejected_parse", counts.rejected_parse},
          {"rejected_range", counts.rejected_range},
          {"skipped", counts.skipped}}},
        {"acceptance_rate",
         counts.total() > 0
             ? static_cast<double>(counts.accepted) / static_cast<double>(counts.total())
             : 0.0},
        {"train", split.train.size()},
        {"holdout", split.holdout.size()},
        {"train_fraction", cfg.eval.train_fraction},
        {"seed", seed},
        {"triplets_path", triplets_path},
        {"train_path", train_path},
        {"holdout_path", holdout_path}};
    const std::string stats_path = (std::filesystem::path(out_dir) / "stats.json").string();
    std::ofstream stats_out(stats_path);
    if (!stats_out) throw IoError("cannot open for write: " + stats_path);
    stats_out << summary.dump(2) << "\n";
    if (!stats_out) throw IoError("write failed: " + stats_path);
    return summary;
}

inline nlohmann::json run_index_build(const EngineConfig& cfg, const std::string& out_path) {
    if (cfg.retrieval.corpus.empty())
        throw ConfigError("retrieval.corpus", "required to build an index");
    Bm25Index index = Bm25Index::build(load_corpus_jsonl(cfg.retrieval.corpus), cfg.retrieval.params);
    const std::string target = out_path.empty() ? cfg.retrieval.index : out_path;
    if (target.empty()) throw ConfigError("retrieval.index", "no output path for index");
    index.save(target);
    return {{"docs", index.size()},
            {"terms", index.vocabulary_size()},
            {"avg_doc_len", index.avg_doc_len()},
            {"path", target}};
}

}  // namespace rrr
