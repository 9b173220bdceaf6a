#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "rrr/errors.hpp"
#include "rrr/http_backend.hpp"
#include "rrr/orchestrator.hpp"
#include "rrr/retrieval.hpp"
#include "rrr/retrieval_client.hpp"
#include "rrr/tts.hpp"

namespace rrr {

struct BackendConfig {
    std::string kind;    // "scripted" | "http"; empty = backend absent
    std::string script;  // scripted: response file
    HttpBackendConfig http;
};

struct RetrievalConfig {
    std::string kind = "bm25";  // "bm25" | "remote"
    std::string corpus;         // bm25: JSONL corpus to build from
    std::string index;          // bm25: prebuilt index file (preferred over corpus)
    Bm25Params params;
    RemoteRetrieverConfig remote;
};

struct PromptPaths {
    std::string generator;
    std::string reranker;
    std::string judge;
};

struct EvalSettings {
    std::string ra = "rule";     // "rule" | "judge"; judge adds the second attribution arm
    std::string qrels;           // ranking eval judgments (TREC format)
    std::string candidates;      // optional per-query candidate lists; empty = retrieve
    int rerank_depth = 100;      // candidates pulled per query before reranking
    int ndcg_cutoff = 10;
    double train_fraction = 0.9; // distillation train share, must be in (0, 1)
    int distill_top_m = 50;      // docs retrieved per question for distillation pairs
};

struct EngineConfig {
    BackendConfig generator;
    BackendConfig reranker;
    BackendConfig judge;
    RetrievalConfig retrieval;
    PromptPaths prompts;
    RunConfig run;
    TtsConfig tts;
    EvalSettings eval;
};

namespace detail {

/// Paths in a config resolve against the config file's directory, so fixture
/// configs stay relocatable.
inline std::string resolve_path(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return p;
    std::filesystem::path fp(p);
    if (fp.is_absolute()) return p;
    return (base / fp).lexically_normal().string();
}

template <typename T>
T get_field(const nlohmann::json& j, const std::string& section, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(section + "." + key, "wrong type");
    }
}

inline BackendConfig parse_backend(const nlohmann::json& j, const std::string& section,
                                   const std::filesystem::path& base) {
    BackendConfig b;
    b.kind = get_field<std::string>(j, section, "kind", "");
    if (b.kind == "scripted") {
        b.script = resolve_path(base, get_field<std::string>(j, section, "script", ""));
        if (b.script.empty()) throw ConfigError(section + ".script", "required for scripted backend");
    } else if (b.kind == "http") {
        b.http.base_url = get_field<std::string>(j, section, "base_url", "");
        if (b.http.base_url.empty()) throw ConfigError(section + ".base_url", "required for http backend");
        b.http.path = get_field<std::string>(j, section, "path", b.http.path);
        b.http.model = get_field<std::string>(j, section, "model", "");
        b.http.api_key_env = get_field<std::string>(j, section, "api_key_env", "");
        b.http.timeout_ms = get_field<int>(j, section, "timeout_ms", b.http.timeout_ms);
        b.http.retry.max_attempts = get_field<int>(j, section, "max_attempts", b.http.retry.max_attempts);
        b.http.retry.initial_backoff_ms =
            get_field<int>(j, section, "initial_backoff_ms", b.http.retry.initial_backoff_ms);
    } else if (!b.kind.empty()) {
        throw ConfigError(section + ".kind", "unknown backend kind: " + b.kind);
    }
    return b;
}

inline SamplingParams parse_sampling(const nlohmann::json& j, const std::string& section,
                                     SamplingParams defaults) {
    SamplingParams s = defaults;
    s.temperature = get_field<double>(j, section, "temperature", s.temperature);
    s.top_p = get_field<double>(j, section, "top_p", s.top_p);
    s.max_tokens = get_field<int>(j, section, "max_tokens", s.max_tokens);
    if (s.temperature < 0.0) throw ConfigError(section + ".temperature", "must be >= 0");
    if (s.top_p <= 0.0 || s.top_p > 1.0) throw ConfigError(section + ".top_p", "must be in (0, 1]");
    if (s.max_tokens < 1) throw ConfigError(section + ".max_tokens", "must be >= 1");
    return s;
}

}  // namespace detail

inline EngineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    using detail::get_field;
    EngineConfig cfg;

    if (j.contains("backends")) {
        const auto& b = j.at("backends");
        if (b.contains("generator"))
            cfg.generator = detail::parse_backend(b.at("generator"), "backends.generator", base_dir);
        if (b.contains("reranker"))
            cfg.reranker = detail::parse_backend(b.at("reranker"), "backends.reranker", base_dir);
        if (b.contains("judge"))
            cfg.judge = detail::parse_backend(b.at("judge"), "backends.judge", base_dir);
    }

    if (j.contains("retrieval")) {
        const auto& r = j.at("retrieval");
        cfg.retrieval.kind = get_field<std::string>(r, "retrieval", "kind", cfg.retrieval.kind);
        if (cfg.retrieval.kind == "bm25") {
            cfg.retrieval.corpus =
                detail::resolve_path(base_dir, get_field<std::string>(r, "retrieval", "corpus", ""));
            cfg.retrieval.index =
                detail::resolve_path(base_dir, get_field<std::string>(r, "retrieval", "index", ""));
            cfg.retrieval.params.k1 = get_field<double>(r, "retrieval", "k1", cfg.retrieval.params.k1);
            cfg.retrieval.params.b = get_field<double>(r, "retrieval", "b", cfg.retrieval.params.b);
            if (!(cfg.retrieval.params.k1 > 0.0)) throw ConfigError("retrieval.k1", "must be > 0");
            if (cfg.retrieval.params.b < 0.0 || cfg.retrieval.params.b > 1.0)
                throw ConfigError("retrieval.b", "must be in [0, 1]");
        } else if (cfg.retrieval.kind == "remote") {
            cfg.retrieval.remote.base_url = get_field<std::string>(r, "retrieval", "base_url", "");
            if (cfg.retrieval.remote.base_url.empty())
                throw ConfigError("retrieval.base_url", "required for remote retrieval");
            cfg.retrieval.remote.path =
                get_field<std::string>(r, "retrieval", "path", cfg.retrieval.remote.path);
            cfg.retrieval.remote.timeout_ms =
                get_field<int>(r, "retrieval", "timeout_ms", cfg.retrieval.remote.timeout_ms);
        } else {
            throw ConfigError("retrieval.kind", "unknown retrieval kind: " + cfg.retrieval.kind);
        }
    }

    if (j.contains("prompts")) {
        const auto& p = j.at("prompts");
        cfg.prompts.generator =
            detail::resolve_path(base_dir, get_field<std::string>(p, "prompts", "generator", ""));
        cfg.prompts.reranker =
            detail::resolve_path(base_dir, get_field<std::string>(p, "prompts", "reranker", ""));
        cfg.prompts.judge =
            detail::resolve_path(base_dir, get_field<std::string>(p, "prompts", "judge", ""));
    }

    if (j.contains("run")) {
        const auto& r = j.at("run");
        cfg.run.n_docs = get_field<int>(r, "run", "n_docs", cfg.run.n_docs);
        cfg.run.top_k = get_field<int>(r, "run", "top_k", cfg.run.top_k);
        cfg.run.max_turns = get_field<int>(r, "run", "max_turns", cfg.run.max_turns);
        cfg.run.resample_on_parse_failure =
            get_field<bool>(r, "run", "resample_on_parse_failure", cfg.run.resample_on_parse_failure);
        if (r.contains("generator"))
            cfg.run.generator = detail::parse_sampling(r.at("generator"), "run.generator", cfg.run.generator);
        if (r.contains("reranker"))
            cfg.run.reranker = detail::parse_sampling(r.at("reranker"), "run.reranker", cfg.run.reranker);
        if (cfg.run.n_docs < 1) throw ConfigError("run.n_docs", "must be >= 1");
        if (cfg.run.top_k < 1) throw ConfigError("run.top_k", "must be >= 1");
        if (cfg.run.max_turns < 1) throw ConfigError("run.max_turns", "must be >= 1");
    }

    if (j.contains("tts")) {
        const auto& t = j.at("tts");
        cfg.tts.budget_n = get_field<int>(t, "tts", "budget_n", cfg.tts.budget_n);
        cfg.tts.alpha = get_field<double>(t, "tts", "alpha", cfg.tts.alpha);
        cfg.tts.seed = get_field<uint64_t>(t, "tts", "seed", cfg.tts.seed);
        if (cfg.tts.budget_n < 1) throw ConfigError("tts.budget_n", "must be >= 1");
        if (cfg.tts.alpha < 0.0) throw ConfigError("tts.alpha", "must be >= 0");
    }

    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        cfg.eval.ra = get_field<std::string>(e, "eval", "ra", cfg.eval.ra);
        if (cfg.eval.ra != "rule" && cfg.eval.ra != "judge")
            throw ConfigError("eval.ra", "must be rule or judge");
        cfg.eval.qrels = detail::resolve_path(base_dir, get_field<std::string>(e, "eval", "qrels", ""));
        cfg.eval.candidates =
            detail::resolve_path(base_dir, get_field<std::string>(e, "eval", "candidates", ""));
        cfg.eval.rerank_depth = get_field<int>(e, "eval", "rerank_depth", cfg.eval.rerank_depth);
        cfg.eval.ndcg_cutoff = get_field<int>(e, "eval", "ndcg_cutoff", cfg.eval.ndcg_cutoff);
        cfg.eval.train_fraction =
            get_field<double>(e, "eval", "train_fraction", cfg.eval.train_fraction);
        cfg.eval.distill_top_m = get_field<int>(e, "eval", "distill_top_m", cfg.eval.distill_top_m);
        if (cfg.eval.rerank_depth < 1) throw ConfigError("eval.rerank_depth", "must be >= 1");
        if (cfg.eval.ndcg_cutoff < 1) throw ConfigError("eval.ndcg_cutoff", "must be >= 1");
        if (!(cfg.eval.train_fraction > 0.0) || !(cfg.eval.train_fraction < 1.0))
            throw ConfigError("eval.train_fraction", "must be in (0, 1)");
        if (cfg.eval.distill_top_m < 1) throw ConfigError("eval.distill_top_m", "must be >= 1");
    }

    return cfg;
}

inline EngineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path, "cannot open config file");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path, std::string("invalid JSON: ") + e.what());
    }
    return parse_config(j, std::filesystem::path(path).parent_path());
}

}  // namespace rrr
