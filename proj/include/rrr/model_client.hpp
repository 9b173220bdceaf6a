#pragma once

#include <algorithm>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrr/errors.hpp"
#include "rrr/text.hpp"

namespace rrr {

enum class FinishReason { Stop, Length, Error };

inline std::string to_string(FinishReason r) {
    switch (r) {
        case FinishReason::Stop: return "stop";
        case FinishReason::Length: return "length";
        default: return "error";
    }
}

inline FinishReason finish_reason_from_string(const std::string& s) {
    if (s == "stop") return FinishReason::Stop;
    if (s == "length") return FinishReason::Length;
    return FinishReason::Error;
}

struct TokenLogprob {
    std::string token;
    double logprob = 0.0;
};

struct CompletionRequest {
    std::string prompt;
    double temperature = 1.0;
    double top_p = 1.0;
    int max_tokens = 1024;
    std::vector<std::string> stop;  // matched markers are excluded from the text
    bool want_logprobs = false;
};

/// Sampling knobs a caller carries around and copies into requests.
struct SamplingParams {
    double temperature = 1.0;
    double top_p = 0.95;
    int max_tokens = 1024;
};

struct CompletionResponse {
    std::string text;  // continuation only, truncated before any stop marker
    FinishReason finish_reason = FinishReason::Stop;
    std::vector<TokenLogprob> token_logprobs;  // per raw backend token, in order
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual CompletionResponse complete(const CompletionRequest& req) = 0;
    virtual std::string name() const = 0;
};

/// Cuts `text` right before the earliest occurrence of any stop sequence,
/// mirroring server-side stop handling. token_logprobs are left untouched;
/// they describe the raw backend tokens.
inline void apply_stop(CompletionResponse& resp, const std::vector<std::string>& stop) {
    size_t cut = std::string::npos;
    for (const auto& s : stop) {
        if (s.empty()) continue;
        cut = std::min(cut, resp.text.find(s));
    }
    if (cut != std::string::npos) {
        resp.text.resize(cut);
        resp.finish_reason = FinishReason::Stop;
    }
}

struct RetryPolicy {
    int max_attempts = 3;
    int initial_backoff_ms = 500;
    double multiplier = 2.0;
};

/// One line of a response script: {"match":{"key":...},"response":{"text":...,
/// "token_logprobs":[{"token":...,"logprob":...}...]?,"finish_reason":?}}.
/// The key is either the exact prompt the entry answers or a free-form step
/// label consumed in file order.
struct ScriptEntry {
    std::string key;
    CompletionResponse response;
};

inline std::vector<ScriptEntry> load_script_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open script: " + path);
    std::vector<ScriptEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ScriptParseError(line_no, e.what());
        }
        if (!j.contains("response") || !j["response"].contains("text"))
            throw ScriptParseError(line_no, "missing response.text");
        ScriptEntry e;
        try {
            if (j.contains("match")) e.key = j["match"].value("key", std::string());
            const auto& r = j["response"];
            e.response.text = r["text"].get<std::string>();
            e.response.finish_reason = finish_reason_from_string(r.value("finish_reason", "stop"));
            if (r.contains("token_logprobs"))
                for (const auto& t : r["token_logprobs"])
                    e.response.token_logprobs.push_back(
                        {t["token"].get<std::string>(), t["logprob"].get<double>()});
        } catch (const nlohmann::json::exception& e2) {
            throw ScriptParseError(line_no, e2.what());
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

/// Deterministic stand-in backend. A call is answered by the first unconsumed
/// entry whose key equals the prompt exactly; with no exact match, the next
/// unconsumed entry in file order answers regardless of its key. Exhausting
/// the script throws ScriptExhausted. Thread-safe; concurrent callers see one
/// consistent global sequence.
class ScriptedBackend : public Backend {
public:
    explicit ScriptedBackend(std::vector<ScriptEntry> entries, std::string name = "scripted")
        : entries_(std::move(entries)), consumed_(entries_.size(), false), name_(std::move(name)) {}

    static ScriptedBackend from_file(const std::string& path, std::string name = "scripted") {
        return ScriptedBackend(load_script_jsonl(path), std::move(name));
    }

    CompletionResponse complete(const CompletionRequest& req) override {
        std::lock_guard<std::mutex> lock(mu_);
        size_t pick = entries_.size();
        for (size_t i = 0; i < entries_.size(); ++i) {
            if (!consumed_[i] && entries_[i].key == req.prompt) {
                pick = i;
                break;
            }
        }
        if (pick == entries_.size()) {
            for (size_t i = 0; i < entries_.size(); ++i) {
                if (!consumed_[i]) {
                    pick = i;
                    break;
                }
            }
        }
        if (pick == entries_.size())
            throw ScriptExhausted(name_ + ": no entry left for call " +
                                  std::to_string(calls_ + 1));
        consumed_[pick] = true;
        CompletionResponse resp = entries_[pick].response;
        if (!req.want_logprobs) resp.token_logprobs.clear();
        apply_stop(resp, req.stop);
        ++calls_;
        return resp;
    }

    std::string name() const override { return name_; }
    size_t calls() const { return calls_; }

    /// Entries not yet used; golden tests assert this hits zero.
    size_t remaining() const {
        std::lock_guard<std::mutex> lock(mu_);
        return entries_.size() - static_cast<size_t>(
            std::count(consumed_.begin(), consumed_.end(), char(1)));
    }

private:
    std::vector<ScriptEntry> entries_;
    std::vector<char> consumed_;
    std::string name_;
    size_t calls_ = 0;
    mutable std::mutex mu_;
};

}  // namespace rrr
