#pragma once

#include <stdexcept>
#include <string>

namespace rrr {

/// Base class for every error raised by the engine. Catching rrr::Error at
/// a pipeline boundary is sufficient to convert failures into statuses.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// retrieval
struct EmptyCorpus : Error { EmptyCorpus() : Error("empty corpus") {} };
struct DuplicateDocId : Error {
    explicit DuplicateDocId(const std::string& id) : Error("duplicate doc id: " + id) {}
};
struct RetrieverUnavailable : Error {
    explicit RetrieverUnavailable(const std::string& why) : Error("retriever unavailable: " + why) {}
};
struct ProtocolError : Error {
    explicit ProtocolError(const std::string& why) : Error("protocol error: " + why) {}
};

// model client
struct BackendTimeout : Error {
    explicit BackendTimeout(const std::string& why) : Error("backend timeout: " + why) {}
};
struct BackendError : Error {
    int status = 0;
    BackendError(int http_status, const std::string& why)
        : Error("backend error (status " + std::to_string(http_status) + "): " + why),
          status(http_status) {}
};
struct ScriptExhausted : Error {
    ScriptExhausted() : Error("scripted backend exhausted") {}
    explicit ScriptExhausted(const std::string& why) : Error("scripted backend exhausted: " + why) {}
};
struct ScriptParseError : Error {
    int line = 0;
    ScriptParseError(int line_no, const std::string& why)
        : Error("script parse error at line " + std::to_string(line_no) + ": " + why),
          line(line_no) {}
};

// trajectory parsing / rendering
struct EmptySelection : Error { EmptySelection() : Error("empty selection for information block") {} };

// reranker
struct AllJudgmentsFailed : Error {
    explicit AllJudgmentsFailed(const std::string& query)
        : Error("all judgments failed to parse for query: " + query) {}
};

// scheduler
struct NoActiveBranches : Error { NoActiveBranches() : Error("no active branches with budget remaining") {} };
struct NoAnswer : Error { NoAnswer() : Error("answer pool empty at termination") {} };

// metrics
struct EmptyGold : Error { EmptyGold() : Error("empty gold answer set") {} };
struct BadCutoff : Error {
    explicit BadCutoff(int k) : Error("bad nDCG cutoff: " + std::to_string(k)) {}
};
struct JudgeParseError : Error {
    explicit JudgeParseError(const std::string& verdict)
        : Error("unparseable judge verdict: " + verdict) {}
};

// distillation
struct EmptyDataset : Error { EmptyDataset() : Error("no accepted records to split") {} };

// configuration; `path` is the JSON field path that failed validation.
struct ConfigError : Error {
    std::string path;
    ConfigError(const std::string& field_path, const std::string& why)
        : Error("config error at " + field_path + ": " + why), path(field_path) {}
};

struct IoError : Error {
    explicit IoError(const std::string& why) : Error("io error: " + why) {}
};

}  // namespace rrr
