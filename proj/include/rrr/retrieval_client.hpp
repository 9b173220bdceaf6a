#pragma once

#include <chrono>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "rrr/errors.hpp"
#include "rrr/model_client.hpp"
#include "rrr/retrieval.hpp"

namespace rrr {

struct RemoteRetrieverConfig {
    std::string base_url;
    std::string path = "/search";
    int timeout_ms = 10000;
    RetryPolicy retry;
};

/// Retriever over HTTP. Request: {"query","n"}; response: {"docs":[{"id",
/// "title","text","score"}...]}, already ranked. Retries transport failures
/// and 5xx, then throws RetrieverUnavailable.
class RemoteRetriever : public Retriever {
public:
    explicit RemoteRetriever(RemoteRetrieverConfig cfg) : cfg_(std::move(cfg)) {}

    RetrievalResult search(const std::string& query, int n) const override {
        nlohmann::json body = {{"query", query}, {"n", n}};
        const std::string payload = body.dump();
        int backoff_ms = cfg_.retry.initial_backoff_ms;
        std::string last_error;
        for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
            httplib::Client cli(cfg_.base_url);
            cli.set_connection_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
            cli.set_read_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
            auto res = cli.Post(cfg_.path, payload, "application/json");
            if (!res) {
                last_error = httplib::to_string(res.error());
            } else if (res->status >= 500) {
                last_error = "status " + std::to_string(res->status);
            } else if (res->status != 200) {
                throw RetrieverUnavailable(cfg_.base_url + ": status " +
                                           std::to_string(res->status));
            } else {
                return parse_result(res->body, query, n);
            }
            if (attempt < cfg_.retry.max_attempts) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
                backoff_ms = static_cast<int>(backoff_ms * cfg_.retry.multiplier);
            }
        }
        throw RetrieverUnavailable(cfg_.base_url + ": " + last_error);
    }

private:
    RetrievalResult parse_result(const std::string& body, const std::string& query, int n) const {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("bad retrieval JSON: ") + e.what());
        }
        if (!j.contains("docs") || !j["docs"].is_array())
            throw ProtocolError("retrieval response has no docs array");
        RetrievalResult result;
        result.query = query;
        for (const auto& d : j["docs"]) {
            Document doc{d.value("id", std::string()), d.value("title", std::string()),
                         d.value("text", std::string())};
            result.docs.emplace_back(std::move(doc), d.value("score", 0.0));
        }
        result.is_short = result.docs.size() < static_cast<size_t>(n);
        return result;
    }

    RemoteRetrieverConfig cfg_;
};

}  // namespace rrr
