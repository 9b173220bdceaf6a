#pragma once

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "rrr/errors.hpp"
#include "rrr/model_client.hpp"

namespace rrr {

struct HttpBackendConfig {
    std::string base_url;  // e.g. "http://127.0.0.1:8089"
    std::string path = "/v1/completions";
    std::string model;
    std::string api_key_env;  // env var holding the bearer token; empty = none
    int timeout_ms = 30000;
    RetryPolicy retry;
};

/// Completions-style HTTP backend. Request: {"model","prompt","temperature",
/// "top_p","max_tokens","stop","logprobs":0}. Expects choices[0] with "text",
/// "finish_reason", optional "logprobs":{"tokens":[...],"token_logprobs":[...]}.
/// Transport failures and 5xx responses retry with exponential backoff; any
/// other non-200 fails immediately.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {}

    CompletionResponse complete(const CompletionRequest& req) override {
        nlohmann::json body = {
            {"model", cfg_.model},
            {"prompt", req.prompt},
            {"temperature", req.temperature},
            {"top_p", req.top_p},
            {"max_tokens", req.max_tokens},
        };
        if (!req.stop.empty()) body["stop"] = req.stop;
        if (req.want_logprobs) body["logprobs"] = 0;

        httplib::Headers headers;
        if (!cfg_.api_key_env.empty()) {
            const char* key = std::getenv(cfg_.api_key_env.c_str());
            if (key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);
        }

        const std::string payload = body.dump();
        int backoff_ms = cfg_.retry.initial_backoff_ms;
        std::string last_error;
        for (int attempt = 1; attempt <= cfg_.retry.max_attempts; ++attempt) {
            httplib::Client cli(cfg_.base_url);
            cli.set_connection_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
            cli.set_read_timeout(std::chrono::milliseconds(cfg_.timeout_ms));
            auto res = cli.Post(cfg_.path, headers, payload, "application/json");
            if (!res) {
                if (res.error() == httplib::Error::ConnectionTimeout ||
                    res.error() == httplib::Error::Read)
                    last_error = "timeout";
                else
                    last_error = httplib::to_string(res.error());
            } else if (res->status >= 500) {
                last_error = "status " + std::to_string(res->status);
            } else if (res->status != 200) {
                throw BackendError(res->status, cfg_.model + ": " + res->body);
            } else {
                return parse_response(res->body, req);
            }
            if (attempt < cfg_.retry.max_attempts) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
                backoff_ms = static_cast<int>(backoff_ms * cfg_.retry.multiplier);
            }
        }
        if (last_error == "timeout") throw BackendTimeout(cfg_.model + ": " + cfg_.base_url);
        throw BackendError(0, cfg_.model + ": exhausted retries (" + last_error + ")");
    }

    std::string name() const override { return cfg_.model.empty() ? cfg_.base_url : cfg_.model; }

private:
    CompletionResponse parse_response(const std::string& body, const CompletionRequest& req) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw ProtocolError(std::string("bad completion JSON: ") + e.what());
        }
        if (!j.contains("choices") || j["choices"].empty())
            throw ProtocolError("completion response has no choices");
        const auto& c = j["choices"][0];
        CompletionResponse resp;
        resp.text = c.value("text", std::string());
        resp.finish_reason = finish_reason_from_string(c.value("finish_reason", "stop"));
        if (c.contains("logprobs") && c["logprobs"].is_object()) {
            const auto& lp = c["logprobs"];
            if (lp.contains("tokens") && lp.contains("token_logprobs")) {
                const auto& toks = lp["tokens"];
                const auto& vals = lp["token_logprobs"];
                for (size_t i = 0; i < toks.size() && i < vals.size(); ++i) {
                    if (vals[i].is_null()) continue;
                    resp.token_logprobs.push_back(
                        {toks[i].get<std::string>(), vals[i].get<double>()});
                }
            }
        }
        apply_stop(resp, req.stop);
        return resp;
    }

    HttpBackendConfig cfg_;
};

}  // namespace rrr
