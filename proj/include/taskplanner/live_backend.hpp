#pragma once

#include "taskplanner/llm_gateway.hpp"

#include <httplib.h>

namespace taskplanner::llm {

/// OpenAI-compatible chat-completion client. Every exchange is appended to
/// `http_log()` with the API key redacted.
class LiveBackend : public Backend {
public:
    explicit LiveBackend(LiveConfig cfg) : cfg_(std::move(cfg))
    {
        if (cfg_.base_url.empty()) throw LlmError(ErrorKind::TransportError, "no base URL configured");
    }

    std::string complete(const CompletionRequest& req) override
    {
        auto body = chat_completion_body(cfg_, req).dump();
        httplib::Client client(cfg_.base_url);
        client.set_connection_timeout(cfg_.timeout_seconds, 0);
        client.set_read_timeout(cfg_.timeout_seconds, 0);
        httplib::Headers headers;
        if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

        log("POST " + cfg_.base_url + cfg_.path + "\nAuthorization: " + redacted() + "\n\n" + body);
        auto res = client.Post(cfg_.path, headers, body, "application/json");
        if (!res) throw LlmError(ErrorKind::TransportError, "request failed: " + httplib::to_string(res.error()));
        log("HTTP " + std::to_string(res->status) + "\n\n" + res->body);
        if (res->status != 200)
            throw LlmError(ErrorKind::TransportError, "HTTP status " + std::to_string(res->status));

        auto parsed = json::parse(res->body, nullptr, false);
        if (parsed.is_discarded() || !parsed.contains("choices") || parsed["choices"].empty())
            throw LlmError(ErrorKind::TransportError, "unexpected response body");
        const auto& msg = parsed["choices"][0]["message"];
        if (!msg.contains("content") || !msg["content"].is_string())
            throw LlmError(ErrorKind::TransportError, "response has no message content");
        return msg["content"].get<std::string>();
    }

    std::string kind() const override { return "live"; }

    std::vector<std::string> http_log() const
    {
        std::lock_guard lock(mutex_);
        return log_;
    }

private:
    std::string redacted() const { return cfg_.api_key.empty() ? "(none)" : "Bearer [REDACTED]"; }

    void log(std::string entry)
    {
        if (!cfg_.api_key.empty()) {
            for (auto pos = entry.find(cfg_.api_key); pos != std::string::npos; pos = entry.find(cfg_.api_key, pos))
                entry.replace(pos, cfg_.api_key.size(), "[REDACTED]");
        }
        std::lock_guard lock(mutex_);
        log_.push_back(std::move(entry));
    }

    LiveConfig cfg_;
    mutable std::mutex mutex_;
    std::vector<std::string> log_;
};

inline std::unique_ptr<Backend> make_live_backend(LiveConfig cfg)
{
    return std::make_unique<LiveBackend>(std::move(cfg));
}

} // namespace taskplanner::llm
