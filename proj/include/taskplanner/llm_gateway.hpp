#pragma once

// Uniform completion interface: scripted, record/replay and live HTTP
// backends, a recording log shared by all of them, and tolerant JSON
// extraction from model output.

#include "taskplanner/common.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace taskplanner::llm {

using json = nlohmann::json;

enum class ErrorKind {
    NoMatchingRule,
    ReplayExhausted,
    TransportError,
    NoJsonFound,
    UnbalancedBraces,
    MalformedJson,
};

inline const char* to_string(ErrorKind k)
{
    switch (k) {
    case ErrorKind::NoMatchingRule: return "NoMatchingRule";
    case ErrorKind::ReplayExhausted: return "ReplayExhausted";
    case ErrorKind::TransportError: return "TransportError";
    case ErrorKind::NoJsonFound: return "NoJsonFound";
    case ErrorKind::UnbalancedBraces: return "UnbalancedBraces";
    case ErrorKind::MalformedJson: return "MalformedJson";
    }
    return "?";
}

class LlmError : public std::runtime_error {
public:
    LlmError(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind)
    {
    }
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct Decoding {
    int max_tokens = 1024;
    bool deterministic = true;
};

struct CompletionRequest {
    std::string node_name;
    std::string system;
    std::string instructions;
    std::string rendered_observation; // canonical text form, stable field order
    Decoding decoding;
    // Structured form of the same observation. Not part of the replay hash.
    json observation = json::object();
};

/// Replay key: digest of node name and rendered observation only, so that
/// recordings survive decoding changes.
inline std::string request_hash(const CompletionRequest& req)
{
    auto h = fnv1a(req.node_name);
    h = fnv1a(std::string_view("\x1f", 1), h);
    h = fnv1a(req.rendered_observation, h);
    return hex64(h);
}

struct Recording {
    std::string request_hash;
    std::string node_name;
    std::string response_text;

    json to_json() const
    {
        return json{{"request_hash", request_hash}, {"node_name", node_name}, {"response_text", response_text}};
    }
};

/// Append-only log of every completion, in call order.
class RecordingLog {
public:
    void append(Recording r)
    {
        std::lock_guard lock(mutex_);
        records_.push_back(std::move(r));
    }

    std::vector<Recording> records() const
    {
        std::lock_guard lock(mutex_);
        return records_;
    }

    std::size_t size() const
    {
        std::lock_guard lock(mutex_);
        return records_.size();
    }

    std::string to_jsonl() const
    {
        std::lock_guard lock(mutex_);
        std::string out;
        for (const auto& r : records_) out += r.to_json().dump() + "\n";
        return out;
    }

    static std::vector<Recording> parse_jsonl(std::string_view text)
    {
        std::vector<Recording> out;
        for (const auto& line : split_lines(text)) {
            if (trim(line).empty()) continue;
            auto j = json::parse(line);
            out.push_back({j.at("request_hash").get<std::string>(), j.at("node_name").get<std::string>(),
                           j.at("response_text").get<std::string>()});
        }
        return out;
    }

private:
    mutable std::mutex mutex_;
    std::vector<Recording> records_;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string complete(const CompletionRequest& request) = 0;
    virtual std::string kind() const = 0;
};

/// Runs one completion and records it.
inline std::string complete(const CompletionRequest& request, Backend& backend, RecordingLog* log = nullptr)
{
    auto text = backend.complete(request);
    if (log) log->append({request_hash(request), request.node_name, text});
    return text;
}

// ---------------------------------------------------------------- scripted

struct Predicate {
    enum class Op { Contains, Equals };
    std::string field; // top-level key of the structured observation, or "rendered"
    Op op = Op::Contains;
    std::string value;

    bool matches(const CompletionRequest& req) const
    {
        std::string subject;
        if (field == "rendered") {
            subject = req.rendered_observation;
        } else if (req.observation.is_object() && req.observation.contains(field)) {
            const auto& v = req.observation.at(field);
            subject = v.is_string() ? v.get<std::string>() : v.dump();
        }
        if (op == Op::Equals) return to_lower(trim(subject)) == to_lower(trim(value));
        return to_lower(subject).find(to_lower(value)) != std::string::npos;
    }
};

using Responder = std::function<std::string(const CompletionRequest&)>;

struct ScriptedRule {
    std::string node = "*"; // exact node name or "*"
    std::vector<Predicate> when;
    std::string response;
    Responder responder; // takes precedence over `response` when set
    bool once = false;
    bool consumed = false;

    bool matches(const CompletionRequest& req) const
    {
        if (consumed) return false;
        if (node != "*" && node != req.node_name) return false;
        for (const auto& p : when)
            if (!p.matches(req)) return false;
        return true;
    }
};

/// Ordered rule table; first match wins.
class ScriptedBackend : public Backend {
public:
    ScriptedBackend() = default;
    explicit ScriptedBackend(std::vector<ScriptedRule> rules) : rules_(std::move(rules)) {}

    void add_rule(ScriptedRule rule)
    {
        std::lock_guard lock(mutex_);
        rules_.push_back(std::move(rule));
    }

    std::string complete(const CompletionRequest& req) override
    {
        Responder responder;
        {
            std::lock_guard lock(mutex_);
            auto it = std::find_if(rules_.begin(), rules_.end(), [&](const ScriptedRule& r) { return r.matches(req); });
            if (it == rules_.end()) throw LlmError(ErrorKind::NoMatchingRule, "no rule for node " + req.node_name);
            if (it->once) it->consumed = true;
            if (!it->responder) return it->response;
            responder = it->responder;
        }
        return responder(req);
    }

    std::string kind() const override { return "scripted"; }

    /// True iff every listed node has an unconditional, reusable rule.
    bool has_catch_all(const std::vector<std::string>& nodes) const
    {
        std::lock_guard lock(mutex_);
        for (const auto& n : nodes) {
            bool found = std::any_of(rules_.begin(), rules_.end(), [&](const ScriptedRule& r) {
                return (r.node == n || r.node == "*") && r.when.empty() && !r.once;
            });
            if (!found) return false;
        }
        return true;
    }

    /// Rules file: [{"node": "...", "when": [{"field": "...", "contains"|"equals": "..."}],
    ///               "response": "...", "once": false}]
    static std::vector<ScriptedRule> rules_from_json(const json& j)
    {
        std::vector<ScriptedRule> rules;
        for (const auto& r : j) {
            ScriptedRule rule;
            rule.node = r.value("node", "*");
            rule.response = r.at("response").get<std::string>();
            rule.once = r.value("once", false);
            for (const auto& w : r.value("when", json::array())) {
                Predicate p;
                p.field = w.at("field").get<std::string>();
                if (w.contains("equals")) {
                    p.op = Predicate::Op::Equals;
                    p.value = w.at("equals").get<std::string>();
                } else {
                    p.value = w.at("contains").get<std::string>();
                }
                rule.when.push_back(std::move(p));
            }
            rules.push_back(std::move(rule));
        }
        return rules;
    }

private:
    mutable std::mutex mutex_;
    std::vector<ScriptedRule> rules_;
};

// ------------------------------------------------------------------ replay

class ReplayBackend : public Backend {
public:
    explicit ReplayBackend(const std::vector<Recording>& records)
    {
        for (const auto& r : records) queues_[r.request_hash].push_back(r.response_text);
    }

    std::string complete(const CompletionRequest& req) override
    {
        std::lock_guard lock(mutex_);
        auto it = queues_.find(request_hash(req));
        if (it == queues_.end() || it->second.empty())
            throw LlmError(ErrorKind::ReplayExhausted, "no recorded response left for node " + req.node_name);
        auto text = std::move(it->second.front());
        it->second.pop_front();
        return text;
    }

    std::string kind() const override { return "replay"; }

private:
    std::mutex mutex_;
    std::map<std::string, std::deque<std::string>> queues_;
};

// -------------------------------------------------------------------- live

struct LiveConfig {
    std::string base_url;  // e.g. http://localhost:8000
    std::string path = "/v1/chat/completions";
    std::string api_key;
    std::string model = "gpt-4";
    int timeout_seconds = 60;

    /// TASKPLANNER_LLM_BASE_URL, TASKPLANNER_LLM_API_KEY, TASKPLANNER_LLM_MODEL
    static LiveConfig from_env()
    {
        LiveConfig c;
        if (const char* v = std::getenv("TASKPLANNER_LLM_BASE_URL")) c.base_url = v;
        if (const char* v = std::getenv("TASKPLANNER_LLM_API_KEY")) c.api_key = v;
        if (const char* v = std::getenv("TASKPLANNER_LLM_MODEL")) c.model = v;
        return c;
    }
};

/// Chat-completion body for a request. Kept separate from transport so it can
/// be inspected in tests.
inline json chat_completion_body(const LiveConfig& cfg, const CompletionRequest& req)
{
    json messages = json::array();
    messages.push_back({{"role", "system"}, {"content", req.system}});
    messages.push_back({{"role", "user"}, {"content", req.instructions + "\n\n" + req.rendered_observation}});
    json body{{"model", cfg.model}, {"messages", messages}, {"max_tokens", req.decoding.max_tokens}};
    if (req.decoding.deterministic) {
        body["temperature"] = 0;
        body["top_p"] = 1;
    }
    return body;
}

// ---------------------------------------------------------- JSON extraction

namespace detail {

// Returns [begin, end) of the first balanced {...} span, honouring quoted
// strings in either quote style.
inline std::pair<std::size_t, std::size_t> balanced_object(std::string_view text)
{
    auto start = text.find('{');
    if (start == std::string_view::npos) throw LlmError(ErrorKind::NoJsonFound, "no '{' in response");
    int depth = 0;
    char quote = 0;
    bool escape = false;
    for (std::size_t i = start; i < text.size(); ++i) {
        char c = text[i];
        if (quote) {
            if (escape)
                escape = false;
            else if (c == '\\')
                escape = true;
            else if (c == quote)
                quote = 0;
            continue;
        }
        if (c == '"' || c == '\'') {
            // an apostrophe inside a bare word is not a quote
            if (c == '\'' && i > 0 && std::isalnum(static_cast<unsigned char>(text[i - 1]))) continue;
            quote = c;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return {start, i + 1};
        }
    }
    throw LlmError(ErrorKind::UnbalancedBraces, "object starting at offset " + std::to_string(start) + " never closes");
}

// Rewrites single-quoted strings as double-quoted JSON strings.
inline std::string repair_single_quotes(std::string_view text)
{
    std::string out;
    out.reserve(text.size() + 8);
    char quote = 0;
    bool escape = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (quote == '"') {
            out += c;
            if (escape)
                escape = false;
            else if (c == '\\')
                escape = true;
            else if (c == '"')
                quote = 0;
            continue;
        }
        if (quote == '\'') {
            if (escape) {
                if (c != '\'') out += '\\';
                out += c;
                escape = false;
            } else if (c == '\\') {
                escape = true;
            } else if (c == '\'') {
                out += '"';
                quote = 0;
            } else if (c == '"') {
                out += "\\\"";
            } else {
                out += c;
            }
            continue;
        }
        if (c == '"') {
            quote = '"';
            out += c;
        } else if (c == '\'') {
            quote = '\'';
            out += '"';
        } else {
            out += c;
        }
    }
    return out;
}

} // namespace detail

/// Pulls the first JSON object out of free-form model output. Code fences
/// and surrounding prose are skipped. Single-quoted strings are repaired
/// only after a strict parse has failed.
inline json extract_json(std::string_view raw)
{
    auto [b, e] = detail::balanced_object(raw);
    auto candidate = raw.substr(b, e - b);
    auto strict = json::parse(candidate, nullptr, false);
    if (!strict.is_discarded()) return strict;
    auto repaired = json::parse(detail::repair_single_quotes(candidate), nullptr, false);
    if (!repaired.is_discarded()) return repaired;
    throw LlmError(ErrorKind::MalformedJson, "candidate object is not valid JSON");
}

} // namespace taskplanner::llm
