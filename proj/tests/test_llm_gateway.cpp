#include <gtest/gtest.h>

#include "taskplanner/live_backend.hpp"
#include "taskplanner/llm_gateway.hpp"

#include <httplib.h>

#include <thread>

using namespace taskplanner;
using namespace taskplanner::llm;

namespace {

CompletionRequest request(std::string node, std::string rendered)
{
    CompletionRequest r;
    r.node_name = std::move(node);
    r.rendered_observation = std::move(rendered);
    r.observation = json{{"user_input", r.rendered_observation}};
    return r;
}

json random_object(Rng& rng, int depth = 0)
{
    static const std::vector<std::string> words{"reasoning", "decision", "Set_Recipe", "no_op", "R1", "it's", "a \"b\"", "x{y}"};
    json o = json::object();
    auto n = 1 + rng.below(4);
    for (std::size_t i = 0; i < n; ++i) {
        auto key = words[rng.below(words.size())] + std::to_string(i);
        switch (rng.below(depth < 2 ? 5 : 3)) {
        case 0: o[key] = words[rng.below(words.size())]; break;
        case 1: o[key] = static_cast<int>(rng.below(100)); break;
        case 2: o[key] = rng.below(2) == 0; break;
        case 3: o[key] = random_object(rng, depth + 1); break;
        default: o[key] = json::array({words[rng.below(words.size())], static_cast<int>(rng.below(9))});
        }
    }
    return o;
}

// Single-quoted rendering of an object whose strings contain no single quotes.
std::string single_quoted(const json& j)
{
    if (j.is_object()) {
        std::string out = "{";
        bool first = true;
        for (const auto& [k, v] : j.items()) {
            if (!first) out += ", ";
            first = false;
            out += "'" + k + "': " + single_quoted(v);
        }
        return out + "}";
    }
    if (j.is_array()) {
        std::string out = "[";
        for (std::size_t i = 0; i < j.size(); ++i) out += (i ? ", " : "") + single_quoted(j[i]);
        return out + "]";
    }
    if (j.is_string()) return "'" + j.get<std::string>() + "'";
    return j.dump();
}

bool quote_free(const json& j)
{
    if (j.is_string()) return j.get<std::string>().find_first_of("'\"\\") == std::string::npos;
    if (j.is_object())
        for (const auto& [k, v] : j.items())
            if (k.find_first_of("'\"\\") != std::string::npos || !quote_free(v)) return false;
    if (j.is_array())
        for (const auto& v : j)
            if (!quote_free(v)) return false;
    return true;
}

} // namespace

TEST(ExtractJson, ProseAroundObject)
{
    auto j = extract_json("Sure! {\"reasoning\":\"x\",\"decision\":\"Set_Recipe\"} hope that helps");
    EXPECT_EQ(j.at("decision"), "Set_Recipe");
}

TEST(ExtractJson, CodeFence)
{
    auto j = extract_json("```json\n{\"a\": [1, 2]}\n```");
    EXPECT_EQ(j.at("a"), json::array({1, 2}));
}

TEST(ExtractJson, SingleQuotesRepaired)
{
    auto j = extract_json("{'decision': 'No_op'}");
    EXPECT_EQ(j.at("decision"), "No_op");
}

TEST(ExtractJson, ApostropheInProseDoesNotOpenQuote)
{
    auto j = extract_json("Here's the answer: {\"msg\": \"it's fine\"}");
    EXPECT_EQ(j.at("msg"), "it's fine");
}

TEST(ExtractJson, ValidOutputIsNeverRewritten)
{
    auto j = extract_json(R"({"msg": "say 'hi' to R1"})");
    EXPECT_EQ(j.at("msg"), "say 'hi' to R1");
}

TEST(ExtractJson, ErrorsAreClassified)
{
    auto kind_of = [](std::string_view s) {
        try {
            extract_json(s);
        } catch (const LlmError& e) {
            return e.kind();
        }
        ADD_FAILURE() << "no error for " << s;
        return ErrorKind::TransportError;
    };
    EXPECT_EQ(kind_of("no object here"), ErrorKind::NoJsonFound);
    EXPECT_EQ(kind_of("{\"a\": {\"b\": 1}"), ErrorKind::UnbalancedBraces);
    EXPECT_EQ(kind_of("{a: 1}"), ErrorKind::MalformedJson);
}

TEST(ExtractJson, RoundTripsWrappedObjects)
{
    Rng rng(5);
    static const std::vector<std::string> prefixes{"", "Here you go:\n", "```json\n", "Answer -> "};
    static const std::vector<std::string> suffixes{"", "\n```", "\nLet me know!", " }"};
    for (int i = 0; i < 1000; ++i) {
        auto obj = random_object(rng);
        auto text = prefixes[rng.below(prefixes.size())] + obj.dump(rng.below(2) ? 2 : -1) + suffixes[rng.below(suffixes.size())];
        ASSERT_EQ(extract_json(text), obj) << text;
    }
}

// Oracle: the strict parser applied to the object before it was mutated.
TEST(ExtractJson, SingleQuoteMutationsRecoverOriginal)
{
    Rng rng(6);
    int checked = 0;
    for (int i = 0; i < 1000; ++i) {
        auto obj = random_object(rng);
        if (!quote_free(obj)) continue;
        auto original = json::parse(obj.dump());
        ASSERT_EQ(extract_json("Result: " + single_quoted(obj)), original);
        ++checked;
    }
    EXPECT_GT(checked, 100);
}

TEST(ExtractJson, FuzzNeverCrashes)
{
    Rng rng(7);
    for (int i = 0; i < 5000; ++i) {
        std::string s;
        auto n = rng.below(64);
        for (std::size_t k = 0; k < n; ++k) s += "{}[]'\"\\:, ab1\n"[rng.below(15)];
        try {
            auto j = extract_json(s);
            EXPECT_TRUE(j.is_object());
        } catch (const LlmError&) {
        }
    }
}

TEST(Scripted, FirstMatchWinsAndOnceRulesAreConsumed)
{
    ScriptedBackend b;
    ScriptedRule once;
    once.node = "decision";
    once.response = "first";
    once.once = true;
    b.add_rule(once);
    ScriptedRule keyed;
    keyed.node = "decision";
    keyed.when.push_back({"user_input", Predicate::Op::Contains, "SOUP"});
    keyed.response = "soup";
    b.add_rule(keyed);
    ScriptedRule fallback;
    fallback.response = "any";
    b.add_rule(fallback);

    EXPECT_EQ(b.complete(request("decision", "make soup")), "first");
    EXPECT_EQ(b.complete(request("decision", "make soup")), "soup");
    EXPECT_EQ(b.complete(request("decision", "salad")), "any");
    EXPECT_EQ(b.complete(request("other", "x")), "any");
    EXPECT_TRUE(b.has_catch_all({"decision", "other"}));
}

TEST(Scripted, NoMatchingRule)
{
    ScriptedBackend b;
    try {
        b.complete(request("decision", ""));
        FAIL();
    } catch (const LlmError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NoMatchingRule);
    }
}

TEST(Scripted, RulesFromJson)
{
    auto rules = ScriptedBackend::rules_from_json(json::parse(R"([
        {"node": "decision", "when": [{"field": "user_input", "equals": "hi"}], "response": "A"},
        {"response": "B"}])"));
    ScriptedBackend b(rules);
    EXPECT_EQ(b.complete(request("decision", " HI ")), "A");
    EXPECT_EQ(b.complete(request("decision", "hello")), "B");
}

TEST(Replay, ReturnsRecordedResponsesInOrder)
{
    ScriptedBackend source;
    int n = 0;
    ScriptedRule rule;
    rule.responder = [&n](const CompletionRequest& r) { return r.node_name + std::to_string(n++); };
    source.add_rule(rule);
    RecordingLog log;
    std::vector<CompletionRequest> reqs{request("a", "x"), request("b", "x"), request("a", "x"), request("a", "y")};
    std::vector<std::string> original;
    for (const auto& r : reqs) original.push_back(complete(r, source, &log));

    ReplayBackend replay(RecordingLog::parse_jsonl(log.to_jsonl()));
    for (std::size_t i = 0; i < reqs.size(); ++i) EXPECT_EQ(replay.complete(reqs[i]), original[i]);
    try {
        replay.complete(reqs[0]);
        FAIL();
    } catch (const LlmError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ReplayExhausted);
    }
}

TEST(Replay, HashIgnoresDecodingAndStructuredObservation)
{
    auto a = request("n", "obs");
    auto b = a;
    b.decoding.max_tokens = 7;
    b.observation = json{{"other", 1}};
    EXPECT_EQ(request_hash(a), request_hash(b));
    b.rendered_observation = "obs2";
    EXPECT_NE(request_hash(a), request_hash(b));
}

TEST(Live, ChatCompletionBodyIsDeterministic)
{
    LiveConfig cfg;
    cfg.model = "m";
    auto body = chat_completion_body(cfg, request("n", "obs"));
    EXPECT_EQ(body.at("temperature"), 0);
    EXPECT_EQ(body.at("model"), "m");
    EXPECT_EQ(body.at("messages").size(), 2u);
}

TEST(Live, TalksToCompatibleServerAndRedactsKey)
{
    httplib::Server server;
    std::string seen_auth;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        json reply{{"choices", json::array({json{{"message", {{"role", "assistant"}, {"content", "{\"decision\": \"No_op\"}"}}}}})}};
        res.set_content(reply.dump(), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread t([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    LiveConfig cfg;
    cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
    cfg.api_key = "sk-secret-123";
    LiveBackend backend(cfg);
    auto text = backend.complete(request("decision", "echo sk-secret-123"));
    server.stop();
    t.join();

    EXPECT_EQ(extract_json(text).at("decision"), "No_op");
    EXPECT_EQ(seen_auth, "Bearer sk-secret-123");
    for (const auto& entry : backend.http_log()) {
        EXPECT_EQ(entry.find("sk-secret-123"), std::string::npos) << entry;
    }
    EXPECT_NE(backend.http_log().front().find("[REDACTED]"), std::string::npos);
}

TEST(Live, TransportErrorWhenUnreachable)
{
    LiveConfig cfg;
    cfg.base_url = "http://127.0.0.1:1";
    cfg.timeout_seconds = 1;
    LiveBackend backend(cfg);
    try {
        backend.complete(request("n", "x"));
        FAIL();
    } catch (const LlmError& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TransportError);
    }
}

TEST(Live, ConfigFromEnvironment)
{
    setenv("TASKPLANNER_LLM_BASE_URL", "http://h:1", 1);
    setenv("TASKPLANNER_LLM_API_KEY", "k", 1);
    setenv("TASKPLANNER_LLM_MODEL", "m2", 1);
    auto c = LiveConfig::from_env();
    EXPECT_EQ(c.base_url, "http://h:1");
    EXPECT_EQ(c.api_key, "k");
    EXPECT_EQ(c.model, "m2");
    unsetenv("TASKPLANNER_LLM_BASE_URL");
    unsetenv("TASKPLANNER_LLM_API_KEY");
    unsetenv("TASKPLANNER_LLM_MODEL");
}
