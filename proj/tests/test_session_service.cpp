#include <gtest/gtest.h>

#include "support/checks.hpp"
#include "taskplanner/http_api.hpp"
#include "taskplanner/session_service.hpp"

#include <httplib.h>

#include <thread>

using namespace taskplanner;
using namespace taskplanner::service;

namespace {

ErrorKind error_of(const std::function<void()>& fn)
{
    try {
        fn();
    } catch (const ServiceError& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no service error";
    return ErrorKind::CorruptLog;
}

json folded(const std::shared_ptr<Session>& s) { return planner::fold(eval::parse_transcript(s->transcript())).to_json(); }

void play(const std::shared_ptr<Session>& s)
{
    s->post_chat("Let's make a caesar salad.");
    s->advance(30);
    s->post_chat("Yes, go ahead.");
    s->advance(30);
}

} // namespace

TEST(Service, SnapshotMatchesFoldOfPublishedEvents)
{
    checks::TempDir tmp("svc-fold");
    SessionService svc(tmp.path, checks::data_dir());
    auto id = svc.create_session(json{{"seed", 3}});
    auto s = svc.get(id);
    play(s);
    auto snap = *s->state();
    EXPECT_EQ(snap.at("schema_version"), kSchemaVersion);
    EXPECT_EQ(snap.at("recipe_name"), "Caesar Salad");
    EXPECT_EQ(folded(s), snap.at("state"));
    EXPECT_EQ(snap.at("last_seq"), eval::parse_transcript(s->transcript()).back().seq);
}

TEST(Service, RestartRestoresSessions)
{
    checks::TempDir tmp("svc-restart");
    std::string id;
    json before;
    std::string transcript;
    {
        SessionService svc(tmp.path, checks::data_dir());
        id = svc.create_session(json{{"planner", "one-prompt"}, {"seed", 9}});
        play(svc.get(id));
        before = *svc.get(id)->state();
        transcript = svc.get(id)->transcript();
    }
    SessionService again(tmp.path, checks::data_dir());
    ASSERT_EQ(again.list(), std::vector<std::string>{id});
    auto s = again.get(id);
    EXPECT_EQ(*s->state(), before);
    EXPECT_EQ(s->transcript(), transcript);
    auto next = again.create_session(json::object());
    EXPECT_NE(next, id);
    s->advance(2);
    EXPECT_EQ(folded(s), s->state()->at("state"));
}

TEST(Service, SessionsAreIsolated)
{
    checks::TempDir tmp("svc-iso");
    SessionService svc(tmp.path, checks::data_dir());
    auto a = svc.get(svc.create_session(json::object()));
    auto b = svc.get(svc.create_session(json::object()));
    auto b_before = *b->state();
    play(a);
    EXPECT_EQ(*b->state(), b_before);
    EXPECT_EQ(b->state()->at("recipe_name"), "");
}

TEST(Service, ClassifiedErrors)
{
    checks::TempDir tmp("svc-err");
    SessionService svc(tmp.path, checks::data_dir());
    EXPECT_EQ(error_of([&] { svc.get("s999999"); }), ErrorKind::UnknownSession);
    EXPECT_EQ(error_of([&] { svc.create_session(json{{"planner", "magic"}}); }), ErrorKind::InvalidConfig);
    EXPECT_EQ(error_of([&] { svc.create_session(json{{"colour", "blue"}}); }), ErrorKind::InvalidConfig);
    EXPECT_EQ(error_of([&] { svc.create_session(json{{"backend", "replay"}}); }), ErrorKind::InvalidConfig);
    EXPECT_EQ(error_of([&] { svc.create_session(json{{"world", "nowhere.json"}}); }), ErrorKind::AssetNotFound);
    EXPECT_EQ(error_of([&] { svc.create_session(json::array()); }), ErrorKind::InvalidConfig);
    auto s = svc.get(svc.create_session(json::object()));
    EXPECT_EQ(error_of([&] { s->post_chat("  \n"); }), ErrorKind::EmptyMessage);
    EXPECT_EQ(error_of([&] { s->advance(-1); }), ErrorKind::InvalidConfig);
}

TEST(Service, EventsAfterIsACursor)
{
    checks::TempDir tmp("svc-cursor");
    SessionService svc(tmp.path, checks::data_dir());
    auto s = svc.get(svc.create_session(json::object()));
    auto all = s->events_after(0);
    ASSERT_EQ(all.size(), 1u);
    EXPECT_EQ(all[0].kind, "session_created");
    auto produced = s->post_chat("Let's make a caesar salad.");
    ASSERT_FALSE(produced.empty());
    auto after = s->events_after(1);
    ASSERT_EQ(after.size(), produced.size());
    for (std::size_t i = 0; i < after.size(); ++i) EXPECT_EQ(after[i].seq, produced[i].seq);
    EXPECT_TRUE(s->events_after(after.back().seq).empty());
    EXPECT_TRUE(s->wait_after(0, std::chrono::milliseconds(1)));
    EXPECT_FALSE(s->wait_after(after.back().seq, std::chrono::milliseconds(10)));
}

class Http : public ::testing::Test {
protected:
    void SetUp() override
    {
        tmp = std::make_unique<checks::TempDir>("svc-http");
        svc = std::make_unique<SessionService>(tmp->path, checks::data_dir());
        mount(server, *svc);
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    void TearDown() override
    {
        server.stop();
        thread.join();
    }

    httplib::Client client() const
    {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(10, 0);
        return c;
    }

    std::unique_ptr<checks::TempDir> tmp;
    std::unique_ptr<SessionService> svc;
    httplib::Server server;
    int port = 0;
    std::thread thread;
};

TEST_F(Http, SessionLifecycle)
{
    auto c = client();
    auto health = c.Get("/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(json::parse(health->body).at("schema_version"), kSchemaVersion);

    auto created = c.Post("/sessions", R"({"seed": 4})", "application/json");
    ASSERT_TRUE(created);
    ASSERT_EQ(created->status, 201);
    auto id = json::parse(created->body).at("session_id").get<std::string>();

    auto chat = c.Post("/sessions/" + id + "/chat", R"({"text": "Let's make a caesar salad."})", "application/json");
    ASSERT_EQ(chat->status, 200);
    EXPECT_FALSE(json::parse(chat->body).at("events").empty());

    auto adv = c.Post("/sessions/" + id + "/advance", R"({"steps": 5})", "application/json");
    ASSERT_EQ(adv->status, 200);

    auto state = json::parse(c.Get("/sessions/" + id + "/state")->body);
    EXPECT_EQ(state.at("recipe_name"), "Caesar Salad");
    auto transcript = c.Get("/sessions/" + id + "/transcript")->body;
    EXPECT_EQ(planner::fold(eval::parse_transcript(transcript)).to_json(), state.at("state"));

    auto events = json::parse(c.Get("/sessions/" + id + "/events?from=1")->body).at("events");
    EXPECT_EQ(events.front().at("seq"), 2);
    EXPECT_EQ(json::parse(c.Get("/sessions")->body).at("sessions"), json::array({id}));
}

TEST_F(Http, ErrorsMapToStatusCodes)
{
    auto c = client();
    auto missing = c.Get("/sessions/s424242/state");
    ASSERT_TRUE(missing);
    EXPECT_EQ(missing->status, 404);
    EXPECT_EQ(json::parse(missing->body).at("error"), "UnknownSession");
    auto bad = c.Post("/sessions", R"({"planner": "nope"})", "application/json");
    EXPECT_EQ(bad->status, 400);
    auto garbled = c.Post("/sessions", "{not json", "application/json");
    EXPECT_EQ(garbled->status, 400);
    auto id = json::parse(c.Post("/sessions", "{}", "application/json")->body).at("session_id").get<std::string>();
    auto empty = c.Post("/sessions/" + id + "/chat", R"({"text": ""})", "application/json");
    EXPECT_EQ(empty->status, 400);
    EXPECT_EQ(json::parse(empty->body).at("error"), "EmptyMessage");
}

TEST_F(Http, EventStreamDeliversFramesInOrder)
{
    auto id = svc->create_session(json::object());
    auto session = svc->get(id);
    std::thread poster([session] {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
        session->post_chat("Let's make a caesar salad.");
    });
    auto c = client();
    std::string body;
    httplib::Headers headers{{"Accept", "text/event-stream"}};
    c.Get("/sessions/" + id + "/events", headers, [&](const char* data, std::size_t n) {
        body.append(data, n);
        return body.find("event: recipe_set") == std::string::npos;
    });
    poster.join();
    std::vector<std::uint64_t> ids;
    for (const auto& line : split_lines(body))
        if (line.rfind("id: ", 0) == 0) ids.push_back(std::stoull(line.substr(4)));
    ASSERT_GE(ids.size(), 3u);
    for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(ids[i], i + 1);
    EXPECT_NE(body.find("event: session_created\ndata: {"), std::string::npos);
}
