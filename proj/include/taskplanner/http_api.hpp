#pragma once

// HTTP routes over a SessionService, plus an optional wall-clock driver.
//
//   GET  /health
//   GET  /sessions                      {"sessions": [id...]}
//   POST /sessions                      body: SessionConfig  -> 201 {"session_id", "state"}
//   GET  /sessions/{id}/state           SessionSnapshot
//   POST /sessions/{id}/chat            {"text"}             -> {"ack", "events"}
//   POST /sessions/{id}/advance         {"steps"}            -> {"events"}
//   GET  /sessions/{id}/transcript      JSON lines
//   GET  /sessions/{id}/events?from=k   {"events"}; with stream=1 or
//                                       Accept: text/event-stream, a push
//                                       stream resuming after k or Last-Event-ID

#include "taskplanner/session_service.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <string>
#include <thread>

namespace taskplanner::service {

inline int http_status(ErrorKind k)
{
    switch (k) {
    case ErrorKind::UnknownSession: return 404;
    case ErrorKind::AssetNotFound: return 422;
    case ErrorKind::InvalidConfig: return 400;
    case ErrorKind::EmptyMessage: return 400;
    case ErrorKind::CorruptLog: return 500;
    }
    return 500;
}

inline json events_json(const std::vector<Event>& events)
{
    json out = json::array();
    for (const auto& e : events) out.push_back(e.to_json());
    return out;
}

inline std::string sse_frame(const Event& e)
{
    return "id: " + std::to_string(e.seq) + "\nevent: " + e.kind + "\ndata: " + e.to_json().dump() + "\n\n";
}

inline void mount(httplib::Server& server, SessionService& svc)
{
    auto reply = [](httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };
    auto guard = [reply](auto&& fn) {
        return [fn, reply](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const ServiceError& e) {
                reply(res, http_status(e.kind()), json{{"error", to_string(e.kind())}, {"detail", e.what()}});
            } catch (const json::exception& e) {
                reply(res, 400, json{{"error", "BadRequest"}, {"detail", e.what()}});
            } catch (const std::exception& e) {
                reply(res, 500, json{{"error", "Internal"}, {"detail", e.what()}});
            }
        };
    };
    auto body_of = [](const httplib::Request& req) { return req.body.empty() ? json::object() : json::parse(req.body); };

    server.Get("/health", guard([reply](const httplib::Request&, httplib::Response& res) {
                   reply(res, 200, json{{"ok", true}, {"schema_version", kSchemaVersion}});
               }));
    server.Get("/sessions", guard([&svc, reply](const httplib::Request&, httplib::Response& res) {
                   reply(res, 200, json{{"sessions", svc.list()}});
               }));
    server.Post("/sessions", guard([&svc, reply, body_of](const httplib::Request& req, httplib::Response& res) {
                    auto id = svc.create_session(body_of(req));
                    reply(res, 201, json{{"session_id", id}, {"state", *svc.get(id)->state()}});
                }));
    server.Get("/sessions/:id/state", guard([&svc, reply](const httplib::Request& req, httplib::Response& res) {
                   reply(res, 200, *svc.get(req.path_params.at("id"))->state());
               }));
    server.Post("/sessions/:id/chat", guard([&svc, reply, body_of](const httplib::Request& req, httplib::Response& res) {
                    auto session = svc.get(req.path_params.at("id"));
                    auto body = body_of(req);
                    auto text = body.value("text", std::string());
                    auto events = session->post_chat(text);
                    reply(res, 200, json{{"ack", true}, {"events", events_json(events)}});
                }));
    server.Post("/sessions/:id/advance", guard([&svc, reply, body_of](const httplib::Request& req, httplib::Response& res) {
                    auto session = svc.get(req.path_params.at("id"));
                    auto events = session->advance(body_of(req).value("steps", 1));
                    reply(res, 200, json{{"events", events_json(events)}});
                }));
    server.Get("/sessions/:id/transcript", guard([&svc](const httplib::Request& req, httplib::Response& res) {
                   res.set_content(svc.get(req.path_params.at("id"))->transcript(), "application/x-ndjson");
               }));
    server.Get("/sessions/:id/events", guard([&svc, reply](const httplib::Request& req, httplib::Response& res) {
                   auto session = svc.get(req.path_params.at("id"));
                   std::uint64_t from = req.has_param("from") ? std::stoull(req.get_param_value("from")) : 0;
                   if (req.has_header("Last-Event-ID")) from = std::stoull(req.get_header_value("Last-Event-ID"));
                   bool stream = req.get_param_value("stream") == "1" ||
                                 req.get_header_value("Accept").find("text/event-stream") != std::string::npos;
                   if (!stream) {
                       reply(res, 200, json{{"events", events_json(session->events_after(from))}});
                       return;
                   }
                   auto cursor = std::make_shared<std::uint64_t>(from);
                   res.set_header("Cache-Control", "no-cache");
                   res.set_chunked_content_provider("text/event-stream", [session, cursor](std::size_t, httplib::DataSink& sink) {
                       if (!sink.is_writable()) return false;
                       if (!session->wait_after(*cursor, std::chrono::seconds(5))) {
                           // comment line keeps idle connections alive and detects disconnects
                           static const std::string ping = ": ping\n\n";
                           return sink.write(ping.data(), ping.size());
                       }
                       for (const auto& e : session->events_after(*cursor)) {
                           auto frame = sse_frame(e);
                           if (!sink.write(frame.data(), frame.size())) return false;
                           *cursor = e.seq;
                       }
                       return true;
                   });
               }));
}

/// Advances every session by one step per interval until stopped.
class BackgroundClock {
public:
    BackgroundClock(SessionService& svc, std::chrono::milliseconds interval) : svc_(svc), interval_(interval)
    {
        thread_ = std::thread([this] {
            while (!stop_) {
                std::this_thread::sleep_for(interval_);
                try {
                    svc_.advance_all(1);
                } catch (const std::exception&) {
                    // a failing session must not stop the clock for the others
                }
            }
        });
    }

    ~BackgroundClock()
    {
        stop_ = true;
        if (thread_.joinable()) thread_.join();
    }

    BackgroundClock(const BackgroundClock&) = delete;
    BackgroundClock& operator=(const BackgroundClock&) = delete;

private:
    SessionService& svc_;
    std::chrono::milliseconds interval_;
    std::atomic<bool> stop_{false};
    std::thread thread_;
};

} // namespace taskplanner::service
