#pragma once

// Long-running sessions persisted as an append-only event log plus a
// snapshot of runtime data, recoverable after a restart.
//
// Layout under the service root, one directory per session:
//   config.json    creation request, resolved paths
//   events.jsonl   {seq, kind, payload} per line, append-only
//   snapshot.json  {schema_version, runtime, state} after every request

#include "taskplanner/common.hpp"
#include "taskplanner/engine.hpp"
#include "taskplanner/live_backend.hpp"
#include "taskplanner/llm_gateway.hpp"
#include "taskplanner/planner.hpp"
#include "taskplanner/scripted_policy.hpp"
#include "taskplanner/state.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

namespace taskplanner::service {

namespace fs = std::filesystem;
using json = nlohmann::json;
using planner::Event;

inline constexpr int kSchemaVersion = 1;

enum class ErrorKind { UnknownSession, AssetNotFound, InvalidConfig, EmptyMessage, CorruptLog };

inline const char* to_string(ErrorKind k)
{
    switch (k) {
    case ErrorKind::UnknownSession: return "UnknownSession";
    case ErrorKind::AssetNotFound: return "AssetNotFound";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::EmptyMessage: return "EmptyMessage";
    case ErrorKind::CorruptLog: return "CorruptLog";
    }
    return "?";
}

class ServiceError : public std::runtime_error {
public:
    ServiceError(ErrorKind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

/// Request body of session creation. Relative paths resolve against the
/// service's data directory.
struct SessionConfig {
    std::string data_dir;    // tree.json, skills.json, prompts/, recipes/
    std::string recipes_dir; // optional replacement recipe set
    std::string world;
    std::string faults;
    std::string planner_kind = "tree";
    std::string backend_kind = "scripted"; // scripted | replay | live
    std::string recordings;                // replay: recordings JSON lines
    std::uint64_t seed = 0;

    json to_json() const
    {
        return json{{"data_dir", data_dir},         {"recipes_dir", recipes_dir}, {"world", world},
                    {"faults", faults},             {"planner", planner_kind},    {"backend", backend_kind},
                    {"recordings", recordings},     {"seed", seed}};
    }

    static SessionConfig from_json(const json& j, const fs::path& default_data)
    {
        if (!j.is_object()) throw ServiceError(ErrorKind::InvalidConfig, "session config must be a JSON object");
        static const std::set<std::string> known{"data_dir", "recipes_dir", "world",      "faults",
                                                 "planner",  "backend",     "recordings", "seed"};
        for (const auto& [k, _] : j.items())
            if (!known.count(k)) throw ServiceError(ErrorKind::InvalidConfig, "unknown config field '" + k + "'");
        SessionConfig c;
        try {
            auto resolve = [&](const std::string& p, const fs::path& base) {
                if (p.empty()) return std::string();
                fs::path path(p);
                return (path.is_absolute() ? path : base / path).lexically_normal().string();
            };
            c.data_dir = resolve(j.value("data_dir", default_data.string()), default_data);
            fs::path data(c.data_dir);
            c.recipes_dir = resolve(j.value("recipes_dir", ""), data);
            c.world = resolve(j.value("world", "world.json"), data);
            c.faults = resolve(j.value("faults", "faults/none.json"), data);
            c.planner_kind = j.value("planner", c.planner_kind);
            c.backend_kind = j.value("backend", c.backend_kind);
            c.recordings = resolve(j.value("recordings", ""), data);
            c.seed = j.value("seed", std::uint64_t{0});
        } catch (const json::exception& e) {
            throw ServiceError(ErrorKind::InvalidConfig, e.what());
        }
        if (c.planner_kind != "tree" && c.planner_kind != "one-prompt")
            throw ServiceError(ErrorKind::InvalidConfig, "unknown planner '" + c.planner_kind + "'");
        if (c.backend_kind != "scripted" && c.backend_kind != "replay" && c.backend_kind != "live")
            throw ServiceError(ErrorKind::InvalidConfig, "unknown backend '" + c.backend_kind + "'");
        if (c.backend_kind == "replay" && c.recordings.empty())
            throw ServiceError(ErrorKind::InvalidConfig, "the replay backend needs a recordings file");
        auto need = [](const std::string& p, const char* what) {
            if (!p.empty() && !fs::exists(p)) throw ServiceError(ErrorKind::AssetNotFound, std::string(what) + " not found: " + p);
        };
        need(c.data_dir, "data directory");
        need((fs::path(c.data_dir) / "tree.json").string(), "tree file");
        need(c.recipes_dir, "recipe directory");
        need(c.world, "world file");
        need(c.faults, "fault file");
        need(c.recordings, "recordings file");
        return c;
    }
};

/// Everything the model side of a session needs; kept alive for the
/// lifetime of its engine.
struct SessionAssets {
    std::shared_ptr<const planner::PlannerAssets> planner;
    std::shared_ptr<const policy::CompliantPolicy> policy;
    std::unique_ptr<llm::Backend> backend;
};

inline SessionAssets make_session_assets(const SessionConfig& c)
{
    SessionAssets s;
    try {
        auto assets = planner::PlannerAssets::load(c.data_dir);
        if (!c.recipes_dir.empty()) {
            assets.recipes = recipe::RecipeLibrary::load_directory(c.recipes_dir);
            assets.render_instructions();
        }
        s.planner = std::make_shared<const planner::PlannerAssets>(std::move(assets));
    } catch (const std::exception& e) {
        throw ServiceError(ErrorKind::AssetNotFound, std::string("cannot load assets: ") + e.what());
    }
    if (c.backend_kind == "scripted") {
        auto pol = std::make_shared<const policy::CompliantPolicy>(*s.planner);
        s.policy = pol;
        s.backend = policy::make_backend([pol](const llm::CompletionRequest& r) { return pol->respond(r); });
    } else if (c.backend_kind == "replay") {
        s.backend = std::make_unique<llm::ReplayBackend>(llm::RecordingLog::parse_jsonl(read_file(c.recordings)));
    } else {
        s.backend = llm::make_live_backend(llm::LiveConfig::from_env());
    }
    return s;
}

inline std::vector<Event> read_event_log(const fs::path& path)
{
    std::vector<Event> out;
    if (!fs::exists(path)) return out;
    std::uint64_t expect = 1;
    for (const auto& line : split_lines(read_file(path))) {
        if (trim(line).empty()) continue;
        auto j = json::parse(line, nullptr, false);
        // a torn final line from a crash mid-write ends the usable log
        if (j.is_discarded()) break;
        auto e = Event::from_json(j);
        if (e.seq != expect) throw ServiceError(ErrorKind::CorruptLog, path.string() + ": sequence gap at " + std::to_string(e.seq));
        ++expect;
        out.push_back(std::move(e));
    }
    return out;
}

inline void write_atomically(const fs::path& path, const std::string& content)
{
    auto tmp = path;
    tmp += ".tmp";
    write_file(tmp, content);
    fs::rename(tmp, path);
}

/// One persisted session. Mutations serialize on the session; readers get
/// the last published snapshot without waiting for a planner call.
class Session {
public:
    /// Creates a new session, or recovers it from `dir` when `recover` is set.
    Session(std::string id, SessionConfig config, fs::path dir, bool recover)
        : id_(std::move(id)), config_(std::move(config)), dir_(std::move(dir)), parts_(make_session_assets(config_))
    {
        auto world = runtime::World::from_json(json::parse(read_file(config_.world)));
        auto faults = runtime::FaultConfig::from_json(json::parse(read_file(config_.faults)));
        engine::EngineConfig ec;
        ec.session_id = id_;
        ec.planner_kind = config_.planner_kind;
        ec.backend_kind = config_.backend_kind;
        ec.seed = config_.seed;
        engine_ = std::make_unique<engine::Engine>(*parts_.planner, std::move(world), std::move(faults), *parts_.backend, ec);
        fs::create_directories(dir_);
        if (recover) {
            auto events = read_event_log(dir_ / "events.jsonl");
            auto snap = json::parse(read_file(dir_ / "snapshot.json"));
            auto upto = snap.at("runtime").at("last_seq").get<std::uint64_t>();
            if (events.size() < upto)
                throw ServiceError(ErrorKind::CorruptLog, id_ + ": event log is shorter than its snapshot");
            // events after the last snapshot have no matching runtime data
            events.resize(upto);
            std::string text;
            for (const auto& e : events) text += e.to_json().dump() + "\n";
            if (read_file(dir_ / "events.jsonl") != text) write_atomically(dir_ / "events.jsonl", text);
            engine_->restore(events, snap.at("runtime"));
        } else {
            write_file(dir_ / "config.json", config_.to_json().dump(2) + "\n");
            std::string text;
            for (const auto& e : engine_->events()) text += e.to_json().dump() + "\n";
            write_file(dir_ / "events.jsonl", text);
        }
        published_ = engine_->events();
        log_.open(dir_ / "events.jsonl", std::ios::app);
        engine_->on_event = [this](const Event& e) {
            log_ << e.to_json().dump() << "\n";
            log_.flush();
            pending_.push_back(e);
        };
        persist();
    }

    const std::string& id() const { return id_; }
    const SessionConfig& config() const { return config_; }

    /// Appends a chat message and returns the events it produced.
    std::vector<Event> post_chat(const std::string& text)
    {
        if (trim(text).empty()) throw ServiceError(ErrorKind::EmptyMessage, "empty chat message");
        std::lock_guard lock(mutex_);
        engine_->post_user(text);
        return publish();
    }

    std::vector<Event> advance(int steps)
    {
        if (steps < 0 || steps > 100000) throw ServiceError(ErrorKind::InvalidConfig, "steps out of range");
        std::lock_guard lock(mutex_);
        engine_->advance(steps);
        return publish();
    }

    /// Last published snapshot.
    std::shared_ptr<const json> state() const { return std::atomic_load(&snapshot_); }

    /// Events with seq greater than `after`.
    std::vector<Event> events_after(std::uint64_t after) const
    {
        std::lock_guard lock(pub_mutex_);
        std::vector<Event> out;
        for (const auto& e : published_)
            if (e.seq > after) out.push_back(e);
        return out;
    }

    /// Blocks until an event with seq greater than `after` exists or the
    /// timeout passes.
    bool wait_after(std::uint64_t after, std::chrono::milliseconds timeout) const
    {
        std::unique_lock lock(pub_mutex_);
        return cv_.wait_for(lock, timeout, [&] { return !published_.empty() && published_.back().seq > after; });
    }

    std::string transcript() const
    {
        std::lock_guard lock(pub_mutex_);
        std::string out;
        for (const auto& e : published_) out += e.to_json().dump() + "\n";
        return out;
    }

    /// Full snapshot as persisted.
    json snapshot_file() const { return json::parse(read_file(dir_ / "snapshot.json")); }

private:
    json make_snapshot() const
    {
        const auto& s = engine_->state();
        auto obs = planner::observe(s);
        auto full = s.to_json();
        json chat = full.at("chat_history");
        const std::size_t recent = 20;
        json recent_chat = json::array();
        for (std::size_t i = chat.size() > recent ? chat.size() - recent : 0; i < chat.size(); ++i) recent_chat.push_back(chat[i]);
        return json{{"schema_version", kSchemaVersion},
                    {"session_id", id_},
                    {"planner_kind", config_.planner_kind},
                    {"backend_kind", config_.backend_kind},
                    {"recipe_name", s.recipe_name()},
                    {"observation", obs.to_json()},
                    {"recent_chat", recent_chat},
                    {"agents", full.at("agents")},
                    {"user_subtask_queue", s.user_queue},
                    {"completed_subtask_list", s.completed},
                    {"tick_counter", s.tick_counter},
                    {"last_seq", s.last_seq},
                    {"now", engine_->now()},
                    {"finished", engine_->finished()},
                    {"state", full}};
    }

    void persist()
    {
        auto snap = make_snapshot();
        json file{{"schema_version", kSchemaVersion}, {"runtime", engine_->runtime_snapshot()}, {"state", snap.at("state")}};
        write_atomically(dir_ / "snapshot.json", file.dump() + "\n");
        std::atomic_store(&snapshot_, std::make_shared<const json>(std::move(snap)));
    }

    /// Persists, then releases buffered events to readers, so a reader that
    /// has seen an event also finds it reflected in the snapshot.
    std::vector<Event> publish()
    {
        persist();
        auto out = std::move(pending_);
        pending_.clear();
        {
            std::lock_guard lock(pub_mutex_);
            published_.insert(published_.end(), out.begin(), out.end());
        }
        cv_.notify_all();
        return out;
    }

    std::string id_;
    SessionConfig config_;
    fs::path dir_;
    SessionAssets parts_;
    std::unique_ptr<engine::Engine> engine_;
    std::ofstream log_;
    std::mutex mutex_;
    std::vector<Event> pending_;
    mutable std::mutex pub_mutex_;
    mutable std::condition_variable cv_;
    std::vector<Event> published_;
    std::shared_ptr<const json> snapshot_;
};

class SessionService {
public:
    /// Recovers every session found under `root`.
    SessionService(fs::path root, fs::path data_dir) : root_(std::move(root)), data_dir_(std::move(data_dir))
    {
        fs::create_directories(root_);
        std::vector<fs::path> dirs;
        for (const auto& entry : fs::directory_iterator(root_))
            if (entry.is_directory() && fs::exists(entry.path() / "config.json") && fs::exists(entry.path() / "snapshot.json"))
                dirs.push_back(entry.path());
        std::sort(dirs.begin(), dirs.end());
        for (const auto& d : dirs) {
            auto id = d.filename().string();
            auto cfg_j = json::parse(read_file(d / "config.json"));
            SessionConfig cfg;
            cfg.data_dir = cfg_j.value("data_dir", "");
            cfg.recipes_dir = cfg_j.value("recipes_dir", "");
            cfg.world = cfg_j.value("world", "");
            cfg.faults = cfg_j.value("faults", "");
            cfg.planner_kind = cfg_j.value("planner", "tree");
            cfg.backend_kind = cfg_j.value("backend", "scripted");
            cfg.recordings = cfg_j.value("recordings", "");
            cfg.seed = cfg_j.value("seed", std::uint64_t{0});
            sessions_[id] = std::make_shared<Session>(id, cfg, d, true);
            next_id_ = std::max(next_id_, parse_id(id) + 1);
        }
    }

    std::string create_session(const json& request)
    {
        auto cfg = SessionConfig::from_json(request.is_null() ? json::object() : request, data_dir_);
        std::unique_lock lock(mutex_);
        char buf[32];
        std::snprintf(buf, sizeof buf, "s%06llu", static_cast<unsigned long long>(next_id_++));
        std::string id = buf;
        sessions_[id] = std::make_shared<Session>(id, cfg, root_ / id, false);
        return id;
    }

    std::shared_ptr<Session> get(const std::string& id) const
    {
        std::shared_lock lock(mutex_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) throw ServiceError(ErrorKind::UnknownSession, "unknown session '" + id + "'");
        return it->second;
    }

    std::vector<std::string> list() const
    {
        std::shared_lock lock(mutex_);
        std::vector<std::string> out;
        for (const auto& [id, _] : sessions_) out.push_back(id);
        return out;
    }

    /// Advances every session's clock; used by the background clock.
    void advance_all(int steps)
    {
        for (const auto& id : list()) get(id)->advance(steps);
    }

    const fs::path& root() const { return root_; }

private:
    static std::uint64_t parse_id(const std::string& id)
    {
        if (id.size() < 2 || id[0] != 's') return 0;
        try {
            return std::stoull(id.substr(1));
        } catch (const std::exception&) {
            return 0;
        }
    }

    fs::path root_;
    fs::path data_dir_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t next_id_ = 1;
};

} // namespace taskplanner::service
